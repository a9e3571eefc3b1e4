import math

import numpy as np
import pytest

from subrad import analytic
from subrad.analytic import (
    WaitingDist, closed_form_psub_z, entropy_ss, f_x, f_z, jump_rates,
    optimal_tm_z, psub_ss, reciprocity_residual, waiting_dist,
)


def test_jump_rates():
    assert jump_rates(4) == [4, 6, 6, 4, 0]
    assert jump_rates(3) == [3, 4, 3, 0]


def test_no_jump_probability_is_exponential():
    for n in (2, 5, 9):
        for t in (0.0, 0.05, 0.4, 2.0):
            assert abs(waiting_dist(n, t)[0] - math.exp(-n * t)) < 1e-9


def test_two_emitter_distribution_closed_form():
    # degenerate rates lambda_0 = lambda_1 = 2 give the t e^{-2t} shape
    for t in (0.1, 0.5, 1.5):
        pk = waiting_dist(2, t)
        assert abs(pk[1] - 2 * t * math.exp(-2 * t)) < 1e-10


def test_all_photons_emitted_eventually():
    pk = waiting_dist(4, 30.0)
    assert abs(pk[4] - 1.0) < 1e-8
    assert np.abs(pk[:4]).max() < 1e-8


def test_normalization():
    for n in range(2, 11):
        pk = waiting_dist(n, [0.01, 0.1, 1.0, 10.0])
        assert np.abs(pk.sum(axis=1) - 1.0).max() < 1e-9


def test_monotone_front():
    ts = np.linspace(0.01, 2.0, 25)
    for n in (3, 6):
        pk = waiting_dist(n, ts)
        assert (np.diff(pk[:, 0]) < 0).all()
        assert (np.diff(pk[:, n]) > 0).all()


def test_ode_vs_exact_ilt():
    ts = np.array([0.02, 0.1, 0.3, 1.0, 3.0])
    for n in range(2, 9):
        a = waiting_dist(n, ts, "ode")
        b = waiting_dist(n, ts, "exact_ilt")
        assert np.abs(a - b).max() < 1e-7


def test_exact_ilt_refused_for_large_n():
    with pytest.raises(ValueError):
        WaitingDist(13, "exact_ilt")
    WaitingDist(12, "exact_ilt")


def test_backaction_weights():
    assert f_z(5, 0) == 0.0 and f_z(5, 5) == 0.0
    assert f_z(4, 2) == 0.5
    assert f_x(4, 0) == 0.375
    for n in (2, 3, 7):
        for k in range(n + 1):
            assert 0.0 <= f_z(n, k) <= 0.5
            # complements g = 1 - f are probabilities
            assert 0.0 <= 1.0 - f_x(n, k) <= 1.0


def test_psub_two_emitters_closed_form():
    ts = np.geomspace(1e-3, 5.0, 30)
    vals = psub_ss(2, "z", ts)
    assert np.abs(vals - ts * np.exp(-2 * ts)).max() < 1e-8
    assert np.abs(vals - closed_form_psub_z(2, ts)).max() < 1e-8


def test_psub_three_emitters_closed_form():
    ts = np.geomspace(1e-3, 4.0, 30)
    vals = psub_ss(3, "z", ts)
    expect = (4.0 / 3.0) * np.exp(-4 * ts) * (3 + np.exp(ts) * (-3 + 4 * ts))
    assert np.abs(vals - expect).max() < 1e-8


def test_psub_x_zero_time_limit():
    for n in (2, 3, 5, 8):
        assert abs(psub_ss(n, "x", 0.0) - (0.5 - 0.5 / n)) < 1e-12


def test_reciprocity_residual():
    assert abs(reciprocity_residual(2, 0.5)) < 1e-12
    assert abs(psub_ss(2, "x", 0.0) - 0.25) < 1e-12
    for n in (2, 5, 8):
        for t in np.geomspace(1e-2, 3.0, 20):
            assert abs(reciprocity_residual(n, float(t))) < 1e-10


def test_optimal_tm_two_emitters():
    t_star = optimal_tm_z(2)
    assert abs(t_star - 0.5) < 1e-5
    assert abs(psub_ss(2, "z", t_star) - 1 / (2 * math.e)) < 1e-6


def test_optimal_tm_shrinks_with_n():
    t8 = optimal_tm_z(8)
    t16 = optimal_tm_z(16)
    assert t16 < t8 < optimal_tm_z(4)


def test_entropy_ss():
    assert entropy_ss(4, 0.0) == 0.0
    a, b = 8 / 12, 4 / 12
    expect = -(a * math.log(a) + b * math.log(b))
    assert abs(entropy_ss(4, 1.0) - expect) < 1e-12
    assert abs(expect - 0.63651) < 1e-5
    limit = 2 * math.log(2) - 0.75 * math.log(3)
    assert abs(entropy_ss(10 ** 6, 1.0) - limit) < 1e-5
    assert abs(entropy_ss(6, 0.3) - 0.3 * entropy_ss(6, 1.0) / 1.0) < 1e-12
    with pytest.raises(ValueError):
        entropy_ss(5, 0.5)


def test_waiting_dist_input_validation():
    with pytest.raises(ValueError):
        waiting_dist(3, -0.1)
    with pytest.raises(ValueError):
        WaitingDist(3, "laplace")
