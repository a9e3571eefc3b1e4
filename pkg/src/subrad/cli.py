"""Command-line front end.

Each subcommand reproduces one experiment family from a YAML config and
writes one CSV per observable plus a JSON manifest that fully determines the
run (resolved config, seeds, library versions, wall time).  Times are in
units of 1/gamma0 and rates in gamma0 throughout; gamma0 itself is fixed
to 1 in all I/O.

Exit codes: 0 success, 2 config error (with the offending key path),
3 numerical failure (with the violated invariant named).

Flags --seed/--workers/--out/--engine override the config; environment
variables SUBRAD_SEED, SUBRAD_WORKERS, SUBRAD_OUT and SUBRAD_ENGINE override
the flags (CI hook).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__, analytic, dicke, dynamics, protocols, qops, zeno
from .kernels import BACKEND as KERNEL_BACKEND

EXPERIMENTS = ("pse-single", "lifetime", "repeated", "purity", "zeno-sweep",
               "double-measure", "analytic-tables")

_NUMERICAL_ERRORS = (dynamics.StiffnessError, qops.UnphysicalModelError,
                     protocols.BackendMismatchError,
                     zeno.DegenerateSteadyStateError, ArithmeticError)


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# config plumbing


def _require_keys(d, allowed, required, path):
    if not isinstance(d, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"{path or '<root>'}: unknown key(s) {unknown}")
    missing = sorted(set(required) - set(d))
    if missing:
        raise ConfigError(f"{path or '<root>'}: missing required key(s) {missing}")


def _typed(d, key, types, path, default=None, required=False):
    if key not in d:
        if required:
            raise ConfigError(f"{path}: missing required key '{key}'")
        return default
    val = d[key]
    if types is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if not isinstance(val, types if isinstance(types, tuple) else (types,)) \
            or isinstance(val, bool) and types is not bool:
        raise ConfigError(f"{path}.{key}: expected {types}, got {type(val).__name__}")
    return val


def _grid(d, path, default=None):
    if d is None:
        return default
    _require_keys(d, ("start", "stop", "num", "spacing"), ("start", "stop", "num"), path)
    start = _typed(d, "start", float, path, required=True)
    stop = _typed(d, "stop", float, path, required=True)
    num = _typed(d, "num", int, path, required=True)
    spacing = _typed(d, "spacing", str, path, default="linear")
    if num < 1:
        raise ConfigError(f"{path}.num: must be >= 1")
    if spacing == "linear":
        return np.linspace(start, stop, num)
    if spacing == "log":
        if start <= 0:
            raise ConfigError(f"{path}.start: log spacing needs start > 0")
        return np.geomspace(start, stop, num)
    raise ConfigError(f"{path}.spacing: must be 'linear' or 'log'")


def _model_from(d, path, require_geometry=None):
    _require_keys(d, ("n", "geometry", "d_over_lambda0"), ("n",), path)
    n = _typed(d, "n", int, path, required=True)
    geometry = _typed(d, "geometry", str, path, default=require_geometry or "pse")
    if require_geometry and geometry != require_geometry:
        raise ConfigError(f"{path}.geometry: this experiment requires {require_geometry!r}")
    if geometry == "pse":
        if "d_over_lambda0" in d:
            raise ConfigError(f"{path}.d_over_lambda0: not meaningful for pse geometry")
        return qops.build_couplings("pse", n)
    if geometry == "waveguide":
        dval = _typed(d, "d_over_lambda0", float, path, required=True)
        if dval == 0.0:
            return qops.build_couplings("pse", n)
        return qops.build_couplings("waveguide", n, d_over_lambda0=dval)
    raise ConfigError(f"{path}.geometry: unknown geometry {geometry!r}")


def _schedule_from(d, path):
    _require_keys(d, ("site", "observable", "t_in", "rate", "times"),
                  ("site", "observable"), path)
    site = _typed(d, "site", int, path, required=True)
    observable = _typed(d, "observable", str, path, required=True)
    try:
        if "times" in d:
            if "t_in" in d or "rate" in d:
                raise ConfigError(f"{path}: give either times or (t_in, rate), not both")
            return protocols.MeasurementSchedule.discrete(site, observable, d["times"])
        t_in = _typed(d, "t_in", float, path, required=True)
        rate = _typed(d, "rate", float, path, required=True)
        return protocols.MeasurementSchedule.periodic(site, observable, t_in, rate)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _observable_set(names, n, site, path):
    known = {
        "psub_rest": lambda: dynamics.obs_psub_rest(n, site),
        "nexc_rest": lambda: dynamics.obs_nexc_rest(n, site),
        "nexc": lambda: dynamics.obs_nexc(n),
        "psub": lambda: dynamics.obs_psub(n),
        "purity_rest": lambda: dynamics.obs_purity_rest(site),
        "negativity_rest": lambda: dynamics.obs_negativity_rest(site),
    }
    out = {}
    for name in names:
        if name not in known:
            raise ConfigError(f"{path}: unknown observable {name!r} "
                              f"(choose from {sorted(known)})")
        out[name] = known[name]()
    return out


# ---------------------------------------------------------------------------
# output plumbing


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.11e}"


def _write_csv(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def _write_manifest(out_dir: Path, experiment, config, outputs, wall_time):
    manifest = {
        "experiment": experiment,
        "config": config,
        "outputs": [p.name for p in outputs],
        "wall_time_s": wall_time,
        "versions": {
            "subrad": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
        "kernel_backend": KERNEL_BACKEND,
    }
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _series_rows(times, series, sem=None, names=None):
    names = names or sorted(series)
    for k, t in enumerate(times):
        row = [t]
        for name in names:
            row.append(series[name][k])
            if sem is not None:
                row.append(sem[name][k])
        yield row


# ---------------------------------------------------------------------------
# subcommand runners; each returns the list of files written


def run_pse_single(cfg, out_dir, common):
    _require_keys(cfg, ("experiment", "model", "observables", "t_m_grid",
                        "backend", "out_dir"), ("model",), "")
    model_cfg = cfg["model"]
    _require_keys(model_cfg, ("n", "geometry"), ("n",), "model")
    n = _typed(model_cfg, "n", int, "model", required=True)
    geometry = _typed(model_cfg, "geometry", str, "model", default="pse")
    if geometry != "pse":
        raise ConfigError("model.geometry: pse-single runs on the pse geometry")
    observables = cfg.get("observables", ["z", "x"])
    for mu in observables:
        if mu not in ("z", "x"):
            raise ConfigError(f"observables: must be 'z'/'x', got {mu!r}")
    grid = _grid(cfg.get("t_m_grid"), "t_m_grid",
                 default=np.geomspace(1e-3, 10.0, 60))
    backend = _typed(cfg, "backend", str, "", default="reduced")
    files = []
    for mu in observables:
        exact = analytic.psub_ss(n, mu, grid)
        numeric = np.array([
            protocols.single_measurement_pse(n, mu, float(t), backend=backend).psub_ss
            for t in grid])
        rows = [(t, e, v, abs(e - v)) for t, e, v in zip(grid, exact, numeric)]
        files.append(_write_csv(out_dir / f"pse_single_n{n}_{mu}.csv",
                                ["t_m", "P_sub_analytic", "P_sub_numeric", "abs_diff"],
                                rows))
    return files


def run_lifetime(cfg, out_dir, common):
    _require_keys(cfg, ("experiment", "model", "observables", "site", "t_m_grid",
                        "threshold", "t_horizon", "out_dir"), ("model",), "")
    model = _model_from(cfg["model"], "model", require_geometry="waveguide")
    observables = cfg.get("observables", ["z", "x"])
    site = _typed(cfg, "site", int, "", default=1)
    threshold = _typed(cfg, "threshold", float, "", default=0.05)
    horizon = _typed(cfg, "t_horizon", float, "", default=50.0)
    grid = _grid(cfg.get("t_m_grid"), "t_m_grid",
                 default=np.geomspace(1e-3, 10.0, 60))
    run_cfg = dynamics.EvolutionConfig(t_horizon=horizon)
    files = []
    for mu in observables:
        if mu not in ("z", "x"):
            raise ConfigError(f"observables: must be 'z'/'x', got {mu!r}")
        rows = []
        for t_m in grid:
            res = protocols.lifetime_t_sub(model, mu, float(t_m), site=site,
                                           cfg=run_cfg, threshold_fraction=threshold)
            rows.append((t_m, res.t_sub, res.t_sub_um, res.ratio, res.lower_bound))
        files.append(_write_csv(out_dir / f"lifetime_{mu}.csv",
                                ["t_m", "t_sub", "t_sub_um", "ratio", "lower_bound"],
                                rows))
    return files


def run_repeated(cfg, out_dir, common):
    _require_keys(cfg, ("experiment", "model", "schedule", "engine", "n_samples",
                        "t_final", "sample_times", "observables", "include_zeno",
                        "base_seed", "workers", "out_dir"),
                  ("model", "schedule", "t_final"), "")
    model = _model_from(cfg["model"], "model")
    schedule = _schedule_from(cfg["schedule"], "schedule")
    engine = common["engine"] or _typed(cfg, "engine", str, "",
                                        default="density_nonselective")
    n_samples = _typed(cfg, "n_samples", int, "", default=1000)
    t_final = _typed(cfg, "t_final", float, "", required=True)
    times = _grid(cfg.get("sample_times"), "sample_times",
                  default=np.linspace(0.0, t_final, 201))
    names = cfg.get("observables", ["psub_rest", "nexc_rest", "nexc"])
    obs = _observable_set(names, model.n, schedule.site, "observables")
    result = protocols.repeated_measurement_run(
        model, schedule, engine, n_samples, t_final, observables=obs,
        base_seed=common["seed"], sample_times=times, workers=common["workers"])
    files = []
    for name in names:
        if result.sem is not None:
            rows = [(t, result.series[name][k], result.sem[name][k])
                    for k, t in enumerate(result.times)]
            header = ["t", name, "sem"]
        else:
            rows = [(t, result.series[name][k]) for k, t in enumerate(result.times)]
            header = ["t", name]
        files.append(_write_csv(out_dir / f"repeated_{name}.csv", header, rows))
    if cfg.get("include_zeno", False):
        if schedule.t_in is None:
            raise ConfigError("include_zeno requires a periodic schedule")
        state = zeno.zeno_initial_state(model, schedule.site, schedule.t_in)
        gen = zeno.build_zeno_generator(model, schedule.site)
        mask = times >= schedule.t_in
        ref = zeno.zeno_psub_series(state, gen, times[mask] - schedule.t_in)
        files.append(_write_csv(out_dir / "repeated_zeno.csv", ["t", "psub_rest"],
                                list(zip(times[mask], ref))))
    return files


def run_purity(cfg, out_dir, common):
    _require_keys(cfg, ("experiment", "model", "site", "rate", "t_in", "rabi",
                        "n_traj", "t_final", "sample_times", "base_seed",
                        "workers", "out_dir"),
                  ("model", "site", "rate", "rabi", "t_final"), "")
    model = _model_from(cfg["model"], "model")
    site = _typed(cfg, "site", int, "", required=True)
    rate = _typed(cfg, "rate", float, "", required=True)
    t_in = _typed(cfg, "t_in", float, "", default=0.25)
    rabi = _typed(cfg, "rabi", float, "", required=True)
    n_traj = _typed(cfg, "n_traj", int, "", default=2000)
    t_final = _typed(cfg, "t_final", float, "", required=True)
    times = _grid(cfg.get("sample_times"), "sample_times",
                  default=np.linspace(0.0, t_final, 101))
    obs = {"purity_rest": dynamics.obs_purity_rest(site),
           "negativity_rest": dynamics.obs_negativity_rest(site),
           "psub_rest": dynamics.obs_psub_rest(model.n, site)}
    sched = protocols.MeasurementSchedule.periodic(site, "x", t_in, rate)
    measured = protocols.repeated_measurement_run(
        model, sched, "mcwf", n_traj, t_final, observables=obs,
        base_seed=common["seed"], sample_times=times, workers=common["workers"])
    driven = protocols.strong_drive_run(
        model, site, rabi, t_final, n_traj, observables=obs,
        base_seed=common["seed"] + 1, sample_times=times, workers=common["workers"])
    files = []
    for tag, res in (("measured", measured), ("driven", driven)):
        for name in ("purity_rest", "negativity_rest", "psub_rest"):
            rows = [(t, res.series[name][k], res.sem[name][k])
                    for k, t in enumerate(res.times)]
            files.append(_write_csv(out_dir / f"{name}_{tag}.csv",
                                    ["t", name, "sem"], rows))
    return files


def run_zeno_sweep(cfg, out_dir, common):
    _require_keys(cfg, ("experiment", "n", "d_grid", "sites", "method",
                        "workers", "out_dir"), ("n",), "")
    n = _typed(cfg, "n", int, "", required=True)
    d_grid = _grid(cfg.get("d_grid"), "d_grid",
                   default=np.round(np.linspace(0.0, 1.0, 101), 10))
    sites = cfg.get("sites", list(range(1, n + 1)))
    method = _typed(cfg, "method", str, "", default="auto")
    sweep = zeno.zeno_sweep(n, d_grid, sites=sites, method=method,
                            workers=common["workers"])
    rows = []
    for i, s in enumerate(sweep.sites):
        for j, d in enumerate(sweep.d_values):
            rows.append((s, d, sweep.psub[i, j]))
    f = _write_csv(out_dir / "zeno_sweep.csv", ["site", "d_over_lambda0", "psub"], rows)
    return [f]


def run_double_measure(cfg, out_dir, common):
    _require_keys(cfg, ("experiment", "n", "observable", "t_m", "tau_grid",
                        "second_site", "out_dir"), ("n", "observable", "t_m"), "")
    n = _typed(cfg, "n", int, "", required=True)
    observable = _typed(cfg, "observable", str, "", required=True)
    t_m = _typed(cfg, "t_m", float, "", required=True)
    tau_grid = _grid(cfg.get("tau_grid"), "tau_grid",
                     default=np.linspace(0.0, 2.0, 21))
    variants = cfg.get("second_site", ["same", "different"])
    if isinstance(variants, str):
        variants = [variants]
    sector_keys = [tj for tj in range(n % 2, n + 1, 2)]
    files = []
    for variant in variants:
        rows = []
        for tau in tau_grid:
            res = protocols.pse_double_measurement(n, observable, t_m, float(tau),
                                                   second_site=variant)
            row = [tau, res.psub_total, res.psub_single, res.normalized]
            row += [res.sector_populations[tj] for tj in sector_keys]
            rows.append(row)
        header = (["tau", "psub_total", "psub_single", "normalized"]
                  + [f"sector_two_j_{tj}" for tj in sector_keys])
        files.append(_write_csv(out_dir / f"double_{variant}.csv", header, rows))
    return files


def run_analytic_tables(cfg, out_dir, common):
    _require_keys(cfg, ("experiment", "n", "t_grid", "out_dir"), ("n",), "")
    n = _typed(cfg, "n", int, "", required=True)
    t_grid = _grid(cfg.get("t_grid"), "t_grid", default=np.linspace(0.0, 3.0, 61))
    pk = analytic.waiting_dist(n, t_grid)
    files = [
        _write_csv(out_dir / "waiting_dist.csv",
                   ["t"] + [f"P_{k}" for k in range(n + 1)],
                   [(t, *pk[i]) for i, t in enumerate(t_grid)]),
        _write_csv(out_dir / "backaction_weights.csv", ["k", "f_z", "f_x"],
                   [(k, analytic.f_z(n, k), analytic.f_x(n, k))
                    for k in range(n + 1)]),
        _write_csv(out_dir / "reciprocity.csv", ["t_m", "residual"],
                   [(t, analytic.reciprocity_residual(n, float(t)))
                    for t in t_grid]),
    ]
    return files


_RUNNERS = {
    "pse-single": run_pse_single,
    "lifetime": run_lifetime,
    "repeated": run_repeated,
    "purity": run_purity,
    "zeno-sweep": run_zeno_sweep,
    "double-measure": run_double_measure,
    "analytic-tables": run_analytic_tables,
}


# ---------------------------------------------------------------------------
# entry point


def _env_override(name, current, cast):
    val = os.environ.get(name)
    if val is None:
        return current
    try:
        return cast(val)
    except ValueError as exc:
        raise ConfigError(f"environment variable {name}: {exc}") from None


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="subrad",
        description="Collective-emission measurement protocols: figure-grade "
                    "data generation from YAML configs.")
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", required=True, help="YAML config path")
    parser.add_argument("--seed", type=int, default=None, help="base RNG seed")
    parser.add_argument("--workers", type=int, default=None, help="worker processes")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--engine", default=None, help="engine override")
    args = parser.parse_args(argv)

    try:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                cfg = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a mapping")
        exp_tag = cfg.get("experiment")
        if exp_tag is not None and exp_tag != args.experiment:
            raise ConfigError(f"experiment: config says {exp_tag!r} but the "
                              f"subcommand is {args.experiment!r}")

        seed = args.seed if args.seed is not None else cfg.get("base_seed", 0)
        workers = args.workers if args.workers is not None else cfg.get("workers", 1)
        out = args.out if args.out is not None else cfg.get("out_dir", "results")
        engine = args.engine
        seed = _env_override("SUBRAD_SEED", seed, int)
        workers = _env_override("SUBRAD_WORKERS", workers, int)
        out = _env_override("SUBRAD_OUT", out, str)
        engine = _env_override("SUBRAD_ENGINE", engine, str)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigError("base_seed: must be an integer")
        if not isinstance(workers, int) or workers < 1:
            raise ConfigError("workers: must be a positive integer")
        common = {"seed": seed, "workers": workers, "engine": engine}

        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        started = time.perf_counter()
        files = _RUNNERS[args.experiment](cfg, out_dir, common)
        wall = time.perf_counter() - started
        resolved = dict(cfg)
        resolved["base_seed"] = seed
        resolved["workers"] = workers
        resolved["out_dir"] = str(out_dir)
        if engine:
            resolved["engine"] = engine
        manifest = _write_manifest(out_dir, args.experiment, resolved, files, wall)
        for p in files + [manifest]:
            print(p)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
