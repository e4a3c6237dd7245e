"""Config-driven command line: `wchaos run|validate|list-tasks`.

Configs are JSON (schema below, validated before any computation); outputs
are CSV files with fixed 17-significant-digit scientific formatting plus a
manifest carrying the config hash, seed, versions, boundary-mass
diagnostic and runtimes.  Identical config + seed gives byte-identical CSV
bodies.

Exit codes: 0 success, 1 config error (message names the offending key),
2 numerical failure (names the multi-index and step).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .basis import GaussianCoordinates, TestDirection, subseed
from .multiindex import MultiIndex, TruncationSpec
from .propagator import (SpdeProblem, TimeGrid, convergence_report,
                         level_energy, solve)
from .spatial import (InstabilityError, IntervalGrid, OperatorSpec,
                      PeriodicGrid, parabolicity_report)

FMT = "%.17e"


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"config key '{key}': {message}")
        self.key = key


def _req(d, key, ctx):
    if key not in d:
        raise ConfigError(f"{ctx}.{key}", "missing")
    return d[key]


def _field_fn(spec, ctx):
    """Declarative field: gaussian / linear / quadratic / constant."""
    if spec is None:
        return None
    kind = _req(spec, "type", ctx)
    if kind == "gaussian":
        w = float(spec.get("width", 1.0))
        c = float(spec.get("center", 0.0))
        s = float(spec.get("scale", 1.0))
        norm = bool(spec.get("normalized", False))
        if norm:
            s = s / math.sqrt(2 * math.pi * w * w)
        return lambda x: s * np.exp(-((x - c) ** 2) / (2 * w * w))
    if kind == "linear":
        sl = float(spec.get("slope", 1.0))
        ic = float(spec.get("intercept", 0.0))
        return lambda x: sl * x + ic
    if kind == "quadratic":
        s = float(spec.get("scale", 1.0))
        return lambda x: s * x**2
    if kind == "constant":
        v = float(_req(spec, "value", ctx))
        return lambda x: np.full_like(np.asarray(x, dtype=float), v)
    if kind == "tanh":
        s = float(spec.get("scale", 1.0))
        return lambda x: s * np.tanh(x / s)
    raise ConfigError(f"{ctx}.type", f"unknown field type {kind!r}")


def _chaos_data(spec, ctx):
    """Either a plain field spec or {"type": "chaos", "entries": [...]}."""
    if spec is None:
        return None
    if spec.get("type") == "chaos":
        out = {}
        for j, ent in enumerate(_req(spec, "entries", ctx)):
            pairs = [((int(i), int(k)), int(e)) for i, k, e in _req(ent, "alpha", f"{ctx}.entries[{j}]")]
            out[MultiIndex.make(pairs)] = _field_fn(_req(ent, "field", f"{ctx}.entries[{j}]"),
                                                    f"{ctx}.entries[{j}].field")
        return out
    return _field_fn(spec, ctx)


def _grid(spec, ctx):
    kind = _req(spec, "type", ctx)
    if kind == "periodic":
        return PeriodicGrid(float(_req(spec, "length", ctx)), int(_req(spec, "nx", ctx)))
    if kind == "interval":
        return IntervalGrid(float(_req(spec, "x0", ctx)), float(_req(spec, "x1", ctx)),
                            int(_req(spec, "nx", ctx)))
    raise ConfigError(f"{ctx}.type", f"unknown grid type {kind!r}")


def _trunc(spec, ctx):
    return TruncationSpec(int(_req(spec, "max_order", ctx)),
                          int(_req(spec, "n_time_modes", ctx)),
                          int(spec.get("n_channels", 1)))


def _build_problem(cfg):
    p = _req(cfg, "problem", "")
    kind = _req(p, "kind", "problem")
    grid = _grid(_req(p, "grid", "problem"), "problem.grid")
    trunc = _trunc(_req(p, "trunc", "problem"), "problem.trunc")
    tspec = _req(p, "time", "problem")
    tgrid = TimeGrid(float(_req(tspec, "horizon", "problem.time")),
                     int(_req(tspec, "steps", "problem.time")))
    if kind == "constant":
        op = OperatorSpec.constant(grid, a=float(p.get("a", 0.0)), b=float(p.get("b", 0.0)),
                                   c=float(p.get("c", 0.0)),
                                   sigma=tuple(p.get("sigma", [])), nu=tuple(p.get("nu", [])))
    elif kind == "variable":
        op = OperatorSpec.variable(grid, a=float(p.get("a", 0.0)), b=float(p.get("b", 0.0)),
                                   c=float(p.get("c", 0.0)),
                                   sigma=tuple(p.get("sigma", [])), nu=tuple(p.get("nu", [])),
                                   boundary=p.get("boundary", "dirichlet"))
    else:
        raise ConfigError("problem.kind", f"unknown kind {kind!r}")
    u0 = _chaos_data(p.get("u0"), "problem.u0")
    f = _chaos_data(p.get("f"), "problem.f")
    g = tuple(_chaos_data(gk, f"problem.g[{j}]") for j, gk in enumerate(p.get("g", [])))
    support = tuple(p["support_modes"]) if p.get("support_modes") else None
    try:
        return SpdeProblem(op=op, trunc=trunc, tgrid=tgrid, u0=u0, f=f, g=g,
                           support_modes=support)
    except ValueError as exc:
        raise ConfigError("problem", str(exc))


def _build_filter_model(cfg):
    from .filtering import FilterModel

    p = _req(cfg, "problem", "")
    m = _req(p, "model", "problem")
    grid = _grid(_req(p, "grid", "problem"), "problem.grid")
    trunc = _trunc(_req(p, "trunc", "problem"), "problem.trunc")
    tspec = _req(p, "time", "problem")
    tgrid = TimeGrid(float(_req(tspec, "horizon", "problem.time")),
                     int(_req(tspec, "steps", "problem.time")))
    model = FilterModel(
        b=_field_fn(_req(m, "b", "problem.model"), "problem.model.b"),
        sigma=float(_req(m, "sigma", "problem.model")),
        h=_field_fn(_req(m, "h", "problem.model"), "problem.model.h"),
        rho=(float(m["rho"]) if m.get("rho") else None),
        u0=_field_fn(_req(m, "prior", "problem.model"), "problem.model.prior"))
    return model, grid, trunc, tgrid


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in rows:
            wr.writerow([(FMT % v if isinstance(v, float) else v) for v in row])


TASKS = {
    "solve": "integrate the propagator; write per-coefficient norms at save times",
    "sample": "assemble pathwise field samples at the final time",
    "moments": "third/fourth moments at probe points against the quadrature oracle",
    "energy": "per-level energies F_n(t) with theoretical bounds",
    "stransform": "S-transform vs directly solved shifted PDE, residual ladder",
    "convergence": "per-level energy ratios against the geometric/factorial bounds",
    "filter": "simulate one observation path and run the chaos filter",
    "filter-study": "truncation error study of the chaos filter (N- and n-ladders)",
}


def _task_solve(cfg, outdir, seed, manifest):
    problem = _build_problem(cfg)
    task = cfg.get("task", {})
    save = task.get("save_times", [problem.tgrid.horizon])
    sol = solve(problem, save=save)
    manifest["boundary_mass"] = sol.boundary_mass
    rows = []
    for t in sol.save_times:
        for a in sol.indices:
            rows.append([FMT % t, repr(a), sol.coeff_norm(a, t)])
    _write_csv(outdir / "coefficients.csv", ["t", "alpha", "l2_norm"], rows)
    return ["coefficients.csv"]


def _task_sample(cfg, outdir, seed, manifest):
    from .chaos_field import sample_field

    problem = _build_problem(cfg)
    T = problem.tgrid.horizon
    sol = solve(problem, save=[T])
    manifest["boundary_mass"] = sol.boundary_mass
    coords = GaussianCoordinates.sample(subseed(seed, "sample-coords"),
                                        problem.trunc.n_time_modes,
                                        problem.trunc.n_channels)
    field = sample_field(sol, coords, T)
    rows = [[x, v] for x, v in zip(sol.grid.x, field)]
    _write_csv(outdir / "sample.csv", ["x", "u"], rows)
    return ["sample.csv"]


def _task_energy(cfg, outdir, seed, manifest):
    problem = _build_problem(cfg)
    task = cfg.get("task", {})
    ts = task.get("times", [problem.tgrid.horizon])
    sol = solve(problem, save=sorted({0.0, *ts}))
    manifest["boundary_mass"] = sol.boundary_mass
    rows = []
    for t in ts:
        rep = convergence_report(sol, t)
        for r in rep.rows():
            rows.append([FMT % t, r["n"], r["F_n"], r["factorial_bound"]])
    _write_csv(outdir / "energy.csv", ["t", "n", "F_n", "bound"], rows)
    return ["energy.csv"]


def _task_convergence(cfg, outdir, seed, manifest):
    problem = _build_problem(cfg)
    task = cfg.get("task", {})
    t = float(task.get("time", problem.tgrid.horizon))
    sol = solve(problem, save=sorted({0.0, t}))
    manifest["boundary_mass"] = sol.boundary_mass
    rep = convergence_report(sol, t)
    rows = []
    for r in rep.rows():
        rows.append([r["n"], r["F_n"], r["ratio"], r["geometric_ratio_bound"]])
    _write_csv(outdir / "convergence.csv", ["n", "error", "ratio", "theoretical_ratio"], rows)
    manifest["parabolicity"] = {"epsilon": rep.epsilon, "b": rep.b,
                                "classification": rep.classification}
    return ["convergence.csv"]


def _task_moments(cfg, outdir, seed, manifest):
    from .chaos_field import fourth_moment, third_moment
    from .oracle import QuadratureSpec, gh_expectation
    from .basis import hermite
    import itertools

    problem = _build_problem(cfg)
    task = cfg.get("task", {})
    T = problem.tgrid.horizon
    sol = solve(problem, save=[T])
    manifest["boundary_mass"] = sol.boundary_mass
    probes = task.get("probe_x", [0.0])
    pts = [(T, float(x)) for x in probes]

    slots = [(i, k) for i in range(1, problem.trunc.n_time_modes + 1)
             for k in range(1, problem.trunc.n_channels + 1)]
    qspec = QuadratureSpec(tuple(slots), nodes=2 * problem.trunc.max_order + 2)

    def field_at(vals, point):
        coords = np.zeros((problem.trunc.n_time_modes, problem.trunc.n_channels))
        for (i, k), v in vals.items():
            coords[i - 1, k - 1] = v
        from .basis import xi_alpha

        gc = GaussianCoordinates(coords)
        jx = int(np.argmin(np.abs(sol.grid.x - point[1])))
        total = 0.0
        for j, a in enumerate(sol.indices):
            row = sol.values_at(a, point[0])
            total += xi_alpha(a, gc) * row[jx]
        return total

    rows = []
    for order, func in ((3, third_moment), (4, fourth_moment)):
        for combo in itertools.combinations_with_replacement(range(len(pts)), order):
            chosen = [pts[c] for c in combo]
            val = func(sol, *chosen)
            oracle = gh_expectation(lambda v: math.prod(field_at(v, p) for p in chosen), qspec)
            rows.append(["-".join(map(str, combo)), order, val, oracle, abs(val - oracle)])
    _write_csv(outdir / "moments.csv", ["point_ids", "order", "value", "oracle", "abs_diff"], rows)
    return ["moments.csv"]


def _task_stransform(cfg, outdir, seed, manifest):
    from .chaos_field import s_check

    problem = _build_problem(cfg)
    task = cfg.get("task", {})
    hmag = float(task.get("h_magnitude", 0.1))
    hmodes = int(task.get("h_modes", 2))
    T = problem.tgrid.horizon
    sol = solve(problem, save=[T])
    manifest["boundary_mass"] = sol.boundary_mass
    h = TestDirection.from_entries(problem.trunc.n_time_modes, problem.trunc.n_channels,
                                   {(i, 1): hmag / hmodes for i in range(1, hmodes + 1)})
    res = s_check(sol, h, T)
    _write_csv(outdir / "stransform.csv", ["t", "residual"], [[FMT % T, res]])
    return ["stransform.csv"]


def _task_filter(cfg, outdir, seed, manifest):
    from .filtering import ObservationRecord, estimate, simulate, zakai_solve
    from .oracle import kalman_bucy

    model, grid, trunc, tgrid = _build_filter_model(cfg)
    task = cfg.get("task", {})
    T = tgrid.horizon
    n_saves = int(task.get("n_saves", 8))
    save_times = [round(tgrid.steps * j / n_saves) * tgrid.dt for j in range(1, n_saves + 1)]
    sol = zakai_solve(model, grid, trunc, tgrid, save=[0.0] + save_times)
    manifest["boundary_mass"] = sol.boundary_mass
    t_nodes, X, Y = simulate(model, T, tgrid.steps, subseed(seed, "filter-path"))
    obs = ObservationRecord(t_nodes, Y, sol.problem.basis)
    _write_csv(outdir / "observations.csv", ["t", "Y_1"],
               [[tv, yv] for tv, yv in zip(t_nodes, Y)])

    ref = None
    kcfg = task.get("kalman")
    if kcfg:
        ref = kalman_bucy(float(kcfg["a_lin"]), float(kcfg["sig"]), float(kcfg["H"]),
                          float(kcfg["m0"]), float(kcfg["P0"]), t_nodes, Y)
    est_rows = []
    flt_rows = []
    for ts in save_times:
        j = tgrid.step_of(ts)
        for fname, f in (("x", lambda x: x), ("x^2", lambda x: x * x)):
            e = estimate(sol, obs, f, ts)
            if ref is not None:
                rv = ref.mean[j] if fname == "x" else ref.mean[j] ** 2 + ref.var[j]
            else:
                rv = math.nan
            est_rows.append([FMT % ts, fname, e["unnormalized"], e["normalized"],
                             rv, abs(e["normalized"] - rv)])
            if fname == "x":
                flt_rows.append([FMT % ts, e["normalized"], rv, abs(e["normalized"] - rv)])
    _write_csv(outdir / "estimates.csv",
               ["t", "f_name", "unnormalized", "normalized", "reference", "abs_error"], est_rows)
    _write_csv(outdir / "filter.csv", ["t", "estimate", "reference", "error"], flt_rows)
    return ["observations.csv", "estimates.csv", "filter.csv"]


def _task_filter_study(cfg, outdir, seed, manifest):
    from .filtering import truncation_error_study

    model, grid, trunc, tgrid = _build_filter_model(cfg)
    task = cfg.get("task", {})
    res = truncation_error_study(
        model, grid, T=tgrid.horizon, solver_steps=tgrid.steps,
        N_ladder=task.get("N_ladder", [1, 2, 3, 4]),
        n_ladder=task.get("n_ladder", [8, 16, 32]),
        N_fixed=int(task.get("N_fixed", trunc.max_order)),
        n_fixed=int(task.get("n_fixed", 8)),
        N_ref=int(task.get("N_ref", 6)),
        replications=int(task.get("replications", 200)),
        seed=subseed(seed, "filter-study"),
        h_inf=float(task.get("h_inf", 1.0)))
    rows = []
    for r in res["N_rows"]:
        rows.append(["N=%d" % r.value, r.error, r.ratio, r.bound])
    for r in res["n_rows"]:
        rows.append(["n=%d" % r.value, r.error, r.ratio, r.bound])
    _write_csv(outdir / "convergence.csv", ["N_or_n", "error", "ratio", "theoretical_ratio"], rows)
    manifest["n_fit"] = res["n_fit"]
    return ["convergence.csv"]


TASK_RUNNERS = {
    "solve": _task_solve,
    "sample": _task_sample,
    "moments": _task_moments,
    "energy": _task_energy,
    "stransform": _task_stransform,
    "convergence": _task_convergence,
    "filter": _task_filter,
    "filter-study": _task_filter_study,
}


def run_config(cfg: dict, outdir: Path, seed: int = None, threads: int = None) -> dict:
    name = _req(cfg.get("task", {}), "name", "task")
    if name not in TASK_RUNNERS:
        raise ConfigError("task.name", f"unknown task {name!r} (see list-tasks)")
    if seed is None:
        seed = int(cfg.get("seed", 0))
    if threads:
        kernels.set_num_threads(threads)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config_sha256": hashlib.sha256(
            json.dumps(cfg, sort_keys=True).encode()).hexdigest(),
        "seed": seed,
        "versions": {"wchaos": __version__, "numpy": np.__version__,
                     "kernel_backend": kernels.active_backend()},
    }
    t0 = time.time()
    outputs = TASK_RUNNERS[name](cfg, outdir, seed, manifest)
    manifest["runtime_seconds"] = time.time() - t0
    manifest["outputs"] = outputs
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def _cmd_run(args) -> int:
    try:
        cfg = json.loads(Path(args.config).read_text())
    except FileNotFoundError:
        print(f"config error: file not found: {args.config}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"config error: invalid JSON: {exc}", file=sys.stderr)
        return 1
    try:
        manifest = run_config(cfg, Path(args.out), seed=args.seed, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except InstabilityError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    print(json.dumps({"outputs": manifest["outputs"],
                      "runtime_seconds": manifest["runtime_seconds"]}))
    return 0


def _cmd_validate(args) -> int:
    try:
        cfg = json.loads(Path(args.config).read_text())
        p = _req(cfg, "problem", "")
        if _req(p, "kind", "problem") == "filter":
            model, grid, trunc, tgrid = _build_filter_model(cfg)
            x = grid.x
            diff = model.sigma_at(x) ** 2 + model.rho_at(x) ** 2
            print("filter model: diffusion min %.6g (must be > 0); h sup %.6g"
                  % (float(np.min(diff)), float(np.max(np.abs(model.h_at(x))))))
            print("indices: %d" % trunc.cardinality())
            return 0
        problem = _build_problem(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"config error: invalid JSON: {exc}", file=sys.stderr)
        return 1
    rep = parabolicity_report(problem.op)
    print(f"parabolicity: {rep}")
    if rep.classification == "strong":
        print("regime: geometric per-level decay F_n+1/F_n <= 1/(1+b) applies")
    elif rep.classification == "weak":
        print("regime: energy conservation / Krylov-Veretennikov checks apply")
    else:
        print("regime: non-parabolic; use weighted-space (Q-scaled) tasks")
    print("indices: %d" % problem.trunc.cardinality())
    return 0


def _cmd_list_tasks(_args) -> int:
    for name, doc in TASKS.items():
        print(f"{name:14s} {doc}")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="wchaos",
                                 description="Wiener chaos expansion solver")
    sub = ap.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run a config")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--out", default=".")
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--threads", type=int, default=None)
    run_p.set_defaults(func=_cmd_run)
    val_p = sub.add_parser("validate", help="validate a config and report the parabolic regime")
    val_p.add_argument("--config", required=True)
    val_p.set_defaults(func=_cmd_validate)
    lst_p = sub.add_parser("list-tasks", help="list available tasks")
    lst_p.set_defaults(func=_cmd_list_tasks)
    args = ap.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
