"""Command-line front end: ``mtwreg <task> --config FILE [--out DIR] [--seed N]``."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import os
import platform
import sys
import time
import traceback

import numpy as np
import scipy

from . import __version__
from . import geometry as geo
from .config import TASKS, ConfigError, ExperimentConfig, load_config
from .cost_models import SPHERE, CostModel, hess_xx_sphere_normal, make_cost, normal_hessian_fd
from .ctransform import (
    GridDomain,
    GridPotential,
    build_phibar,
    c_convexify,
    c_transform,
    holder_exponent,
    verify_aw_geometric,
)
from .domains import PairDomain, child_rng
from .mtw import (
    SweepReport,
    auxiliary_minima,
    cost_sectional_curvature,
    d2F_lower_constant,
    make_tangent_pair,
    sweep_condition,
    triangle_brackets,
    triangle_quotient,
    villani_expansion_check,
)
from .ot_solver import DiscreteMeasure, TransportResult, extract_map_diagnostics, solve_exact
from . import scenarios

EXIT_OK, EXIT_TASK, EXIT_CONFIG = 0, 1, 2
FAILURE_MARKER = "FAILED"


# ---------------------------------------------------------------------------
# output helpers


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, data) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def emit_plot_data(report, directory, prefix: str = "") -> list[str]:
    """Write one CSV per plottable series found in ``report``; returns the file names.

    Recognized: a SweepReport (curvature vs sample index) and dicts carrying
    ``modulus_table``, ``q_table``, ``holder_table``, ``contact_counts``,
    ``per_theta_min`` or ``villani`` series.
    """
    os.makedirs(directory, exist_ok=True)
    written = []

    def emit(name, header, rows):
        fname = f"{prefix}{name}.csv"
        write_rows(os.path.join(directory, fname), header, rows)
        written.append(fname)

    if isinstance(report, SweepReport):
        emit("curvature_by_sample", ["index", "value", "err", "reliable"],
             [[k, s.value, s.richardson_err, int(s.reliable)] for k, s in enumerate(report.samples)])
        return written
    if not isinstance(report, dict):
        return written
    if "modulus_table" in report:
        emit("modulus", ["dx", "dG"], report["modulus_table"])
    if "q_table" in report:
        emit("q_vs_h", ["h", "Q"], report["q_table"])
    if "holder_table" in report:
        emit("holder", ["n", "p", "alpha", "beta"], report["holder_table"])
    if "contact_counts" in report:
        emit("contact_components", ["cost", "components"], report["contact_counts"])
    if "per_theta_min" in report:
        emit("phibar_gap_by_theta", ["theta", "min_gap"], report["per_theta_min"])
    if "villani" in report:
        rows = [[v["theta"], t, d] for v in report["villani"] for t, d in zip(v["ts"], v["devs"])]
        emit("villani_deviation", ["theta", "t", "deviation_over_t4"], rows)
    return written


# ---------------------------------------------------------------------------
# config -> objects


def pair_domain(cfg: ExperimentConfig, model: CostModel) -> PairDomain:
    kind = cfg.get_str("kind", "sphere_cap" if model.chart == SPHERE else "box")
    kw = {"kind": kind, "dim": model.dim}
    for key in ("x_lo", "x_hi", "y_lo", "y_hi"):
        if cfg.has(key):
            v = cfg.get_vector(key)
            kw[key] = float(v[0]) if len(v) == 1 else v
    for key in ("x_center", "y_center"):
        if cfg.has(key):
            kw[key] = cfg.get_vector(key)
    for key in ("x_radius", "y_radius", "min_dist", "max_dist"):
        if cfg.has(key):
            kw[key] = cfg.get_float(key)
    try:
        return PairDomain(**kw)
    except ValueError as exc:
        raise ConfigError(f"[domain]: {exc}") from exc


def geometry(cfg: ExperimentConfig, model: CostModel) -> dict:
    """x0, y0, y1 given explicitly, or built at a sampled curvature minimum."""
    if cfg.has("x0") and cfg.has("y0") and cfg.has("y1"):
        x0, y0, y1 = (cfg.get_vector(k) for k in ("x0", "y0", "y1"))
        if model.chart == SPHERE:
            x0, y0, y1 = (geo.normalize(v) for v in (x0, y0, y1))
        return {"x0": x0, "y0": y0, "y1": y1, "source": "explicit"}
    if cfg.get_str("geometry", "explicit") != "counterexample":
        raise ConfigError("give x0, y0, y1 or set geometry = counterexample")
    ce = scenarios.counterexample(
        model, pair_domain(cfg, model), cfg.get_int("sweep_samples", 500), cfg.seed,
        cfg.get_float("spread", 1.0), workers=cfg.threads(),
    )
    return {"x0": ce.x0, "y0": ce.y0, "y1": ce.y1, "source": "counterexample", "counterexample": ce.as_dict()}


def box_grid(cfg: ExperimentConfig, prefix: str, dim: int) -> GridDomain:
    """Box grid from ``<prefix>lo/hi/shape``, falling back to the unprefixed keys."""
    def key(k):
        return prefix + k if cfg.has(prefix + k) else k

    lo, hi = cfg.get_vector(key("lo"), [0.0]), cfg.get_vector(key("hi"), [1.0])
    shape = cfg.get_vector(key("shape"), [21]).astype(int)
    if len(shape) == 1:
        shape = np.repeat(shape, dim)
    return GridDomain.box(lo, hi, shape)


# ---------------------------------------------------------------------------
# tasks: each returns (summary dict, ok flag) and writes its data files


def task_mtw_sweep(cfg: ExperimentConfig, out: str):
    model = cfg.model()
    rep = sweep_condition(
        model, pair_domain(cfg, model), cfg.get_int("samples", 500), cfg.seed,
        h=cfg.get_float("h", 1e-2), threshold=cfg.get_float("threshold", 3.0),
        quasi_random=cfg.get_bool("quasi_random"), workers=cfg.threads(),
    )
    write_json(os.path.join(out, "report.json"), rep.as_dict(include_samples=True))
    rep.to_csv(os.path.join(out, "samples.csv"))
    emit_plot_data(rep, out)
    return rep.as_dict(include_samples=False), not rep.inconclusive


def _initial_potential(cfg, model, dom: GridDomain) -> GridPotential:
    kind = cfg.get_str("potential", "random")
    pts = dom.points
    if kind == "zero":
        vals = np.zeros(dom.size)
    elif kind == "half_norm_sq":
        vals = 0.5 * np.sum(pts**2, axis=1)
    elif kind == "random":
        vals = child_rng(cfg.seed, 1).standard_normal(dom.size) * cfg.get_float("amplitude", 0.1)
    else:
        raise ConfigError(f"unknown potential {kind!r}")
    return GridPotential(dom, vals)


def task_c_transform(cfg: ExperimentConfig, out: str):
    model = cfg.model()
    src = box_grid(cfg, "", model.dim)
    tgt = box_grid(cfg, "target_", model.dim)
    phi = _initial_potential(cfg, model, src)
    phic = c_transform(model, phi, tgt)
    phicc = c_convexify(model, phi, tgt)
    twice = c_convexify(model, phicc, tgt)
    triple = c_transform(model, phicc, tgt)
    shifted = c_transform(model, phi.shifted(1.0), tgt)
    phi.to_csv(os.path.join(out, "phi.csv"))
    phic.to_csv(os.path.join(out, "phic.csv"))
    phicc.to_csv(os.path.join(out, "phicc.csv"))
    summary = {
        "cost": model.descriptor(),
        "source_nodes": src.size, "target_nodes": tgt.size,
        "idempotence_error": float(np.max(np.abs(twice.values - phicc.values))),
        "triple_transform_error": float(np.max(np.abs(triple.values - phic.values))),
        "shift_error": float(np.max(np.abs(shifted.values - (phic.values - 1.0)))),
        "max_decrease": float(np.max(phi.values - phicc.values)),
        "min_phi_minus_phicc": float(np.min(phi.values - phicc.values)),
    }
    write_json(os.path.join(out, "report.json"), summary)
    ok = summary["idempotence_error"] <= 1e-12 and summary["triple_transform_error"] <= 1e-12
    return summary, ok


def task_contact(cfg: ExperimentConfig, out: str):
    model = cfg.model()
    g = geometry(cfg, model)
    cs = scenarios.phibar_contact(
        model, g["x0"], g["y0"], g["y1"],
        half_width=cfg.get_float("half_width", 0.15), n=cfg.get_int("n", 61),
        nodes_along=cfg.get_int("nodes_along", 1000), strip_half_width=cfg.get_int("strip_half_width", 8),
        tol=cfg.get_float("tol") if cfg.has("tol") else None,
    )
    summary = {"cost": model.descriptor(), "geometry": g, "contact": cs.as_dict(),
               "contact_counts": [[model.name, cs.n_components]]}
    write_json(os.path.join(out, "report.json"), summary)
    emit_plot_data(summary, out)
    return summary, True


def task_phibar(cfg: ExperimentConfig, out: str):
    model = cfg.model()
    g = geometry(cfg, model)
    dom = scenarios.source_grid(model, g["x0"], cfg.get_float("half_width", 0.15), cfg.get_int("n", 61))
    thetas = cfg.get_list("thetas", [0.1, 0.25, 0.5, 0.75, 0.9])
    rep = verify_aw_geometric(model, g["x0"], g["y0"], g["y1"], thetas, dom, fit=cfg.get_bool("fit", True))
    build_phibar(model, g["x0"], g["y0"], g["y1"], dom).to_csv(os.path.join(out, "phibar.csv"))
    summary = {"cost": model.descriptor(), "geometry": g, **rep.as_dict()}
    write_json(os.path.join(out, "report.json"), summary)
    emit_plot_data(summary, out)
    return summary, True


def _measure(cfg, which: str, model: CostModel) -> DiscreteMeasure:
    if cfg.has(which):
        return DiscreteMeasure.from_csv(cfg.get_str(which))
    n = cfg.get_int(f"{which}_points", 5)
    lo, hi = cfg.get_float(f"{which}_lo", 0.0), cfg.get_float(f"{which}_hi", 1.0)
    rng = child_rng(cfg.seed, 2, 0 if which == "source" else 1)
    if model.chart == SPHERE:
        pts = geo.random_sphere_points(rng, n, model.dim)
    else:
        pts = lo + (hi - lo) * rng.random((n, model.dim))
    return DiscreteMeasure.uniform(pts)


def task_solve_ot(cfg: ExperimentConfig, out: str):
    model = cfg.model()
    pairs = cfg.get_int("pairs", 200)
    if cfg.get_str("instance", "measures") == "two_bump":
        g = geometry(cfg, model)
        run = scenarios.discontinuity_run(
            model, g["x0"], g["y0"], g["y1"], n=cfg.get_int("n", 40),
            half_width=cfg.get_float("half_width", 0.17), target_ratio=cfg.get_float("target_ratio", 0.45),
            floor=cfg.get_float("floor", 0.55), near_spacings=cfg.get_float("near_spacings", 10.0),
            pairs=pairs, seed=cfg.seed,
        )
        res: TransportResult = run["result"]
        diag = dict(run["diagnostics"])
        diag.update({k: run[k] for k in ("max_jump_over_spacing", "near_max_jump_over_spacing",
                                         "near_max_jump_sources")})
        diag["geometry"] = g
    else:
        res = solve_exact(model, _measure(cfg, "source", model), _measure(cfg, "target", model),
                          method=cfg.get_str("method", "auto"))
        diag = extract_map_diagnostics(res, pairs, cfg.seed)
    res.to_csv(out)
    res.source.to_csv(os.path.join(out, "source.csv"))
    res.target.to_csv(os.path.join(out, "target.csv"))
    bad = res.check()
    summary = {"cost": model.descriptor(), "method": res.method, "cost_total": res.cost_total,
               "dual_value": res.dual_value, "invariants": res.invariants(), "failed_checks": bad,
               "diagnostics": {k: v for k, v in diag.items() if k != "modulus_table"}}
    write_json(os.path.join(out, "report.json"), summary)
    emit_plot_data(diag, out)
    return summary, not bad


def task_sphere_verify(cfg: ExperimentConfig, out: str):
    rng = child_rng(cfg.seed, 3)
    count = cfg.get_int("base_points", 100)
    model = make_cost("sphere_sq_dist", {}, 3)
    curv = []
    for _ in range(count):
        x = geo.random_sphere_points(rng, 1, 3)[0]
        B = geo.tangent_basis(x)
        q, _ = np.linalg.qr(rng.standard_normal((2, 2)))
        s = cost_sectional_curvature(model, make_tangent_pair(model, x, x, B @ q[:, 0], B @ q[:, 1]))
        curv.append([s.value, s.richardson_err])
    curv = np.array(curv)
    hs = cfg.get_list("hs", [0.2, 0.1, 0.05, 0.025])
    x0 = np.array([0.0, 0.0, 1.0])
    xi, nu = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    q_table = [[h, triangle_quotient(x0, xi, nu, h)] for h in hs]
    brackets = triangle_brackets(x0, xi, nu, 0.05)
    villani = []
    for th in cfg.get_list("villani_thetas", [math.pi / 6, math.pi / 3, math.pi / 2]):
        chk = villani_expansion_check(th, cfg.get_float("villani_t_max", 0.2),
                                      corrected=cfg.get_bool("villani_corrected"), n_t=50)
        villani.append({"theta": th, "max_dev": chk.max_dev, "halving_ratio": chk.halving_ratio,
                        "ts": chk.ts, "devs": chk.devs})
    hess = []
    for r in cfg.get_list("hessian_radii", [0.5, 1.0, 1.5, 2.0, 2.5]):
        hess.append([r, float(np.max(np.abs(hess_xx_sphere_normal(r, 3) - normal_hessian_fd(r, 3))))])
    summary = {
        "curvature_at_diagonal": {"mean": float(curv[:, 0].mean()), "min": float(curv[:, 0].min()),
                                  "max": float(curv[:, 0].max()), "max_err": float(curv[:, 1].max()),
                                  "count": count},
        "q_table": q_table,
        "brackets_h005_over_h4": (brackets / 0.05**4).tolist(),
        "villani": villani,
        "normal_hessian_error": hess,
        "auxiliary_minima": auxiliary_minima(),
        "d2F": d2F_lower_constant(),
        "holder_table": [[n, "inf", *holder_exponent(n, math.inf)] for n in (1, 2, 3)],
    }
    write_rows(os.path.join(out, "curvature_by_point.csv"), ["index", "value", "err"],
               [[k, v, e] for k, (v, e) in enumerate(curv)])
    write_json(os.path.join(out, "report.json"), {k: v for k, v in summary.items() if k != "villani"}
               | {"villani": [{k: v for k, v in d.items() if k not in ("ts", "devs")} for d in villani]})
    emit_plot_data(summary, out)
    return {k: summary[k] for k in ("curvature_at_diagonal", "q_table")}, True


def task_antenna_check(cfg: ExperimentConfig, out: str):
    count = cfg.get_int("points", 500)
    angle = cfg.get_float("angle", math.pi / 4)
    m = cfg.get_float("m", 0.5)
    ant = scenarios.antenna_stay_away(count, angle, m, cfg.seed)
    sph = scenarios.sphere_stay_away(count, angle, m, cfg.seed)
    res = ant.pop("result")
    X, G = res.source.support, res.mapped_points()
    write_rows(os.path.join(out, "antenna_distances.csv"), ["i", "distance"],
               [[i, float(d)] for i, d in enumerate(geo.geodesic_distance(X, G))])
    summary = {"antenna": ant, "sphere": sph}
    write_json(os.path.join(out, "report.json"), summary)
    ok = ant["epsilon0"] > 0 and not ant["checks"]
    return summary, ok


TASK_FUNCS = {
    "mtw-sweep": task_mtw_sweep,
    "c-transform": task_c_transform,
    "contact": task_contact,
    "phibar": task_phibar,
    "solve-ot": task_solve_ot,
    "sphere-verify": task_sphere_verify,
    "antenna-check": task_antenna_check,
}


# ---------------------------------------------------------------------------
# driver


def run(cfg: ExperimentConfig) -> int:
    """Run one task; writes manifest.json plus task files under ``cfg.output``."""
    out = cfg.output
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create {out}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    marker = os.path.join(out, FAILURE_MARKER)
    if os.path.exists(marker):
        os.remove(marker)
    manifest = {
        "task": cfg.task,
        "seed": cfg.seed,
        "config": cfg.echo(),
        "versions": {"mtwreg": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "threads": cfg.threads(),
        "started": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    t0 = time.perf_counter()
    status = EXIT_OK
    try:
        summary, ok = TASK_FUNCS[cfg.task](cfg, out)
        manifest["summary"] = summary
        manifest["status"] = "ok" if ok else "check_failed"
        if not ok:
            status = EXIT_TASK
    except ConfigError as exc:
        manifest["status"] = "config_error"
        manifest["error"] = str(exc)
        status = EXIT_CONFIG
    except Exception as exc:  # task failure: keep partial outputs, leave a marker
        manifest["status"] = "failed"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        with open(marker, "w") as fh:
            fh.write(traceback.format_exc())
        status = EXIT_TASK
    manifest["wall_time_s"] = time.perf_counter() - t0
    manifest["files"] = sorted(f for f in os.listdir(out) if f != "manifest.json")
    write_json(os.path.join(out, "manifest.json"), manifest)
    if status == EXIT_TASK and manifest["status"] == "check_failed":
        with open(marker, "w") as fh:
            fh.write("task checks failed; see manifest.json\n")
    if "error" in manifest:
        print(f"error: {manifest['error']}", file=sys.stderr)
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtwreg", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="task", required=True)
    for name in TASKS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI file with [cost], [domain], [task]")
        p.add_argument("--out", help="output directory (overrides [task] output)")
        p.add_argument("--seed", type=int, help="seed (overrides [task] seed)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config, task=args.task, seed=args.seed, output=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
