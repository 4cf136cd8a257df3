"""Command-line runner: ``groupoidlin <command> --config <path> [--out DIR]``.

Commands: ``run``, ``check-axioms``, ``haar-test``, ``convergence-study`` and
``linearize``.  Every command writes a JSON report (with the echoed config)
to the output directory.  Exit codes: 0 converged or check passed, 1 check
failed, 2 noise floor, 3 iteration limit, 4 diverged, 5 configuration error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .averaging import defect, iterate, noise_floor
from .groupoid import check_axioms
from .haar import FiberDensity, check_invariance, direct_haar_system, lemma_haar_system, total_variation
from .linearize import (
    LinearPart,
    NewtonFailure,
    PerturbedLinearAction,
    action_samples,
    bochner_linearize,
    check_action_axioms,
    conjugacy_halving,
    induced_action,
    representation_check,
)
from .liegroup import OutOfChart, haar_quadrature
from .scenarios import ConfigError, build, build_chart, load_config, write_json
from .testkit import InsufficientData, c1_defect_estimate, contraction_constant, fit_convergence_order

EXIT_CODES = {"converged": 0, "noise_floor": 2, "max_iter": 3, "diverged": 4}
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 5
LINEAR_TOL = 1e-6
HALVING_TARGET = (3.2, 4.8)
TRACE_COLUMNS = ("iter", "defect_sup", "defect_p95", "step_norm", "wall_ms")


def versions():
    return {"groupoidlin": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def _num(x):
    return format(float(x), ".17g")


def write_trace(path, trace, timings=False):
    lines = [",".join(TRACE_COLUMNS)]
    for r in trace.rows:
        wall = _num(r.wall_ms) if timings else "nan"
        lines.append(",".join([str(r.iter), _num(r.defect_sup), _num(r.defect_p95), _num(r.step_norm), wall]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def write_columns(path, header, rows):
    """Whitespace-separated plot data with a ``#`` header line."""
    lines = ["# " + " ".join(header)]
    lines += [" ".join(_num(v) if not isinstance(v, (int, np.integer)) else str(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def trace_rows(trace):
    return [
        {"iter": r.iter, "defect_sup": r.defect_sup, "defect_p95": r.defect_p95, "step_norm": r.step_norm}
        for r in trace.rows
    ]


def order_fit(trace, floor):
    try:
        return fit_convergence_order(trace, floor).to_dict()
    except InsufficientData as exc:
        return {"order": None, "reason": str(exc)}


def pinned_residual(sc, phi):
    """Largest ``d(phi(p), g(p))`` over arrows sourced at the fixed point (exactly 0 when pinned)."""
    if sc.chart.d == 0:
        return None
    nodes = sc.quadrature.nodes
    p = sc.chart.fiber_s(np.zeros((len(nodes), sc.chart.d)), nodes)
    return float(np.abs(phi(p) - p.g).max())


def invariance_arrows(chart, size, seed):
    rng = np.random.default_rng(seed)
    G = chart.group
    if chart.d:
        dirs = rng.normal(size=(size, chart.d))
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        x = dirs * (chart.rho * rng.uniform(size=size) ** (1.0 / chart.d))[:, None]
    else:
        x = np.zeros((size, 0))
    return chart.fiber_s(x, G.random(rng, size))


# ---------------------------------------------------------------------------
# pipelines


def converge(sc, eps=None, workers=1, monitor=None):
    """Initial map, noise floor and the iteration for a built scenario."""
    cfg = sc.config
    phi0 = sc.initial_map(eps)
    floor = noise_floor(sc.chart, phi0, sc.pairs, workers)
    res = iterate(
        phi0,
        sc.haar,
        sc.pairs,
        tol=cfg.tol,
        max_iter=cfg.max_iter,
        divergence_guard=cfg.divergence_guard,
        C0=cfg.C0,
        floor=floor,
        workers=workers,
        monitor=monitor,
    )
    return res


def linearization_report(sc, phi):
    """Induced action, Bochner model and the quadratic-residual fixture."""
    cfg = sc.config
    G, d = sc.group, sc.chart.d
    g, h, x = action_samples(G, d, cfg.linear_radius, cfg.linear_samples, cfg.seed)
    a = induced_action(phi)
    axioms = check_action_axioms(a, G, g, h, x)
    model = bochner_linearize(a, sc.quadrature, cfg.rho, d)
    rep = representation_check(model, g, h)
    conj = float(model.conjugacy_residuals(g, x).max()) if d else 0.0
    out = {
        "action_axioms": axioms.to_dict(),
        "representation_residual": rep,
        "conjugacy_residual": conj,
        "model": model.to_dict(),
    }
    if d:
        fixture = PerturbedLinearAction(LinearPart(model), cfg.fixture_beta)
        fmodel = bochner_linearize(fixture, sc.quadrature, cfg.rho, d)
        halving = conjugacy_halving(fmodel, cfg.linear_radius, cfg.linear_samples, cfg.seed)
        out["halving"] = {
            "radius": halving.radius,
            "residual": halving.residual,
            "residual_half": halving.residual_half,
            "ratio": halving.ratio,
        }
    ok = axioms.max <= LINEAR_TOL and rep <= LINEAR_TOL
    if d:
        ok = ok and HALVING_TARGET[0] <= out["halving"]["ratio"] <= HALVING_TARGET[1]
    out["passed"] = bool(ok)
    return out


def run_pipeline(cfg, workers=1, linearize=True):
    """Full run: iteration, diagnostics and (on success) linearisation.

    Returns ``(report, result)``; the report holds no timings.
    """
    sc = build(cfg)
    c1_size = cfg.c1_samples

    def monitor(phi):
        return c1_defect_estimate(phi, sc.chart, size=c1_size, seed=cfg.seed).total if c1_size else None

    res = converge(sc, workers=workers, monitor=monitor)
    report = {
        "config": cfg.to_dict(),
        "chart": sc.chart.describe(),
        "status": res.status,
        "cause": res.cause,
        "iterations": res.steps,
        "noise_floor": res.floor,
        "final_defect": res.final_defect,
        "trace": trace_rows(res.trace),
        "order_fit": order_fit(res.trace, res.floor),
        "c1_estimates": res.records.get("monitor", []),
        "haar": {
            "provenance": sc.haar.provenance,
            "tolerance": sc.haar.tolerance,
            "invariance_residual": check_invariance(sc.haar, sc.chart, invariance_arrows(sc.chart, 16, cfg.seed)),
        },
        "pinned_residual": pinned_residual(sc, res.map),
    }
    if len(res.trace) >= 2:
        report["contraction_constant"] = contraction_constant(res.trace)
    if res.status in ("converged", "noise_floor"):
        report["offgrid_defect"] = defect(res.map, sc.offgrid_pairs, workers).sup
        if linearize:
            try:
                report["linearization"] = linearization_report(sc, res.map)
            except (NewtonFailure, np.linalg.LinAlgError, OutOfChart) as exc:
                report["linearization"] = {"passed": False, "error": str(exc)}
    report["versions"] = versions()
    return report, res


def haar_report(cfg, size=8):
    """Direct and lemma-built systems on the config's chart: mass, invariance and distance."""
    G, chart = build_chart(cfg)
    quad = haar_quadrature(G, cfg.group_resolution)
    mu0 = FiberDensity.smooth(G, cfg.seed, cfg.density_amplitude)
    nu0 = FiberDensity.smooth(G, cfg.seed + 1, cfg.density_amplitude)
    systems = {"direct": direct_haar_system(chart, quad), "lemma": lemma_haar_system(chart, mu0, nu0, quad)}
    q = invariance_arrows(chart, size, cfg.seed)
    rows = []
    weights = {}
    for name, system in systems.items():
        w = system.weights(q.x)
        weights[name] = w
        rows.append(
            {
                "system": name,
                "mass_deviation": float(np.abs(w.sum(axis=-1) - 1).max()),
                "invariance_residual": check_invariance(system, chart, q),
                "tolerance": system.tolerance,
            }
        )
    for row in rows:
        row["passed"] = row["invariance_residual"] <= row["tolerance"]
    tv = float(total_variation(weights["lemma"], weights["direct"]).max())
    return {
        "config": cfg.to_dict(),
        "systems": rows,
        "total_variation": tv,
        "fibers": size,
        "versions": versions(),
    }


def study_report(cfg, workers=1):
    """One run per ``eps`` in ``eps_list``: the contraction constant ``D1 / D0^2`` and order."""
    sc = build(cfg)
    rows = []
    statuses = []
    for eps in cfg.eps_list or [cfg.eps]:
        res = converge(sc, eps=eps, workers=workers)
        d = res.trace.defects
        fit = order_fit(res.trace, res.floor)
        rows.append(
            {
                "eps": float(eps),
                "defect_0": float(d[0]),
                "defect_1": float(d[1]) if len(d) > 1 else None,
                "contraction_constant": contraction_constant(res.trace) if len(d) > 1 and d[0] > 0 else None,
                "final_defect": res.final_defect,
                "iterations": res.steps,
                "status": res.status,
                "noise_floor": res.floor,
                "order": fit.get("order"),
                "trace": trace_rows(res.trace),
            }
        )
        statuses.append(res.status)
    consts = [r["contraction_constant"] for r in rows if r["contraction_constant"]]
    spread = max(consts) / min(consts) if consts else None
    return {"config": cfg.to_dict(), "rows": rows, "constant_spread": spread, "versions": versions()}, statuses


# ---------------------------------------------------------------------------
# commands


def _prepare(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    out = Path(args.out if args.out is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def cmd_run(args, strict_linear=False):
    cfg, out = _prepare(args)
    t0 = time.perf_counter()
    report, res = run_pipeline(cfg, args.workers)
    write_json(out / "report.json", report)
    write_trace(out / "trace.csv", res.trace, args.timings)
    write_columns(out / "defect.dat", ("iter", "defect_sup"), [(r.iter, r.defect_sup) for r in res.trace.rows])
    fit = report["order_fit"]
    if fit.get("order") is not None:
        d = res.trace.defects
        idx = [u - 1 for u in fit["used"]]
        rows = [
            (np.log(d[i - 1]), np.log(d[i]), fit["order"] * np.log(d[i - 1]) + fit["intercept"])
            for i in idx[1:]
        ]
        write_columns(out / "order_fit.dat", ("log_defect_n", "log_defect_next", "fit"), rows)
    if args.timings:
        write_json(out / "timings.json", {"total_ms": (time.perf_counter() - t0) * 1e3,
                                          "iter_ms": [r.wall_ms for r in res.trace.rows]})
    print(f"{cfg.name}: {res.status} after {res.steps} steps, defect {res.final_defect:.3e} (floor {res.floor:.3e})")
    code = EXIT_CODES[res.status]
    if strict_linear and code in (0, 2):
        lin = report.get("linearization", {})
        print(f"linearization {'passed' if lin.get('passed') else 'failed'}")
        if not lin.get("passed"):
            code = EXIT_CHECK_FAILED
    return code


def cmd_check_axioms(args):
    cfg, out = _prepare(args)
    _, chart = build_chart(cfg)
    rep = check_axioms(chart, cfg.axioms_sample, cfg.seed)
    write_json(out / "axioms.json", {"config": cfg.to_dict(), **rep.to_dict(), "versions": versions()})
    for key, val in rep.residuals.items():
        print(f"{key:16s} {val:.3e}")
    print("axioms " + ("passed" if rep.passed else "FAILED: " + ", ".join(rep.failures)))
    return 0 if rep.passed else EXIT_CHECK_FAILED


def cmd_haar_test(args):
    cfg, out = _prepare(args)
    rep = haar_report(cfg)
    write_json(out / "haar.json", rep)
    header = ("system", "mass_deviation", "invariance_residual", "tolerance", "passed")
    lines = [",".join(header)]
    for r in rep["systems"]:
        lines.append(",".join([r["system"], _num(r["mass_deviation"]), _num(r["invariance_residual"]),
                               _num(r["tolerance"]), str(r["passed"]).lower()]))
        print(f"{r['system']:7s} mass {r['mass_deviation']:.2e} invariance {r['invariance_residual']:.2e}")
    (out / "haar.csv").write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    print(f"total variation lemma vs direct {rep['total_variation']:.2e}")
    return 0 if all(r["passed"] for r in rep["systems"]) else EXIT_CHECK_FAILED


def cmd_study(args):
    cfg, out = _prepare(args)
    rep, statuses = study_report(cfg, args.workers)
    write_json(out / "study.json", rep)
    header = ("eps", "defect_0", "defect_1", "contraction_constant", "final_defect", "iterations", "status")
    lines = [",".join(header)]
    for r in rep["rows"]:
        vals = [_num(r["eps"]), _num(r["defect_0"]), _num(r["defect_1"] if r["defect_1"] is not None else np.nan),
                _num(r["contraction_constant"] or np.nan), _num(r["final_defect"]), str(r["iterations"]), r["status"]]
        lines.append(",".join(vals))
        print(f"eps {r['eps']:.1e}: C = {r['contraction_constant'] or float('nan'):.4f}, {r['status']}")
    (out / "study.csv").write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    write_columns(out / "contraction.dat", ("eps", "contraction_constant"),
                  [(r["eps"], r["contraction_constant"] or np.nan) for r in rep["rows"]])
    if rep["constant_spread"] is not None:
        print(f"constant spread x{rep['constant_spread']:.3f}")
    return max(EXIT_CODES[s] for s in statuses)


def build_parser():
    parser = argparse.ArgumentParser(prog="groupoidlin", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("run", "average a perturbed map to a homomorphism"),
        ("check-axioms", "measure the groupoid axioms of the configured chart"),
        ("haar-test", "compare direct and lemma-built Haar systems"),
        ("convergence-study", "contraction constants over the config's eps_list"),
        ("linearize", "run, then build and check the linear model"),
    ]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="config path or bundled:<name>")
        p.add_argument("--out", help="output directory (default: the config's out)")
        p.add_argument("--workers", type=int, default=1, help="thread pool size")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--timings", action="store_true", help="record wall times (trace.csv, timings.json)")
    return parser


COMMANDS = {
    "run": cmd_run,
    "check-axioms": cmd_check_axioms,
    "haar-test": cmd_haar_test,
    "convergence-study": cmd_study,
    "linearize": lambda args: cmd_run(args, strict_linear=True),
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        if isinstance(exc, OutOfChart):
            print(f"diverged: {exc}", file=sys.stderr)
            return EXIT_CODES["diverged"]
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
