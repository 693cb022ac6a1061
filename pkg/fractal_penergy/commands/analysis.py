import argparse
import json
import logging
import time
from pathlib import Path
from typing import Any, Dict, List, Sequence

import numpy as np

from fractal_penergy.commands.context import float_list, get_context, int_range
from fractal_penergy.core.errors import (
    InfeasibleProblemError,
    InfiniteDisparityError,
    NoBracketError,
    SolverNonConvergenceError,
    UsageError,
)
from fractal_penergy.models.schemas import CrossingReport, DisparityReport
from fractal_penergy.services.partition_service import PartitionService
from fractal_penergy.services.penergy_service import quadratic_minimum
from fractal_penergy.services.types import CellGraph, CellWord, DirichletProblem
from fractal_penergy.utils.plot_data import homogeneity_rows, scan_rows
from fractal_penergy.utils.scheme_file import load_covering

logger = logging.getLogger(__name__)

PATH_TOL = 1e-6
ORACLE_TOL = 1e-8


def register(subparsers: argparse._SubParsersAction, parents: List[argparse.ArgumentParser]) -> None:
    cond = subparsers.add_parser(
        "conductance", parents=parents, help="ring conductance of --word, or effective conductance"
    )
    cond.add_argument("--p", type=float, required=True)
    cond.add_argument("--m", type=int, required=True)
    cond.add_argument("--word", default=None, help="center word w of the ring problem")
    cond.add_argument("--mstar", type=int, default=None, help="defaults to the certified M*")
    cond.add_argument("--a1", nargs="+", default=None, help="words held at 1")
    cond.add_argument("--a2", nargs="+", default=None, help="words held at 0")
    cond.set_defaults(handler=cmd_conductance)

    disp = subparsers.add_parser(
        "disparity", parents=parents, help="σ_{p,m,n} over the star covering of T_n"
    )
    disp.add_argument("--p", type=float, required=True)
    disp.add_argument("--m", type=int, required=True)
    disp.add_argument("--n", type=int, default=1)
    disp.add_argument("--covering", type=Path, default=None, help="covering family JSON")
    disp.add_argument("--restarts", type=int, default=None)
    disp.set_defaults(handler=cmd_disparity)

    scan = subparsers.add_parser(
        "sigma-scan", parents=parents, help="σ from conductance decay and disparity growth per p"
    )
    scan.add_argument("--p-grid", default="1.5,2,3")
    scan.add_argument("--m-range", default="2:5", help="m values of the conductance fit")
    scan.add_argument("--disparity-m", default="1:3", help="m values of the disparity fit")
    scan.add_argument("--n", type=int, default=1, help="level of the disparity stars")
    scan.add_argument("--ring-levels", default="1,2")
    scan.add_argument(
        "--homogeneity-m", type=int, default=3, help="m_max of the product check (0 skips it)"
    )
    scan.set_defaults(handler=cmd_sigma_scan)

    dimar = subparsers.add_parser("dimar", parents=parents, help="bisection for σ(p) = 1")
    dimar.add_argument("--p-lo", type=float, default=1.5)
    dimar.add_argument("--p-hi", type=float, default=3.0)
    dimar.add_argument("--tol-p", type=float, default=0.05)
    dimar.add_argument("--m-range", default="2:5")
    dimar.add_argument("--ring-levels", default="1,2")
    dimar.set_defaults(handler=cmd_dimar)

    bench = subparsers.add_parser("bench", parents=parents, help="solver accuracy and timing")
    bench.add_argument("--sizes", default="4,16,64,256")
    bench.add_argument("--p-grid", default="1.5,2,3")
    bench.add_argument("--problems", type=int, default=50)
    bench.add_argument("--oracle-level", type=int, default=3)
    bench.set_defaults(handler=cmd_bench)


def _words(partition: PartitionService, texts: Sequence[str]) -> List[CellWord]:
    words = [CellWord.parse(t) for t in texts]
    for w in words:
        if any(s >= partition.branching for s in w.symbols):
            raise UsageError(f"word {w} uses symbols outside 0..{partition.branching - 1}")
    return words


def cmd_conductance(args: argparse.Namespace) -> int:
    ctx = get_context(args, p_grid=[args.p], m_range=[args.m])
    svc = ctx.services()
    if args.m < 0:
        raise UsageError("--m must be >= 0")
    if args.word is not None:
        (w,) = _words(svc.partition, [args.word])
        if w.level < 1:
            raise UsageError("ring conductance needs a word of level >= 1")
        mstar = args.mstar or svc.partition.mstar(max(ctx.run.depth, 2))
        result = svc.penergy.ring_conductance(w, args.m, args.p, mstar)
        params: Dict[str, Any] = {"kind": "ring", "word": str(w), "mstar": mstar}
    elif args.a1 and args.a2:
        a1, a2 = _words(svc.partition, args.a1), _words(svc.partition, args.a2)
        try:
            result = svc.penergy.effective_conductance(a1, a2, args.m, args.p)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        params = {"kind": "effective", "a1": [str(w) for w in a1], "a2": [str(w) for w in a2]}
    else:
        raise UsageError("give --word, or both --a1 and --a2")

    outputs = {
        **params,
        "p": args.p,
        "m": args.m,
        "value": result.value,
        "kkt": result.kkt_residual,
        "iterations": result.iterations,
        "epsilon_final": result.epsilon_final,
        "stagnated": result.stagnated,
        "cached": result.cached,
        **ctx.meta,
    }
    ctx.write_json("conductance", outputs)
    print(json.dumps(outputs, indent=2, ensure_ascii=False))
    return 0


def cmd_disparity(args: argparse.Namespace) -> int:
    ctx = get_context(args, p_grid=[args.p], m_range=[args.m], n=args.n)
    svc = ctx.services(restarts=args.restarts)
    level, patches = args.n, None
    if args.covering is not None:
        level, patches = load_covering(args.covering, svc.partition.branching)
    if level < 0 or args.m < 1:
        raise UsageError("need --n >= 0 and --m >= 1")
    estimate, patch, classes = svc.disparity.sigma_pmn(args.m, level, args.p, patches)
    report = ctx.stamp(DisparityReport(
        scheme=ctx.scheme.name,
        p=args.p,
        m=args.m,
        n=level,
        value=estimate.value,
        attaining_set=[str(w) for w in svc.partition.words(level, patch)],
        stars_evaluated=classes,
        restarts=estimate.restarts,
        seed=estimate.seed,
        depth=level + args.m,
        certified_lower=estimate.certified_lower,
    ))
    ctx.write_json("disparity", report)
    ctx.remember("disparity", {"p": args.p, "m": args.m, "n": level}, report.model_dump(mode="json"))
    print(report.model_dump_json(indent=2))
    return 0


def cmd_sigma_scan(args: argparse.Namespace) -> int:
    p_grid = float_list(args.p_grid)
    m_range = int_range(args.m_range)
    disparity_m = int_range(args.disparity_m)
    ring_levels = int_range(args.ring_levels)
    ctx = get_context(args, p_grid=p_grid, m_range=m_range, n=args.n, ring_levels=ring_levels)
    svc = ctx.services(ring_levels=ring_levels, disparity_depth=max(args.n, 1))
    homogeneity = svc.homogeneity

    fits, comparisons, reports, failures = [], [], [], []
    for p in p_grid:
        try:
            cond = homogeneity.fit_sigma_conductance(p, m_range)
            disp = homogeneity.fit_sigma_disparity(p, disparity_m, args.n)
            fits.extend([cond, disp])
            comparisons.append(homogeneity.compare_sigma(cond, disp))
            if args.homogeneity_m > 0:
                reports.append(homogeneity.check_homogeneity(p, args.homogeneity_m))
        except (SolverNonConvergenceError, InfeasibleProblemError, InfiniteDisparityError) as exc:
            logger.error("p=%.3g failed: %s", p, exc)
            failures.append(
                {
                    "p": p,
                    "error": str(exc),
                    "error_type": type(exc).__name__,
                    "residual": getattr(exc, "residual", None),
                }
            )

    ctx.write_csv(
        "sigma_scan",
        scan_rows(fits, ctx.scheme.name),
        ["scheme", "p", "source", "m", "value", "sigma_hat", "residual", "sigma_tail"],
    )
    if reports:
        ctx.write_csv(
            "homogeneity", homogeneity_rows(reports), ["p", "m", "conductance", "disparity", "product"]
        )
    summary = {
        **ctx.meta,
        "scheme": ctx.scheme.name,
        "fits": [f.model_dump(mode="json") for f in fits],
        "comparisons": [c.model_dump(mode="json") for c in comparisons],
        "homogeneity": [r.model_dump(mode="json") for r in reports],
        "failures": failures,
    }
    ctx.write_json("sigma_scan", summary)
    ctx.remember("sigma-scan", {"p_grid": p_grid, "m_range": m_range, "n": args.n}, summary)

    print(f"{'p':>6}  {'σ cond':>10}  {'σ disp':>10}  {'gap':>6}")
    for c in comparisons:
        flag = "  disagree" if c.disagrees else ""
        print(f"{c.p:>6.3g}  {c.sigma_conductance:>10.5g}  {c.sigma_disparity:>10.5g}  {c.relative_gap:>6.1%}{flag}")
    for f in failures:
        print(f"{f['p']:>6.3g}  {f['error_type']}: {f['error']}")
    if any(f["error_type"] == SolverNonConvergenceError.__name__ for f in failures):
        return 3
    return 1 if failures else 0


def cmd_dimar(args: argparse.Namespace) -> int:
    m_range = int_range(args.m_range)
    ring_levels = int_range(args.ring_levels)
    ctx = get_context(
        args, p_grid=[args.p_lo, args.p_hi], m_range=m_range, tol_p=args.tol_p, ring_levels=ring_levels
    )
    svc = ctx.services(ring_levels=ring_levels)
    try:
        report = svc.homogeneity.estimate_dimAR(args.p_lo, args.p_hi, args.tol_p, m_range)
    except NoBracketError as exc:
        report = CrossingReport(
            found=False,
            bracket=(min(args.p_lo, args.p_hi), max(args.p_lo, args.p_hi)),
            width=abs(args.p_hi - args.p_lo),
            samples=[],
            monotone=False,
            depth=max(ring_levels) + max(m_range),
            message=str(exc),
        )
    ctx.write_json("dimar", report)
    if report.found:
        print(
            f"p* = {report.p_star:.4f} ± {report.width / 2:.3g}  "
            f"(bracket [{report.bracket[0]:.4f}, {report.bracket[1]:.4f}], depth {report.depth}, {report.label})"
        )
        if not report.monotone:
            print("warning: σ(p) not monotone on the check grid")
        return 0
    print(report.message)
    return 1


def cmd_bench(args: argparse.Namespace) -> int:
    sizes = int_range(args.sizes)
    p_grid = float_list(args.p_grid)
    ctx = get_context(args, p_grid=p_grid, problems=args.problems)
    svc = ctx.services()
    solver = svc.penergy.solver

    path_rows = []
    t0 = time.perf_counter()
    for n_edges in sizes:
        graph = CellGraph.path(n_edges)
        for p in p_grid:
            problem = DirichletProblem(graph, np.array([0, n_edges]), np.array([1.0, 0.0]), p)
            value = solver.solve(problem).value
            exact = float(n_edges) ** (1 - p)
            path_rows.append(
                {"N": n_edges, "p": p, "value": value, "exact": exact, "rel_error": abs(value - exact) / exact}
            )
    path_seconds = time.perf_counter() - t0

    graph = svc.partition.level_graph(args.oracle_level)
    rng = np.random.default_rng(ctx.cfg.seed)
    oracle_rows = []
    t0 = time.perf_counter()
    for i in range(args.problems):
        count = int(rng.integers(2, max(3, graph.size // 8)))
        fixed = rng.choice(graph.size, size=count, replace=False)
        problem = DirichletProblem(graph, fixed, rng.random(count), 2.0, level=args.oracle_level)
        value = solver.solve(problem).value
        exact = quadratic_minimum(problem)
        oracle_rows.append(
            {"problem": i, "fixed": count, "value": value, "exact": exact,
             "rel_error": abs(value - exact) / max(exact, np.finfo(float).tiny)}
        )
    oracle_seconds = time.perf_counter() - t0

    path_ok = all(r["rel_error"] <= PATH_TOL for r in path_rows)
    oracle_ok = all(r["rel_error"] <= ORACLE_TOL for r in oracle_rows)
    ctx.write_csv("bench_path", path_rows, ["N", "p", "value", "exact", "rel_error"])
    ctx.write_csv("bench_oracle", oracle_rows, ["problem", "fixed", "value", "exact", "rel_error"])
    summary = {
        **ctx.meta,
        "path_max_rel_error": max(r["rel_error"] for r in path_rows),
        "path_seconds": path_seconds,
        "path_ok": path_ok,
        "oracle_max_rel_error": max((r["rel_error"] for r in oracle_rows), default=0.0),
        "oracle_seconds": oracle_seconds,
        "oracle_ok": oracle_ok,
    }
    ctx.write_json("bench", summary)
    print(json.dumps(summary, indent=2))
    return 0 if path_ok and oracle_ok else 1
