import argparse
import logging
from pathlib import Path
from typing import List, Optional

import numpy as np

from fractal_penergy.commands.context import get_context
from fractal_penergy.core.errors import AssumptionViolation
from fractal_penergy.models.schemas import CertificateReport
from fractal_penergy.utils.scheme_file import load_covering

logger = logging.getLogger(__name__)

EDGE_NOTE = "edge adjacency: certified as computed, differs from closure-intersection neighbors"


def register(subparsers: argparse._SubParsersAction, parents: List[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser(
        "check", parents=parents, help="certify L*, M*, neighborhood contraction and coverings"
    )
    parser.add_argument("--kmax", type=int, default=2, help="largest k for the contraction check")
    parser.add_argument("--covering", type=Path, default=None, help="covering family JSON")
    parser.set_defaults(handler=cmd_check)


def cmd_check(args: argparse.Namespace) -> int:
    ctx = get_context(args, default_depth=4, kmax=args.kmax)
    depth = ctx.run.depth
    svc = ctx.services()
    partition = svc.partition

    lstar = partition.certify_degree_bound(depth)
    mstar: Optional[int] = None
    contraction_ok = projection_holds = False
    violation = None
    try:
        mstar = partition.certify_mstar(max(depth, 2))
    except AssumptionViolation as exc:
        logger.error("%s", exc)
    if mstar is not None:
        contraction = partition.verify_neighborhood_contraction(args.kmax, max(depth, 2), mstar)
        contraction_ok = contraction.holds
        if contraction.violation is not None:
            word, k = contraction.violation
            violation = f"w={word}, k={k}"
        projection_holds = partition.verify_projection_inclusion(mstar + 1, max(depth, 2)).holds

    if args.covering is not None:
        level, patches = load_covering(args.covering, partition.branching)
        members = np.arange(partition.level_size(level))
    else:
        level, patches = depth, None
        members = np.arange(partition.level_size(depth))
    try:
        covering = svc.disparity.covering_of(level, members, patches)
    except ValueError as exc:
        raise AssumptionViolation(f"covering check failed at level {level}: {exc}") from exc

    report = ctx.stamp(CertificateReport(
        scheme=ctx.scheme.name,
        scheme_hash=ctx.run.scheme_hash,
        adjacency_mode=ctx.scheme.adjacency_mode,
        depth=depth,
        degree_bound=lstar,
        mstar=mstar,
        contraction_holds=contraction_ok,
        contraction_violation=violation,
        projection_inclusion_holds=projection_holds,
        covering_nt=covering.n_t,
        covering_ne=covering.n_e,
        compliance_note=EDGE_NOTE if ctx.scheme.adjacency_mode == "edge" else None,
        passed=mstar is not None and contraction_ok and projection_holds,
    ))
    ctx.write_json("check", report)
    ctx.remember("check", {"depth": depth, "kmax": args.kmax}, report.model_dump(mode="json"))
    print(render_certificate(report))
    return 0 if report.passed else 1


def render_certificate(report: CertificateReport) -> str:
    def mark(ok: bool) -> str:
        return "pass" if ok else "FAIL"

    rows = [
        ("scheme", f"{report.scheme} ({report.adjacency_mode}, {report.scheme_hash})"),
        ("degree bound L*", f"{report.degree_bound}  [depth {report.depth}]"),
        ("M*", f"{report.mstar}  [depth {report.depth}]" if report.mstar is not None else "FAIL"),
        ("π^k(Γ_{M*+k}(w)) ⊆ Γ_{M*}(π^k(w))", mark(report.contraction_holds)),
        ("π(Γ_i(w)) ⊆ Γ_i(π(w))", mark(report.projection_inclusion_holds)),
        ("covering N_T, N_E", f"{report.covering_nt}, {report.covering_ne}"),
    ]
    if report.contraction_violation:
        rows.append(("first violation", report.contraction_violation))
    if report.compliance_note:
        rows.append(("note", report.compliance_note))
    rows.append(("result", "PASSED" if report.passed else "FAILED"))
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)
