import argparse
import logging
from typing import List

from fractal_penergy.commands.context import get_context, int_range
from fractal_penergy.core.errors import UsageError
from fractal_penergy.services.construction_service import ConstructionService
from fractal_penergy.services.types import ConstructionConfig, CellWord
from fractal_penergy.utils.plot_data import construction_tables

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction, parents: List[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser(
        "construct", parents=parents, help="cutoff hierarchy around ω and its finite-depth bounds"
    )
    parser.add_argument("--p", type=float, required=True)
    parser.add_argument("--sigma", default="fit", help="a positive number, or 'fit'")
    parser.add_argument("--kmax", type=int, default=4)
    parser.add_argument("--omega", default="0", help="word repeated cyclically to address x")
    parser.add_argument("--omega-prefix", action="store_true", help="use --omega as an explicit prefix")
    parser.add_argument("--cutoff", choices=("min", "max"), default="min")
    parser.add_argument("--fit-m-range", default="2:4", help="m values when --sigma fit")
    parser.add_argument("--ring-levels", default="1,2")
    parser.add_argument("--max-level", type=int, default=None, help="overrides MAX_LEVEL")
    parser.set_defaults(handler=cmd_construct)


def cmd_construct(args: argparse.Namespace) -> int:
    ring_levels = int_range(args.ring_levels)
    ctx = get_context(
        args,
        default_depth=3,
        p_grid=[args.p],
        kmax=args.kmax,
        omega=args.omega,
        cutoff=args.cutoff,
        sigma=args.sigma,
    )
    svc = ctx.services(ring_levels=ring_levels)
    mstar = svc.partition.mstar(max(ctx.run.depth, 2))

    if args.sigma == "fit":
        fit = svc.homogeneity.fit_sigma_conductance(args.p, int_range(args.fit_m_range))
        sigma, source = fit.sigma, f"fit (conductance, m={fit.samples[0][0]}..{fit.samples[-1][0]})"
    else:
        try:
            sigma, source = float(args.sigma), "given"
        except ValueError as exc:
            raise UsageError(f"--sigma must be a number or 'fit', got {args.sigma!r}") from exc

    try:
        config = ConstructionConfig(
            p=args.p,
            sigma=sigma,
            k_max=args.kmax,
            mstar=mstar,
            omega=CellWord.parse(args.omega),
            cutoff_mode=args.cutoff,
            sigma_source=source,
            repeat=not args.omega_prefix,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if any(s >= svc.partition.branching for s in config.omega.symbols):
        raise UsageError(f"--omega uses symbols outside 0..{svc.partition.branching - 1}")

    service = ConstructionService(
        svc.penergy,
        svc.measure,
        svc.disparity,
        config,
        max_level=args.max_level if args.max_level is not None else ctx.cfg.max_level,
        cert_depth=ctx.run.depth,
        jobs=ctx.cfg.jobs,
    )
    try:
        report = ctx.stamp(service.verify_bounds())
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    ctx.write_json("construction", report)
    tables = construction_tables(report)
    ctx.write_csv("scaled_energy", tables["scaled_energy"], ["n", "m", "scaled_energy"])
    ctx.write_csv("plateau", tables["plateau"], ["k", "plateau", "expected"])
    ctx.write_csv("lp_norm", tables["lp_norm"], ["n", "lp_norm", "bound"])

    print(
        f"{report.scheme} p={report.p:g} σ={report.sigma:.5g} ({report.sigma_source}) "
        f"M*={report.mstar} L*={report.lstar} k={report.k_achieved}/{report.k_max} depth={report.depth}"
    )
    print(f"{'n':>3} {'k':>2} {'σⁿE(f_n)':>12} {'plateau':>9} {'H_k':>9} {'decomp err':>10} {'‖f_n‖_p':>9}")
    for lvl in report.levels:
        print(
            f"{lvl.n:>3} {lvl.k:>2} {lvl.scaled_energy:>12.6g} {lvl.plateau:>9.6f} "
            f"{lvl.plateau_expected:>9.6f} {lvl.decomposition_rel_error:>10.1e} {lvl.lp_norm:>9.5g}"
        )
    print(
        f"C1={report.c1:.5g}  C1·ζ(p)={report.energy_bound:.5g}  max scaled={report.max_scaled_energy:.5g}  "
        f"norm bound={report.norm_bound:.5g}  C2 observed={report.c2_observed:.4g} "
        f"(formula/c={report.c2_formula_per_c:.4g})"
    )
    print(report.label)
    if report.boundedness_applicable and not (report.energy_bound_holds and report.norm_bound_holds):
        logger.warning("finite-depth bounds violated: energy %s, norm %s",
                       report.energy_bound_holds, report.norm_bound_holds)
        return 1
    return 0
