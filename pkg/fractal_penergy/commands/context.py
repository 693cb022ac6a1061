"""Shared plumbing for subcommands: global flags, run context, output files."""

import argparse
import hashlib
import json
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, TypeVar

from pydantic import BaseModel

from fractal_penergy import __version__
from fractal_penergy.core.config import Settings
from fractal_penergy.core.dependency import Services, build_services, get_result_store, get_scheme
from fractal_penergy.core.errors import SchemeParseError, UsageError
from fractal_penergy.models.schemas import ResultRecord, RunConfig, RunStamp
from fractal_penergy.services.measure_service import SelfSimilarMeasure
from fractal_penergy.services.types import SubdivisionScheme
from fractal_penergy.utils.logging import configure_logging
from fractal_penergy.utils.plot_data import write_csv, write_json
from fractal_penergy.utils.scheme_file import load_weights

logger = logging.getLogger(__name__)

R = TypeVar("R", bound=RunStamp)


def common_parser() -> argparse.ArgumentParser:
    """Global flags, accepted after every subcommand."""
    common = argparse.ArgumentParser(add_help=False)
    group = common.add_argument_group("global options")
    group.add_argument("--scheme", default="sierpinski-carpet", help="built-in name or scheme file")
    group.add_argument("--mode", choices=("closure", "edge"), default=None, help="adjacency mode")
    group.add_argument("--weights", type=Path, default=None, help="measure weights file")
    group.add_argument("--depth", type=int, default=None, help="deepest certified/sampled level")
    group.add_argument("--seed", type=int, default=None)
    group.add_argument("--jobs", type=int, default=None)
    group.add_argument("--cache-dir", type=Path, default=None)
    group.add_argument("--out", type=Path, default=None, help="output directory")
    group.add_argument("--no-cache", action="store_true", help="bypass the result cache")
    group.add_argument("--log-level", default=None)
    return common


def int_range(text: str) -> List[int]:
    """'2:6' (inclusive) or '2,3,5'."""
    try:
        if ":" in text:
            lo, hi = (int(t) for t in text.split(":", 1))
            values = list(range(lo, hi + 1))
        else:
            values = [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"bad integer range {text!r}") from exc
    if not values:
        raise UsageError(f"empty range {text!r}")
    return values


def float_list(text: str) -> List[float]:
    try:
        values = [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"bad number list {text!r}") from exc
    if not values:
        raise UsageError(f"empty list {text!r}")
    return values


def resolve_settings(args: argparse.Namespace) -> Settings:
    """Environment settings with this run's flag overrides applied."""
    cfg = Settings()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.jobs is not None:
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        cfg.jobs = args.jobs
    if args.cache_dir is not None:
        cfg.cache_dir = args.cache_dir.resolve()
    if args.out is not None:
        cfg.out_dir = args.out.resolve()
    if args.no_cache:
        cfg.cache_enabled = False
    cfg.ensure_dirs()
    return cfg


@dataclass
class RunContext:
    cfg: Settings
    scheme: SubdivisionScheme
    run: RunConfig
    weights: Optional[List[float]]

    @property
    def out_dir(self) -> Path:
        return self.cfg.out_dir

    @property
    def meta(self) -> Dict[str, Any]:
        return {"scheme_hash": self.run.scheme_hash, "depth": self.run.depth, "seed": self.run.seed}

    def services(self, **kwargs: Any) -> Services:
        return build_services(self.scheme, self.cfg, weights=self.weights, **kwargs)

    def stamp(self, report: R) -> R:
        missing = {k: v for k, v in self.meta.items() if getattr(report, k) is None}
        return report.model_copy(update=missing) if missing else report

    def write_json(self, name: str, payload: BaseModel | Mapping[str, Any]) -> Path:
        if isinstance(payload, RunStamp):
            payload = self.stamp(payload)
        path = write_json(self.out_dir / f"{name}.json", payload)
        logger.info("Wrote %s", path)
        return path

    def write_csv(self, name: str, rows: Sequence[Mapping[str, Any]], columns: Sequence[str]) -> Path:
        path = write_csv(self.out_dir / f"{name}.csv", rows, self.meta, columns)
        logger.info("Wrote %s (%d rows)", path, len(rows))
        return path

    def input_hash(self, subcommand: str, params: Mapping[str, Any]) -> str:
        blob = json.dumps(
            {"scheme": self.run.scheme_hash, "subcommand": subcommand, **params},
            sort_keys=True,
            default=str,
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def remember(self, subcommand: str, params: Mapping[str, Any], outputs: Dict[str, Any]) -> None:
        """Append the subcommand's outputs to the result cache."""
        if not self.cfg.cache_enabled:
            return
        get_result_store(self.cfg.results_path).put(
            ResultRecord(
                subcommand=subcommand,
                input_hash=self.input_hash(subcommand, params),
                outputs=outputs,
                created_at=datetime.now(timezone.utc).isoformat(),
                tool_version=__version__,
            )
        )


def get_context(
    args: argparse.Namespace,
    default_depth: int = 4,
    p_grid: Sequence[float] = (),
    m_range: Sequence[int] = (),
    **options: Any,
) -> RunContext:
    cfg = resolve_settings(args)
    configure_logging(cfg, args.log_level)
    scheme = get_scheme(args.scheme, args.mode)
    weights = load_weights(args.weights) if args.weights is not None else None
    if weights is not None:
        try:
            SelfSimilarMeasure(scheme, weights)
        except ValueError as exc:
            raise SchemeParseError(f"weights file {args.weights}: {exc}") from exc
    depth = args.depth if args.depth is not None else default_depth
    if depth < 1:
        raise UsageError("--depth must be >= 1")
    try:
        run = RunConfig(
            scheme=args.scheme,
            scheme_hash=scheme.digest(),
            depth=depth,
            seed=cfg.seed,
            jobs=cfg.jobs,
            cache_dir=str(cfg.cache_dir),
            out_dir=str(cfg.out_dir),
            p_grid=list(p_grid),
            m_range=list(m_range),
            options={k: v for k, v in options.items() if v is not None},
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    logger.info(
        "Run %s (%s, hash %s) depth=%d seed=%d jobs=%d",
        args.command, scheme.name, run.scheme_hash, depth, cfg.seed, cfg.jobs,
    )
    return RunContext(cfg=cfg, scheme=scheme, run=run, weights=weights)
