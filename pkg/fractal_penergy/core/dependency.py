from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence, Tuple

from fractal_penergy.core.config import Settings, settings
from fractal_penergy.services.disparity_service import DisparityService
from fractal_penergy.services.homogeneity_service import HomogeneityService
from fractal_penergy.services.measure_service import SelfSimilarMeasure
from fractal_penergy.services.partition_service import PartitionService
from fractal_penergy.services.penergy_service import PEnergyService, PLaplaceSolver
from fractal_penergy.services.types import SubdivisionScheme
from fractal_penergy.utils.result_store import JsonlResultStore
from fractal_penergy.utils.scheme_file import load_scheme


@lru_cache
def get_settings() -> Settings:
    settings.ensure_dirs()
    return settings


@lru_cache
def get_scheme(source: str, adjacency_mode: Optional[str] = None) -> SubdivisionScheme:
    return load_scheme(source, adjacency_mode)


@lru_cache
def get_partition(scheme: SubdivisionScheme) -> PartitionService:
    return PartitionService(scheme)


@lru_cache
def get_measure(
    scheme: SubdivisionScheme, weights: Optional[Tuple[float, ...]] = None
) -> SelfSimilarMeasure:
    return SelfSimilarMeasure(scheme, weights)


@lru_cache
def get_solver(cfg: Optional[Settings] = None) -> PLaplaceSolver:
    return PLaplaceSolver.from_settings(cfg or get_settings())


@lru_cache
def get_result_store(path: Path) -> JsonlResultStore:
    return JsonlResultStore(path)


@dataclass
class Services:
    partition: PartitionService
    measure: SelfSimilarMeasure
    penergy: PEnergyService
    disparity: DisparityService
    homogeneity: HomogeneityService


def build_services(
    scheme: SubdivisionScheme,
    cfg: Optional[Settings] = None,
    weights: Optional[Sequence[float]] = None,
    ring_levels: Sequence[int] = (1, 2),
    disparity_depth: int = 2,
    restarts: Optional[int] = None,
) -> Services:
    """Wire the services of one run from the resolved settings."""
    cfg = cfg or get_settings()
    partition = get_partition(scheme)
    measure = get_measure(scheme, tuple(weights) if weights is not None else None)
    store = get_result_store(cfg.results_path) if cfg.cache_enabled else None
    penergy = PEnergyService(partition, get_solver(cfg), store=store, jobs=cfg.jobs)
    disparity = DisparityService(
        partition,
        measure,
        restarts=cfg.disparity_restarts if restarts is None else restarts,
        seed=cfg.seed,
        jobs=cfg.jobs,
    )
    homogeneity = HomogeneityService(
        penergy, disparity, measure, ring_levels=ring_levels, disparity_depth=disparity_depth
    )
    return Services(partition, measure, penergy, disparity, homogeneity)
