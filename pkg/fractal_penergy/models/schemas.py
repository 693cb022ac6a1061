from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator

FINITE_DEPTH = "finite-depth surrogate"


class RunConfig(BaseModel):
    scheme: str
    scheme_hash: str
    depth: int = Field(..., ge=1, description="Deepest level used by certificates and sampling.")
    seed: int = 0
    jobs: int = Field(1, ge=1)
    cache_dir: str
    out_dir: str
    p_grid: List[float] = Field(default_factory=list)
    m_range: List[int] = Field(default_factory=list)
    options: Dict[str, object] = Field(default_factory=dict)

    @field_validator("p_grid")
    @classmethod
    def _p_above_one(cls, value: List[float]) -> List[float]:
        bad = [p for p in value if not p > 1]
        if bad:
            raise ValueError(f"p values must be > 1, got {bad}")
        return value


class ConductanceRecord(BaseModel):
    scheme: str
    p: float
    n: int
    m: int
    sets_hash: str
    value: float
    kkt: float
    iters: int
    epsilon_final: float = 0.0


class ResultRecord(BaseModel):
    subcommand: str
    input_hash: str
    outputs: Dict[str, object]
    created_at: str
    tool_version: str


class ScalingFit(BaseModel):
    p: float
    source: Literal["conductance", "disparity"]
    samples: List[Tuple[int, float]]
    log_slope: float
    intercept: float
    sigma_hat: float
    residual: float
    ratio_estimates: List[float]
    sigma_tail: Optional[float] = None
    c_lower: float
    c_upper: float
    depth: int
    label: str = FINITE_DEPTH

    @property
    def sigma(self) -> float:
        """Accelerated per-step estimate when ratios exist, else the least-squares one."""
        if self.ratio_estimates and self.sigma_tail is not None:
            return self.sigma_tail
        return self.sigma_hat


class SigmaComparison(BaseModel):
    p: float
    sigma_conductance: float
    sigma_disparity: float
    relative_gap: float
    disagrees: bool


class HomogeneityReport(BaseModel):
    p: float
    m_values: List[int]
    conductance: List[float]
    disparity: List[float]
    products: List[float]
    running_max: List[float]
    spread: float
    bounded_looking: bool
    comparison: Optional[SigmaComparison] = None
    depth: int
    label: str = "heuristic, " + FINITE_DEPTH


class RunStamp(BaseModel):
    """Run provenance; unset fields are filled from the run context when a report is written."""

    scheme_hash: Optional[str] = None
    depth: Optional[int] = None
    seed: Optional[int] = None


class CrossingReport(RunStamp):
    found: bool
    p_star: Optional[float] = None
    bracket: Tuple[float, float]
    width: float
    samples: List[Tuple[float, float]]
    monotone: bool
    depth: int
    message: str
    label: str = FINITE_DEPTH


class CertificateReport(RunStamp):
    scheme: str
    scheme_hash: str
    adjacency_mode: str
    depth: int
    degree_bound: int
    mstar: Optional[int] = None
    contraction_holds: bool = False
    contraction_violation: Optional[str] = None
    projection_inclusion_holds: bool = False
    covering_nt: Optional[int] = None
    covering_ne: Optional[int] = None
    compliance_note: Optional[str] = None
    passed: bool = False


class DisparityReport(RunStamp):
    scheme: str
    p: float
    m: int
    n: int
    value: float
    attaining_set: List[str]
    stars_evaluated: int
    restarts: int
    seed: int
    certified_lower: bool = True
    label: str = FINITE_DEPTH


class CutoffRecord(BaseModel):
    n: int
    j: int
    energy: float
    scaled_energy: float


class LevelRecord(BaseModel):
    n: int
    k: int
    cutoff_energies: List[float]
    total_energy: float
    decomposition_sum: float
    decomposition_rel_error: float
    scaled_energy: float
    plateau: float
    plateau_expected: float
    max_value: float
    lp_norm: float
    projected_scaled: List[Tuple[int, float]]
    support_separated: bool


class ConstructionReport(RunStamp):
    scheme: str
    scheme_hash: str
    p: float
    sigma: float
    sigma_source: str
    k_max: int
    k_achieved: int
    mstar: int
    lstar: int
    omega: str
    cutoff_mode: Literal["min", "max"]
    targets: List[str]
    nesting_holds: bool
    levels: List[LevelRecord]
    cutoffs: List[CutoffRecord]
    c1: float
    zeta_p: float
    energy_bound: float
    max_scaled_energy: float
    energy_bound_holds: bool
    norm_bound: float
    max_lp_norm: float
    norm_bound_holds: bool
    c2_observed: float
    c2_formula_per_c: float
    covering_nt: int
    covering_ne: int
    boundedness_applicable: bool
    depth: int
    truncated: bool = False
    label: str = FINITE_DEPTH
