import logging
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from fractal_penergy.core.errors import NoBracketError, UsageError
from fractal_penergy.models.schemas import (
    CrossingReport,
    HomogeneityReport,
    ScalingFit,
    SigmaComparison,
)
from fractal_penergy.services.disparity_service import DisparityService
from fractal_penergy.services.measure_service import SelfSimilarMeasure
from fractal_penergy.services.penergy_service import PEnergyService
from fractal_penergy.services.types import CellFunction, CellWord

DISAGREEMENT = 0.15
STABLE_WITHIN = 0.10


def aitken_tail(ratios: Sequence[float]) -> Optional[float]:
    """Δ² extrapolation of the last three ratios; falls back to the last ratio."""
    if not ratios:
        return None
    if len(ratios) < 3:
        return float(ratios[-1])
    r1, r2, r3 = ratios[-3:]
    d1, d2 = r2 - r1, r3 - r2
    if d1 * d2 > 0 and abs(d2) < abs(d1):
        return float(r3 - d2 * d2 / (d2 - d1))
    return float(r3)


def fit_scaling(
    p: float, samples: Sequence[Tuple[int, float]], source: str, depth: int
) -> ScalingFit:
    """Least-squares log-linear fit plus per-step ratios, oriented by ``source``."""
    ms = np.array([m for m, _ in samples], dtype=np.float64)
    vals = np.array([v for _, v in samples], dtype=np.float64)
    if np.unique(ms).size < 2:
        raise UsageError("a scaling fit needs at least two distinct m values")
    if np.any(vals <= 0):
        raise ValueError(f"{source} values must be positive to fit a scaling law, got {vals.tolist()}")
    logs = np.log(vals)
    slope, intercept = np.polyfit(ms, logs, 1)
    residual = float(np.abs(logs - (slope * ms + intercept)).max())
    sign = -1.0 if source == "conductance" else 1.0
    sigma_hat = float(np.exp(sign * slope))

    order = np.argsort(ms)
    ms, vals = ms[order], vals[order]
    steps = np.diff(ms)
    if source == "conductance":
        ratios = (vals[:-1] / vals[1:]) ** (1.0 / steps)
    else:
        ratios = (vals[1:] / vals[:-1]) ** (1.0 / steps)
    scaled = vals * sigma_hat ** (-sign * ms)
    return ScalingFit(
        p=p,
        source=source,  # type: ignore[arg-type]
        samples=[(int(m), float(v)) for m, v in zip(ms, vals)],
        log_slope=float(slope),
        intercept=float(intercept),
        sigma_hat=sigma_hat,
        residual=residual,
        ratio_estimates=[float(r) for r in ratios],
        sigma_tail=aitken_tail(list(ratios)),
        c_lower=float(scaled.min()),
        c_upper=float(scaled.max()),
        depth=depth,
    )


class HomogeneityService:
    """σ estimation from conductance decay and disparity growth, and what is built on it."""

    logger = logging.getLogger(__name__)

    def __init__(
        self,
        penergy: PEnergyService,
        disparity: DisparityService,
        measure: SelfSimilarMeasure,
        ring_levels: Sequence[int] = (1, 2),
        disparity_depth: int = 2,
    ) -> None:
        self.penergy = penergy
        self.disparity = disparity
        self.measure = measure
        self.partition = penergy.partition
        self.ring_levels = tuple(ring_levels)
        self.disparity_depth = disparity_depth

    def mstar(self) -> int:
        return self.partition.mstar()

    def ring_values(
        self,
        p: float,
        m_values: Sequence[int],
        w_samples: Optional[Sequence[CellWord]] = None,
        levels: Optional[Sequence[int]] = None,
    ) -> Tuple[List[float], int]:
        """ℰ_{M*,p,m} surrogates (max over samples) and the deepest level touched."""
        mstar = self.mstar()
        values: List[float] = []
        if w_samples:
            top = max(w.level for w in w_samples)
            for m in m_values:
                values.append(
                    max(self.penergy.ring_conductance(w, m, p, mstar).value for w in w_samples)
                )
        else:
            levels = list(levels or self.ring_levels)
            top = max(levels)
            for m in m_values:
                values.append(self.penergy.ring_sup(m, p, mstar, levels)[0])
        return values, top + max(m_values)

    def fit_sigma_conductance(
        self,
        p: float,
        m_range: Sequence[int],
        w_samples: Optional[Sequence[CellWord]] = None,
        levels: Optional[Sequence[int]] = None,
    ) -> ScalingFit:
        m_values = sorted(set(m_range))
        if len(m_values) < 3:
            raise UsageError(f"conductance fit needs at least 3 distinct m values, got {list(m_range)}")
        t0 = time.perf_counter()
        values, depth = self.ring_values(p, m_values, w_samples, levels)
        fit = fit_scaling(p, list(zip(m_values, values)), "conductance", depth)
        self.logger.info(
            "Conductance fit p=%.3g m=%s: sigma_hat=%.5g sigma_tail=%s residual=%.2e (%.1fs)",
            p, m_values, fit.sigma_hat, fit.sigma_tail, fit.residual, time.perf_counter() - t0,
        )
        return fit

    def fit_sigma_disparity(self, p: float, m_range: Sequence[int], n: int) -> ScalingFit:
        m_values = sorted(set(m_range))
        if len(m_values) < 2:
            raise UsageError(f"disparity fit needs at least 2 distinct m values, got {list(m_range)}")
        t0 = time.perf_counter()
        values = [self.disparity.sigma_pmn(m, n, p)[0].value for m in m_values]
        fit = fit_scaling(p, list(zip(m_values, values)), "disparity", n + max(m_values))
        self.logger.info(
            "Disparity fit p=%.3g n=%d m=%s: sigma_hat=%.5g (%.1fs)",
            p, n, m_values, fit.sigma_hat, time.perf_counter() - t0,
        )
        return fit

    def compare_sigma(self, conductance: ScalingFit, disparity: ScalingFit) -> SigmaComparison:
        a, b = conductance.sigma, disparity.sigma
        gap = abs(a - b) / max(a, b)
        if gap > DISAGREEMENT:
            self.logger.warning(
                "σ estimates disagree by %.0f%% at p=%.3g (conductance %.4g, disparity %.4g): "
                "not homogeneous-looking at this depth",
                100 * gap, conductance.p, a, b,
            )
        return SigmaComparison(
            p=conductance.p,
            sigma_conductance=a,
            sigma_disparity=b,
            relative_gap=gap,
            disagrees=gap > DISAGREEMENT,
        )

    def check_homogeneity(
        self, p: float, m_max: int, levels: Optional[Sequence[int]] = None
    ) -> HomogeneityReport:
        """Product sequence m ↦ σ_{p,m}·ℰ_{M*,p,m} with a heuristic boundedness verdict."""
        if m_max < 1:
            raise UsageError("m_max must be >= 1")
        m_values = list(range(1, m_max + 1))
        cond, depth = self.ring_values(p, m_values, levels=levels)
        disp = [self.disparity.sigma_pm_running(m, p, self.disparity_depth)[-1] for m in m_values]
        products = [c * d for c, d in zip(cond, disp)]
        running = list(np.maximum.accumulate(products))
        # last half of the range: indices len//2 .. end
        bounded = running[-1] <= (1 + STABLE_WITHIN) * running[len(running) // 2]
        positive = [x for x in products if x > 0]
        spread = max(positive) / min(positive) if positive else float("inf")
        if not bounded:
            self.logger.warning(
                "Homogeneity product still growing at p=%.3g (running max %s)", p, running
            )
        comparison = None
        if len(m_values) >= 3:
            comparison = self.compare_sigma(
                fit_scaling(p, list(zip(m_values, cond)), "conductance", depth),
                fit_scaling(p, list(zip(m_values, disp)), "disparity", self.disparity_depth + m_max),
            )
        return HomogeneityReport(
            p=p,
            m_values=m_values,
            conductance=cond,
            disparity=disp,
            products=products,
            running_max=[float(x) for x in running],
            spread=float(spread),
            bounded_looking=bool(bounded),
            comparison=comparison,
            depth=max(depth, self.disparity_depth + m_max),
        )

    def estimate_dimAR(
        self,
        p_lo: float,
        p_hi: float,
        tol_p: float,
        m_range: Sequence[int],
        w_samples: Optional[Sequence[CellWord]] = None,
        levels: Optional[Sequence[int]] = None,
    ) -> CrossingReport:
        """Bisection on p for σ(p) = 1 between a sorted bracket."""
        if tol_p <= 0:
            raise UsageError(f"tol_p must be > 0, got {tol_p}")
        p_lo, p_hi = sorted((p_lo, p_hi))
        if not p_lo > 1:
            raise UsageError(f"bracket must lie in (1, ∞), got p_lo={p_lo}")
        samples: Dict[float, float] = {}
        depth = 0

        def sigma_at(p: float) -> float:
            nonlocal depth
            if p not in samples:
                fit = self.fit_sigma_conductance(p, m_range, w_samples, levels)
                samples[p] = fit.sigma
                depth = max(depth, fit.depth)
            return samples[p]

        s_lo, s_mid, s_hi = (sigma_at(p) for p in (p_lo, (p_lo + p_hi) / 2, p_hi))
        monotone = s_lo <= s_mid <= s_hi
        if not monotone:
            self.logger.warning(
                "σ(p) not monotone on the check grid: σ(%.3g)=%.4g σ(%.3g)=%.4g σ(%.3g)=%.4g",
                p_lo, s_lo, (p_lo + p_hi) / 2, s_mid, p_hi, s_hi,
            )
        if (s_lo - 1) * (s_hi - 1) > 0:
            raise NoBracketError(
                f"crossing outside [{p_lo}, {p_hi}]: σ({p_lo})={s_lo:.4g}, σ({p_hi})={s_hi:.4g}"
            )
        a, b = p_lo, p_hi
        rising = s_hi >= s_lo
        while b - a > tol_p:
            mid = (a + b) / 2
            above = sigma_at(mid) > 1
            if above == rising:
                b = mid
            else:
                a = mid
        p_star = (a + b) / 2
        self.logger.info("dim_AR crossing p*=%.4f (bracket width %.3g, depth %d)", p_star, b - a, depth)
        return CrossingReport(
            found=True,
            p_star=p_star,
            bracket=(a, b),
            width=b - a,
            samples=sorted(samples.items()),
            monotone=monotone,
            depth=depth,
            message=f"σ(p)=1 at p*≈{p_star:.4f} within ±{(b - a) / 2:.3g}",
        )

    def wp_functional(self, f: CellFunction, sigma: float, p: float) -> List[Tuple[int, float]]:
        """(m, σ^m ℰ_p^m(P_m f)) for m = 1..level of f."""
        if not sigma > 0:
            raise ValueError(f"sigma must be > 0, got {sigma}")
        out: List[Tuple[int, float]] = []
        for m in range(1, f.level + 1):
            projected = self.measure.project(f, m)
            out.append((m, sigma**m * self.penergy.energy(projected, p)))
        return out

