import numpy as np
import pytest

from fractal_penergy.core.errors import NoBracketError, UsageError
from fractal_penergy.services.homogeneity_service import aitken_tail, fit_scaling
from fractal_penergy.services.types import CellFunction, CellWord

# interior cell of T_3 for square2: box coordinates (3, 3) of the 8x8 grid
SQUARE_INTERIOR = CellWord((0, 3, 3))


def test_aitken_tail():
    assert aitken_tail([]) is None
    assert aitken_tail([1.2]) == 1.2
    assert aitken_tail([1.5, 1.75, 1.875]) == pytest.approx(2.0)
    # not contracting monotonically: keep the last ratio
    assert aitken_tail([1.0, 3.0, 2.0]) == 2.0
    assert aitken_tail([2.0, 2.0, 2.0]) == 2.0


def test_fit_scaling_on_exact_power_law():
    samples = [(m, 3.0 * 2.0**-m) for m in range(1, 5)]
    fit = fit_scaling(2.0, samples, "conductance", depth=7)
    assert fit.sigma_hat == pytest.approx(2.0)
    assert fit.sigma == pytest.approx(2.0)
    assert fit.residual < 1e-12
    assert fit.c_lower == pytest.approx(3.0)
    assert fit.c_upper == pytest.approx(3.0)
    assert fit.ratio_estimates == pytest.approx([2.0, 2.0, 2.0])

    growth = fit_scaling(2.0, [(m, 1.5**m) for m in (1, 3, 5)], "disparity", depth=6)
    assert growth.sigma_hat == pytest.approx(1.5)
    assert growth.ratio_estimates == pytest.approx([1.5, 1.5])


def test_fit_scaling_rejects_degenerate_samples():
    with pytest.raises(UsageError):
        fit_scaling(2.0, [(2, 0.5), (2, 0.4)], "conductance", depth=3)
    with pytest.raises(ValueError):
        fit_scaling(2.0, [(1, 0.5), (2, 0.0)], "conductance", depth=3)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_interval_conductance_scaling(interval, p):
    fit = interval.homogeneity.fit_sigma_conductance(p, range(2, 7))
    assert fit.sigma == pytest.approx(2 ** (p - 1), rel=0.02)
    assert fit.samples[0][1] == pytest.approx(2 * 5 ** (1 - p), rel=1e-6)
    assert fit.depth == 3 + 6
    assert fit.label == "finite-depth surrogate"


def test_interval_disparity_scaling(interval):
    fit = interval.homogeneity.fit_sigma_disparity(2.0, [1, 2, 3, 4], n=1)
    assert [v for _, v in fit.samples] == pytest.approx([1.5, 2.75, 5.375, 10.6875], rel=1e-8)
    assert fit.sigma == pytest.approx(2.0, rel=0.01)


def test_fits_need_enough_m_values(interval):
    with pytest.raises(UsageError):
        interval.homogeneity.fit_sigma_conductance(2.0, [2, 3])
    with pytest.raises(UsageError):
        interval.homogeneity.fit_sigma_conductance(2.0, [2, 2, 3])
    with pytest.raises(UsageError):
        interval.homogeneity.fit_sigma_disparity(2.0, [2], n=1)


def test_square_is_critical_at_two(square):
    fit = square.homogeneity.fit_sigma_conductance(2.0, [2, 3, 4, 5], w_samples=[SQUARE_INTERIOR])
    assert fit.sigma == pytest.approx(1.0, rel=0.05)


def test_compare_sigma_flags_disagreement(interval):
    flat = fit_scaling(2.0, [(m, 3.0) for m in (1, 2, 3)], "conductance", depth=3)
    steep = fit_scaling(2.0, [(m, 1.3**m) for m in (1, 2, 3)], "disparity", depth=3)
    close = fit_scaling(2.0, [(m, 1.05**m) for m in (1, 2, 3)], "disparity", depth=3)
    verdict = interval.homogeneity.compare_sigma(flat, steep)
    assert verdict.disagrees
    assert verdict.relative_gap == pytest.approx(0.3 / 1.3)
    assert not interval.homogeneity.compare_sigma(flat, close).disagrees


def test_homogeneity_products_on_interval(interval):
    report = interval.homogeneity.check_homogeneity(2.0, 3, levels=[3])
    assert report.m_values == [1, 2, 3]
    assert report.conductance == pytest.approx([2 / 3, 0.4, 2 / 9], rel=1e-8)
    assert report.disparity == pytest.approx([1.5, 2.75, 5.375], rel=1e-8)
    assert report.products == pytest.approx([1.0, 1.1, 43 / 36], rel=1e-7)
    assert report.running_max == pytest.approx(report.products)
    assert report.spread == pytest.approx(43 / 36, rel=1e-7)
    assert report.comparison is not None
    assert report.label.startswith("heuristic")
    assert report.bounded_looking


def test_interval_products_settle_over_last_half(interval):
    report = interval.homogeneity.check_homogeneity(2.0, 4, levels=[3])
    assert report.running_max == pytest.approx([1.0, 1.1, 43 / 36, 2 / 17 * 10.6875], rel=1e-7)
    assert report.bounded_looking
    assert report.spread <= 2


def test_square_products_are_nearly_constant(square):
    report = square.homogeneity.check_homogeneity(2.0, 3)
    assert report.bounded_looking
    assert report.spread <= 2


def test_dimar_without_crossing(interval):
    with pytest.raises(NoBracketError, match="crossing outside"):
        interval.homogeneity.estimate_dimAR(1.1, 3.0, 0.1, [2, 3, 4])


def test_dimar_argument_checks(interval):
    with pytest.raises(UsageError):
        interval.homogeneity.estimate_dimAR(1.5, 3.0, 0.0, [2, 3, 4])
    with pytest.raises(UsageError):
        interval.homogeneity.estimate_dimAR(0.9, 2.0, 0.1, [2, 3, 4])


def test_dimar_on_square(square):
    report = square.homogeneity.estimate_dimAR(
        2.4, 1.6, 0.1, [2, 3, 4, 5], w_samples=[SQUARE_INTERIOR]
    )
    assert report.found
    assert 1.9 <= report.p_star <= 2.1
    assert report.width <= 0.1
    assert report.bracket[0] <= report.p_star <= report.bracket[1]
    assert report.monotone
    sampled = [p for p, _ in report.samples]
    assert sampled == sorted(sampled)
    assert len(sampled) >= 4
    assert sampled[0] == 1.6 and sampled[-1] == 2.4


def test_wp_functional_scales_geometrically(interval):
    f = CellFunction(4, np.repeat([1.0, 0.0], 8))
    values = interval.homogeneity.wp_functional(f, 2.0, 3.0)
    assert [m for m, _ in values] == [1, 2, 3, 4]
    assert [v for _, v in values] == pytest.approx([2.0, 4.0, 8.0, 16.0])
    with pytest.raises(ValueError):
        interval.homogeneity.wp_functional(f, 0.0, 2.0)


def test_wp_functional_vanishes_on_constants(square):
    f = CellFunction(3, np.full(64, 2.5))
    assert [v for _, v in square.homogeneity.wp_functional(f, 1.0, 2.0)] == [0.0, 0.0, 0.0]


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_wp_functional_is_p_homogeneous(carpet, p):
    f = CellFunction(2, np.random.default_rng(3).random(64))
    base = [v for _, v in carpet.homogeneity.wp_functional(f, 0.8, p)]
    scaled = [v for _, v in carpet.homogeneity.wp_functional(CellFunction(2, -3.0 * f.values), 0.8, p)]
    assert all(v > 0 for v in base)
    assert scaled == pytest.approx([3.0**p * v for v in base], rel=1e-12)
