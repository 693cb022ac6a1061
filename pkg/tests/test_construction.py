import numpy as np
import pytest

from fractal_penergy.core.errors import InfeasibleProblemError
from fractal_penergy.models.schemas import FINITE_DEPTH
from fractal_penergy.services.construction_service import ConstructionService, harmonic_number
from fractal_penergy.services.types import CellWord, ConstructionConfig


def service_for(stack, **kwargs) -> ConstructionService:
    config = ConstructionConfig(**{"mstar": 1, **kwargs})
    return ConstructionService(stack.penergy, stack.measure, stack.disparity, config, cert_depth=3)


def test_harmonic_numbers():
    assert [harmonic_number(k) for k in range(1, 5)] == pytest.approx([1, 1.5, 11 / 6, 25 / 12])
    assert harmonic_number(0) == 0.0


def test_config_validation():
    with pytest.raises(ValueError):
        ConstructionConfig(p=1.0, sigma=1.0, k_max=2, mstar=1)
    with pytest.raises(ValueError):
        ConstructionConfig(p=2.0, sigma=0.0, k_max=2, mstar=1)
    with pytest.raises(ValueError):
        ConstructionConfig(p=2.0, sigma=1.0, k_max=0, mstar=1)
    with pytest.raises(ValueError):
        ConstructionConfig(p=2.0, sigma=1.0, k_max=2, mstar=0)
    with pytest.raises(ValueError):
        ConstructionConfig(p=2.0, sigma=1.0, k_max=2, mstar=1, omega=CellWord())
    with pytest.raises(ValueError):
        ConstructionConfig(p=2.0, sigma=1.0, k_max=2, mstar=1, cutoff_mode="mean")


def test_address_repeats_or_truncates():
    cyclic = ConstructionConfig(p=2.0, sigma=1.0, k_max=2, mstar=1, omega=CellWord((1, 2)))
    assert cyclic.step == 2
    assert cyclic.address(5) == CellWord((1, 2, 1, 2, 1))
    assert cyclic.address(0) == CellWord()
    prefix = ConstructionConfig(
        p=2.0, sigma=1.0, k_max=2, mstar=1, omega=CellWord((3, 1, 2)), repeat=False
    )
    assert prefix.address(2) == CellWord((3, 1))
    with pytest.raises(ValueError, match="too short"):
        prefix.address(4)


def test_targets_and_rings_on_interval(interval):
    service = service_for(interval, p=2.0, sigma=2.0, k_max=2)
    assert [str(w) for w in service.targets] == ["∅", "0.0", "0.0.0.0"]
    a, b, b_star = service.ring_words(1)
    assert [str(w) for w in a] == ["0.0", "0.1"]
    assert [str(w) for w in b] == ["0.0", "0.1", "1.0"]
    assert [str(w) for w in b_star] == ["0.0", "0.1", "1.0", "1.1"]
    assert service.nesting_violation() is None
    assert service.n_max == 5
    assert [service.k_of(n) for n in range(2, 6)] == [1, 1, 2, 2]


def test_interval_cutoffs_are_linear_ramps(interval):
    service = service_for(interval, p=2.0, sigma=2.0, k_max=2)
    f = service.build_cutoff(4, 1)
    # 1 on the first 8 cells, a ramp over the next 4, then 0
    np.testing.assert_allclose(f.values[:8], 1.0)
    np.testing.assert_allclose(f.values[8:12], [0.8, 0.6, 0.4, 0.2], atol=1e-10)
    np.testing.assert_allclose(f.values[12:], 0.0)
    assert interval.penergy.energy(f, 2.0) == pytest.approx(1 / 5)
    with pytest.raises(ValueError):
        service.build_cutoff(4, 0)
    with pytest.raises(ValueError):
        service.build_cutoff(3, 2)


def test_interval_hierarchy(interval):
    p = 2.0
    report = service_for(interval, p=p, sigma=2.0, k_max=4).verify_bounds()
    assert report.k_achieved == 4
    assert report.depth == 9
    assert [lvl.n for lvl in report.levels] == list(range(2, 10))
    for lvl in report.levels:
        assert lvl.decomposition_rel_error <= 1e-10
        assert lvl.plateau == pytest.approx(harmonic_number(lvl.k), abs=1e-12)
        assert lvl.plateau_expected == harmonic_number(lvl.k)
        assert lvl.max_value == pytest.approx(lvl.plateau, abs=1e-12)
        assert lvl.support_separated
    for cut in report.cutoffs:
        depth = cut.n - 2 * cut.j
        assert cut.energy == pytest.approx((2**depth + 1) ** (1 - p), rel=1e-9)
        assert cut.scaled_energy == pytest.approx(cut.energy * 2.0**depth, rel=1e-12)
    assert report.nesting_holds
    assert (report.lstar, report.mstar) == (2, 1)
    assert (report.covering_nt, report.covering_ne) == (3, 1)
    assert report.c2_formula_per_c == pytest.approx(6.0)
    assert not report.boundedness_applicable
    assert report.label.endswith("inapplicable (σ>1)")


def test_interval_cutoff_modes_agree(interval):
    service = service_for(interval, p=3.0, sigma=1.0, k_max=2)
    low, high = service.compare_cutoff_modes(5, 1)
    assert low == pytest.approx(high, rel=1e-8)


def test_max_mode_costs_at_least_the_minimizer(carpet):
    service = service_for(carpet, p=2.0, sigma=0.9, k_max=1)
    low, high = service.compare_cutoff_modes(3, 1)
    assert low <= high * (1 + 1e-9)
    maxed = service.build_cutoff(3, 1, "max")
    ones = carpet.partition.refine_indices(service.rings(1).a, 1)
    np.testing.assert_allclose(maxed.values[ones], 1.0)


def test_square_bounds_hold_below_critical(square):
    p = 1.5
    report = service_for(square, p=p, sigma=2 ** (p - 2), k_max=2).verify_bounds()
    assert report.boundedness_applicable
    assert report.label == FINITE_DEPTH
    assert report.energy_bound_holds
    assert report.norm_bound_holds
    assert report.max_scaled_energy <= report.c1 * report.zeta_p
    assert report.max_lp_norm <= report.norm_bound
    assert report.c2_observed > 0
    for lvl in report.levels:
        assert lvl.decomposition_rel_error <= 1e-10
        assert lvl.plateau == pytest.approx(lvl.plateau_expected, abs=1e-12)


def test_carpet_hierarchy(carpet):
    report = service_for(carpet, p=2.0, sigma=0.9, k_max=2).verify_bounds()
    assert report.k_achieved == 2
    assert [lvl.n for lvl in report.levels] == [2, 3, 4, 5]
    assert all(lvl.decomposition_rel_error <= 1e-10 for lvl in report.levels)
    assert [lvl.plateau for lvl in report.levels] == pytest.approx([1, 1, 1.5, 1.5], abs=1e-12)
    assert report.energy_bound_holds
    assert report.norm_bound_holds
    assert report.covering_ne == 1


def test_ring_covering_everything_is_infeasible(interval):
    service = service_for(interval, p=2.0, sigma=1.0, k_max=1, omega=CellWord((0, 1)))
    with pytest.raises(InfeasibleProblemError):
        service.build_cutoff(2, 1)


def test_assemble_below_first_ring(interval):
    service = service_for(interval, p=2.0, sigma=1.0, k_max=1)
    with pytest.raises(ValueError):
        service.assemble(1)


def test_carpet_bounds_hold_with_fitted_sigma(shallow_carpet):
    p = 1.3
    fit = shallow_carpet.homogeneity.fit_sigma_conductance(p, [1, 2, 3])
    assert 0 < fit.sigma < 1
    report = service_for(shallow_carpet, p=p, sigma=fit.sigma, k_max=2).verify_bounds()
    assert report.k_achieved == 2
    assert not report.truncated
    assert report.boundedness_applicable
    assert report.label == FINITE_DEPTH
    assert [lvl.plateau for lvl in report.levels] == pytest.approx([1, 1, 1.5, 1.5], abs=1e-12)
    assert all(lvl.decomposition_rel_error <= 1e-10 for lvl in report.levels)
    assert report.energy_bound_holds
    assert report.norm_bound_holds


def test_level_cap_truncation_is_reported(carpet, caplog):
    config = ConstructionConfig(p=2.0, sigma=0.9, k_max=2, mstar=1)
    service = ConstructionService(
        carpet.penergy, carpet.measure, carpet.disparity, config, max_level=3, cert_depth=3
    )
    with caplog.at_level("WARNING"):
        report = service.verify_bounds()
    assert report.k_achieved == 1
    assert report.depth == 3
    assert report.truncated
    assert report.label.endswith("truncated at k=1/2 by level cap 3")
    assert any("Level cap 3" in r.getMessage() for r in caplog.records)
