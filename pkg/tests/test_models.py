import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from akrbdo import models
from akrbdo.models import (
    HULL_INITIAL,
    HullGeometry,
    Material,
    bs5500_stiffener_bounds,
    closed_form_optimum_sum,
    hull_cost,
    hull_cost_gradient,
    hull_limit_states,
)
from akrbdo.probability import DomainError, norm_cdf
from akrbdo.reliability import SubsetConfig, subset_simulate

DDO_DESIGN = (16.90, 160.27, 7.16, 81.89, 16.76)


def test_cost_at_mean_design():
    assert 100 * hull_cost(HullGeometry(*HULL_INITIAL)) == pytest.approx(18.86, abs=0.5)


def test_cost_at_ddo_design():
    assert 100 * hull_cost(HullGeometry(*DDO_DESIGN)) == pytest.approx(12.75, abs=0.5)


def test_cost_shell_only_limit():
    g = HullGeometry(24.0, 1e-9, 1e-9, 1e-9, 1e-9)
    mat = Material()
    shell = mat.rho_steel * 2 * math.pi * g.R * g.e * g.L_s / (mat.rho_sea * math.pi * (g.R + g.e / 2) ** 2 * g.L_s)
    assert hull_cost(g, mat) == pytest.approx(shell, rel=1e-9)


def test_cost_scales_with_densities():
    g = HullGeometry(*HULL_INITIAL)
    assert hull_cost(g, Material(rho_steel=2 * models.RHO_STEEL)) == pytest.approx(2 * hull_cost(g), rel=1e-14)
    assert hull_cost(g, Material(rho_sea=2 * models.RHO_SEA)) == pytest.approx(0.5 * hull_cost(g), rel=1e-14)


def test_system_below_components():
    spec = models.hull_random_vector()
    from akrbdo.probability import sample

    x = sample(spec, np.array(HULL_INITIAL) * 0.8, 5000, 0)
    g1, g2, g = hull_limit_states(x, models.get_collapse_model("placeholder"))
    assert np.all(g <= g1) and np.all(g <= g2)


@given(st.lists(st.floats(0.5, 1.5), min_size=5, max_size=5), st.integers(0, 4))
def test_cost_monotone_in_dimensions(scale, j):
    theta = np.array(HULL_INITIAL) * scale
    bumped = theta.copy()
    bumped[j] *= 1.01
    assert hull_cost(HullGeometry(*bumped)) > hull_cost(HullGeometry(*theta))


@given(st.lists(st.floats(0.5, 1.5), min_size=5, max_size=5))
def test_cost_gradient_matches_difference(scale):
    theta = np.array(HULL_INITIAL) * scale
    grad = hull_cost_gradient(HullGeometry(*theta))
    for j in range(5):
        h = 1e-5 * theta[j]
        up, dn = theta.copy(), theta.copy()
        up[j] += h
        dn[j] -= h
        fd = (hull_cost(HullGeometry(*up)) - hull_cost(HullGeometry(*dn))) / (2 * h)
        assert grad[j] == pytest.approx(fd, rel=1e-6, abs=1e-12)


def test_geometry_validation():
    with pytest.raises(DomainError):
        HullGeometry(0.0, 1.0, 1.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        Material(poisson=0.6)


class _Fixed:
    n, m = 2, 14

    def __init__(self, pn, pm):
        self.pn, self.pm = pn, pm

    def __call__(self, geometry, material, a_n, a_m):
        k = np.ones_like(np.asarray(a_n, dtype=float))
        return self.pn * k, self.pm * k


def _mean_row():
    return models.hull_random_vector().means(np.array(HULL_INITIAL))[None, :]


def test_limit_states_log_examples():
    x = _mean_row()
    g1, g2, g = hull_limit_states(x, _Fixed(2.0, 2.0))
    assert g1[0] == g2[0] == g[0] == 0.0
    g1, g2, g = hull_limit_states(x, _Fixed(4.0, 1.0))
    assert g1[0] == pytest.approx(math.log(2)) and g2[0] == pytest.approx(-math.log(2))
    assert g[0] == pytest.approx(-math.log(2))


def test_nonpositive_pressure_is_model_error():
    with pytest.raises(models.CollapseModelError):
        hull_limit_states(_mean_row(), _Fixed(0.0, 1.0))


def test_placeholder_registered_and_finite():
    model = models.get_collapse_model("placeholder")
    g1, g2, g = hull_limit_states(_mean_row(), model)
    assert np.isfinite(g).all() and g1[0] > 0 and g2[0] > 0
    with pytest.raises(DomainError):
        models.get_collapse_model("reference")


def test_bs5500_bounds():
    geom = HullGeometry(*HULL_INITIAL)
    assert bs5500_stiffener_bounds(geom, c1=math.inf, c2=math.inf) == (-math.inf, -math.inf)
    root = math.sqrt(200_000.0 / 390.0)
    at_limit = HullGeometry(24.0, 1.1 * root * 10.0, 10.0, 120.0, 24.0)
    assert bs5500_stiffener_bounds(at_limit)[0] == pytest.approx(0.0, abs=1e-12)
    f1, f2 = bs5500_stiffener_bounds(geom)
    assert f1 < 0 and f2 < 0


def test_closed_form_optimum_sum():
    assert closed_form_optimum_sum(3.0, a=0.0) == pytest.approx(3 * math.sqrt(2))
    bm = models.rbdo_closed_form()
    theta = np.array([3.0, 3.0])
    assert bm.exact_pf(theta) == pytest.approx(norm_cdf(-(6.0 - 4.0) / math.sqrt(2)))


def test_linear_exact():
    assert models.linear(2, 3.0).exact_pf() == pytest.approx(1.3499e-3, rel=1e-4)


def test_series_quadrature_value():
    assert models.series_2d().exact_pf() == pytest.approx(0.0017575369155707569, rel=1e-10)


@pytest.mark.parametrize(
    "bm,design",
    [(models.linear(2, 2.5), None), (models.series_2d(), None), (models.gaussian_1d(2.0), np.array([0.0])),
     (models.rbdo_closed_form(), np.array([4.0, 3.5]))],
    ids=["linear", "series", "gaussian", "closed-form"],
)
def test_closed_forms_match_monte_carlo(bm, design):
    pf, se = bm.oracle(10_000_000, seed=0, design=design)
    exact = bm.exact_pf(design) if design is not None else bm.exact_pf()
    assert abs(pf - exact) <= 3 * se


def test_series_subset_matches_quadrature():
    bm = models.series_2d()
    res = subset_simulate(bm.limit_states[0], bm.spec, None, SubsetConfig(seed=3))
    assert abs(res.pf - bm.exact_pf()) <= 3 * res.cov * bm.exact_pf()


def test_system_dominant_component():
    bm = models.rbdo_closed_form()
    theta = np.array([4.0, 4.0])
    pf_sys, se = bm.oracle(1_000_000, seed=1, design=theta)
    assert abs(pf_sys - bm.exact_pf(theta)) <= 4 * se


def test_catalog():
    names = [b.name for b in models.benchmark_catalog()]
    assert names == ["LINEAR", "SERIES-2D", "GAUSSIAN-1D", "RBDO-CLOSED-FORM"]
    assert models.get_benchmark("linear", n=3).dimension == 3
    with pytest.raises(DomainError):
        models.get_benchmark("nope")
