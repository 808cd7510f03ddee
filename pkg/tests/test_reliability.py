import math

import numpy as np
import pytest

from akrbdo.models import gaussian_1d, linear
from akrbdo.probability import DomainError, Family, MarginalSpec, RandomVectorSpec, norm_cdf, norm_pdf
from akrbdo.reliability import (
    PfFloorError,
    SubsetConfig,
    beta_gradient,
    crude_monte_carlo,
    generalized_beta,
    subset_simulate,
    subset_simulate_u,
)

PF3 = 1.3498980316301e-3


def test_linear_tail():
    bm = linear(2, 3.0)
    res = subset_simulate(bm.limit_states[0], bm.spec, None, SubsetConfig(seed=1))
    assert bm.exact_pf() == pytest.approx(PF3, rel=1e-10)
    assert abs(res.pf - PF3) <= 3 * res.cov * PF3
    assert 2.9 <= res.beta <= 3.1
    assert res.calls == 10_000 * res.levels
    assert res.thresholds[-1] == 0.0
    assert list(res.thresholds) == sorted(res.thresholds, reverse=True)


def test_never_fails_raises_floor():
    with pytest.raises(PfFloorError) as err:
        subset_simulate_u(lambda u: np.ones(len(u)), 2, SubsetConfig(1000, seed=0))
    assert err.value.pf_bound <= 0.1


def test_always_fails():
    res = subset_simulate_u(lambda u: -np.ones(len(u)), 2, SubsetConfig(1000, seed=0))
    assert res.pf == 1.0 and res.levels == 1


def test_non_finite_values_rejected():
    with pytest.raises(ValueError):
        subset_simulate_u(lambda u: np.full(len(u), np.nan), 2, SubsetConfig(1000, seed=0))


def test_reproducible():
    bm = linear(3, 2.5)
    a = subset_simulate(bm.limit_states[0], bm.spec, None, SubsetConfig(2000, seed=5))
    b = subset_simulate(bm.limit_states[0], bm.spec, None, SubsetConfig(2000, seed=5))
    assert a.to_dict() == b.to_dict()


def test_config_validation():
    with pytest.raises(ValueError):
        SubsetConfig(samples_per_level=15, level_probability=0.1)
    with pytest.raises(ValueError):
        SubsetConfig(level_probability=1.0)


def test_generalized_beta():
    assert generalized_beta(0.5) == pytest.approx(0.0, abs=1e-15)
    assert generalized_beta(norm_cdf(-3.0)) == pytest.approx(3.0, abs=1e-10)
    assert generalized_beta(0.68) < 0
    assert generalized_beta(norm_cdf(0.47)) == pytest.approx(-0.47, abs=1e-12)
    with pytest.raises(DomainError):
        generalized_beta(0.0)


def test_gaussian_sensitivity_matches_density():
    bm = gaussian_1d(3.0, 0.0)
    res = subset_simulate(bm.limit_states[0], bm.spec, np.array([0.0]), SubsetConfig(seed=3))
    exact = norm_pdf(3.0)
    assert res.sensitivities[0] == pytest.approx(exact, rel=0.2)
    db = beta_gradient(res)[0]
    assert db == pytest.approx(-1.0, rel=0.2)  # beta = c - theta


def _linked_linear():
    spec = RandomVectorSpec(tuple(MarginalSpec(Family.NORMAL, 0.0, 1.0, design_var=i) for i in range(2)), ("x1", "x2"))
    return spec, linear(2, 3.0).limit_states[0]


def test_linear_sensitivity_matches_crn_difference():
    spec, g = _linked_linear()
    theta = np.zeros(2)
    res = subset_simulate(g, spec, theta, SubsetConfig(seed=11))
    h = 0.05
    e = np.array([h, 0.0])
    cfg = SubsetConfig(seed=12)
    fd = (subset_simulate(g, spec, theta + e, cfg).pf - subset_simulate(g, spec, theta - e, cfg).pf) / (2 * h)
    assert res.sensitivities[0] == pytest.approx(fd, rel=0.2)
    assert res.sensitivities[0] == pytest.approx(norm_pdf(3.0) / math.sqrt(2), rel=0.2)


def test_unlinked_variable_zero_sensitivity():
    spec = RandomVectorSpec(
        (MarginalSpec(Family.NORMAL, 0.0, 1.0, design_var=0), MarginalSpec(Family.NORMAL, 0.0, 1.0), MarginalSpec(Family.DETERMINISTIC, 2.0)),
        ("a", "b", "c"),
    )
    res = subset_simulate(lambda x: 3.0 - x[:, 0] - x[:, 1] + 0 * x[:, 2], spec, np.array([0.0]), SubsetConfig(2000, seed=0))
    assert set(res.sensitivities) == {0}


def test_crude_monte_carlo_oracle():
    bm = linear(2, 2.0)
    pf, se = crude_monte_carlo(bm.limit_states[0], bm.spec, None, 1_000_000, 0)
    assert abs(pf - norm_cdf(-2.0)) <= 4 * se


def test_dispersion_consistent_with_cov():
    bm = linear(2, 3.0)
    est = [subset_simulate(bm.limit_states[0], bm.spec, None, SubsetConfig(2000, seed=s)) for s in range(40)]
    pf = np.array([r.pf for r in est])
    ratio = np.std(pf, ddof=1) / np.mean(pf) / np.mean([r.cov for r in est])
    assert 0.5 <= ratio <= 2.0
