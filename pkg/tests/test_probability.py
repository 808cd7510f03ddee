import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from akrbdo.models import HULL_DESIGN, HULL_INITIAL, hull_random_vector
from akrbdo.probability import (
    DesignVector,
    DomainError,
    Family,
    MarginalSpec,
    RandomVectorSpec,
    augmented_confidence_box,
    from_standard_normal,
    lognormal_shape_scale,
    norm_cdf,
    norm_ppf,
    quantile,
    sample,
    to_standard_normal,
)


def _lognormal_moments(loc, scale):
    mean = math.exp(loc + 0.5 * scale**2)
    var = math.expm1(scale**2) * math.exp(2 * loc + scale**2)
    return mean, math.sqrt(var)


def test_lognormal_degenerate():
    assert lognormal_shape_scale(1.0, 0.0) == (0.0, 0.0)


@pytest.mark.parametrize("mean,sd", [(200000.0, 10000.0), (390.0, 19.5)])
def test_lognormal_round_trip(mean, sd):
    loc, scale = lognormal_shape_scale(mean, sd)
    if mean == 200000.0:
        assert scale == pytest.approx(math.sqrt(math.log(1.0025)), rel=1e-14)
    m, s = _lognormal_moments(loc, scale)
    assert m == pytest.approx(mean, rel=1e-12)
    assert s == pytest.approx(sd, rel=1e-12)


def test_lognormal_rejects_nonpositive_mean():
    with pytest.raises(DomainError):
        lognormal_shape_scale(0.0, 1.0)


@given(st.floats(1e-3, 1e6), st.floats(0.0, 2.0))
def test_lognormal_moment_property(mean, cov):
    loc, scale = lognormal_shape_scale(mean, mean * cov)
    m, s = _lognormal_moments(loc, scale)
    assert m == pytest.approx(mean, rel=1e-10)
    assert s == pytest.approx(mean * cov, rel=1e-9, abs=1e-12 * mean)


def test_quantile_examples():
    assert quantile(MarginalSpec(Family.NORMAL, 0.0, 1.0), 0.5) == pytest.approx(0.0, abs=1e-15)
    assert quantile(MarginalSpec.uniform(2.0, 6.0), 0.25) == pytest.approx(3.0, rel=1e-12)
    assert quantile(MarginalSpec(Family.DETERMINISTIC, 7.5), 0.9) == 7.5
    with pytest.raises(DomainError):
        quantile(MarginalSpec(Family.NORMAL, 0.0, 1.0), 1.0)


def test_lognormal_imperfection_calibration():
    # cov 50% lognormal: the 99.5% quantile is about three times the mean
    q = quantile(MarginalSpec(Family.LOGNORMAL, 1.0, 0.5), 0.995)
    assert q / 1.0 == pytest.approx(3.0, rel=0.05)


def test_norm_tail_precision():
    assert norm_cdf(-8.0) == pytest.approx(6.220960574271785e-16, rel=1e-13)
    assert -norm_ppf(norm_cdf(-3.0)) == pytest.approx(3.0, abs=1e-12)


def test_sample_deterministic_only():
    spec = RandomVectorSpec((MarginalSpec(Family.DETERMINISTIC, 1.5), MarginalSpec(Family.DETERMINISTIC, -2.0)), ("a", "b"))
    x = sample(spec, None, 20, 3)
    assert np.all(x == [1.5, -2.0])


def test_sample_normal_mean():
    spec = RandomVectorSpec((MarginalSpec(Family.NORMAL, 0.0, 1.0),), ("u",))
    x = sample(spec, None, 100_000, 0)
    assert abs(x.mean()) < 4.0 / math.sqrt(1e5)


def test_sample_hull_means():
    spec = hull_random_vector()
    x = sample(spec, np.array(HULL_INITIAL), 100_000, 1)
    means = spec.means(np.array(HULL_INITIAL))
    assert np.allclose(x.mean(axis=0), means, rtol=0.01)


def test_sample_is_reproducible():
    spec = hull_random_vector()
    a = sample(spec, np.array(HULL_INITIAL), 1000, 9)
    b = sample(spec, np.array(HULL_INITIAL), 1000, 9)
    assert np.array_equal(a, b)


def test_standard_normal_examples():
    spec = RandomVectorSpec((MarginalSpec(Family.NORMAL, 5.0, 2.0), MarginalSpec(Family.LOGNORMAL, math.exp(0.5), math.sqrt((math.e - 1) * math.e))), ("a", "b"))
    u = to_standard_normal(spec, None, np.array([[5.0, math.e]]))
    assert u[0, 0] == pytest.approx(0.0, abs=1e-14)
    assert u[0, 1] == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(DomainError):
        to_standard_normal(spec, None, np.array([[5.0, -1.0]]))


def test_transform_round_trip_hull():
    spec = hull_random_vector()
    theta = np.array(HULL_INITIAL)
    x = sample(spec, theta, 2000, 4)
    u = to_standard_normal(spec, theta, x)
    back = from_standard_normal(spec, theta, u)
    assert np.allclose(back, x, rtol=1e-9, atol=0)


@given(st.lists(st.floats(-6, 6), min_size=3, max_size=3))
def test_transform_round_trip_property(u):
    spec = RandomVectorSpec(
        (MarginalSpec(Family.NORMAL, 1.0, 2.0), MarginalSpec(Family.LOGNORMAL, 3.0, 1.5), MarginalSpec.uniform(-1.0, 4.0)),
        ("a", "b", "c"),
    )
    u = np.array([u])
    x = from_standard_normal(spec, None, u)
    assert np.allclose(to_standard_normal(spec, None, x), u, atol=1e-7)


def test_box_without_design():
    spec = RandomVectorSpec((MarginalSpec(Family.NORMAL, 0.0, 1.0),), ("u",))
    box = augmented_confidence_box(spec, None, 8.0)
    assert box.reduced_lower == pytest.approx([-8.0])
    assert box.reduced_upper == pytest.approx([8.0])


def test_box_shifted_normal():
    spec = RandomVectorSpec((MarginalSpec(Family.NORMAL, 3.0, 1.0, design_var=0),), ("x",))
    box = augmented_confidence_box(spec, ([2.0], [5.0]), 3.0)
    assert box.reduced_lower == pytest.approx([-1.0])
    assert box.reduced_upper == pytest.approx([8.0])


def test_box_errors():
    spec = RandomVectorSpec((MarginalSpec(Family.NORMAL, 3.0, 1.0, design_var=0),), ("x",))
    with pytest.raises(DomainError):
        augmented_confidence_box(spec, ([5.0], [2.0]), 3.0)
    with pytest.raises(DomainError):
        augmented_confidence_box(spec, None, 3.0)


def _sample_rows(spec, thetas, u):
    """Physical samples with one design per row (Normal and Lognormal marginals only)."""
    idx = list(spec.stochastic_index)
    out = np.empty((thetas.shape[0], spec.dim))
    for i, m in enumerate(spec.marginals):
        if not m.stochastic:
            out[:, i] = m.mean
            continue
        means = np.full(thetas.shape[0], m.mean) if m.design_var is None else thetas[:, m.design_var]
        v = u[:, idx.index(i)]
        if m.family is Family.NORMAL:
            out[:, i] = means + m.std_dev * v
        else:
            scale = np.sqrt(np.log1p((m.std_dev / means) ** 2))
            out[:, i] = np.exp(np.log(means) - 0.5 * scale**2 + scale * v)
    return out


def test_box_hull_containment():
    spec = hull_random_vector()
    assert {m.family for m in spec.marginals} <= {Family.NORMAL, Family.LOGNORMAL, Family.DETERMINISTIC}
    theta0 = np.array(HULL_INITIAL)
    lo, hi = 0.5 * theta0, 1.5 * theta0
    box = augmented_confidence_box(spec, (lo, hi), 8.0)
    rng = np.random.default_rng(2)
    n, inside = 1_000_000, 0
    for _ in range(10):
        thetas = lo + (hi - lo) * rng.uniform(size=(n // 10, len(HULL_DESIGN)))
        u = rng.standard_normal((n // 10, spec.stochastic_index.size))
        x = _sample_rows(spec, thetas, u)
        inside += int(np.sum(box.contains(x[:, spec.stochastic_index])))
    assert inside / n >= 0.9999


def test_design_vector_projection():
    d = DesignVector(np.array([1.0, 2.0]), np.array([0.0, 0.0]), np.array([3.0, 3.0]))
    clipped, moved = d.project([4.0, -1.0])
    assert np.array_equal(clipped, [3.0, 0.0]) and moved
    with pytest.raises(DomainError):
        DesignVector(np.array([5.0]), np.array([0.0]), np.array([3.0]))
