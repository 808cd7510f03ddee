"""Independent random vectors whose means may track design variables.

Everything here works on the diagonal (independent-marginal) isoprobabilistic
transform: ``u_i = Phi^-1(F_i(x_i))``.  Deterministic components are carried in
the physical vector but are given ``u = 0`` and never enter the reliability
dimension count.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import special

__all__ = [
    "DomainError",
    "Family",
    "MarginalSpec",
    "RandomVectorSpec",
    "DesignVector",
    "ConfidenceBox",
    "norm_cdf",
    "norm_ppf",
    "norm_pdf",
    "lognormal_shape_scale",
    "quantile",
    "sample",
    "to_standard_normal",
    "from_standard_normal",
    "augmented_confidence_box",
]

_SQRT3 = math.sqrt(3.0)


class DomainError(ValueError):
    """Raised when an argument lies outside the mathematical domain of an operation."""


def norm_cdf(u):
    return special.ndtr(u)


def norm_ppf(p):
    return special.ndtri(p)


def norm_pdf(u):
    u = np.asarray(u, dtype=float)
    return np.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)


class Family(str, enum.Enum):
    NORMAL = "normal"
    LOGNORMAL = "lognormal"
    UNIFORM = "uniform"
    DETERMINISTIC = "deterministic"


def lognormal_shape_scale(mean: float, std_dev: float) -> tuple[float, float]:
    """Moment-matched ``(log_location, log_scale)`` of a lognormal law.

    ``log_scale**2 = ln(1 + (std/mean)**2)`` and
    ``log_location = ln(mean) - log_scale**2 / 2``.
    """
    if not mean > 0.0:
        raise DomainError(f"lognormal mean must be positive, got {mean!r}")
    if std_dev < 0.0:
        raise DomainError(f"std_dev must be nonnegative, got {std_dev!r}")
    zeta2 = math.log1p((std_dev / mean) ** 2)
    return math.log(mean) - 0.5 * zeta2, math.sqrt(zeta2)


@dataclass(frozen=True)
class MarginalSpec:
    """One marginal law.  ``design_var`` makes the mean track ``theta[design_var]``."""

    family: Family
    mean: float
    std_dev: float = 0.0
    design_var: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", Family(self.family))
        if self.family is Family.DETERMINISTIC:
            if self.std_dev not in (0, 0.0, None):
                raise DomainError("deterministic marginal cannot have a std_dev")
            object.__setattr__(self, "std_dev", 0.0)
            return
        if not (self.std_dev > 0.0 and math.isfinite(self.std_dev)):
            raise DomainError(f"{self.family.value} marginal needs std_dev > 0")
        if self.family is Family.LOGNORMAL and not self.mean > 0.0:
            raise DomainError("lognormal marginal needs mean > 0")

    @classmethod
    def uniform(cls, lower: float, upper: float) -> "MarginalSpec":
        if not upper > lower:
            raise DomainError("uniform bounds must satisfy lower < upper")
        return cls(Family.UNIFORM, 0.5 * (lower + upper), (upper - lower) / (2.0 * _SQRT3))

    @property
    def stochastic(self) -> bool:
        return self.family is not Family.DETERMINISTIC

    def with_mean(self, mean: float) -> "MarginalSpec":
        return replace(self, mean=float(mean))

    def bounds(self) -> tuple[float, float]:
        """Support of the law."""
        if self.family is Family.NORMAL:
            return -math.inf, math.inf
        if self.family is Family.LOGNORMAL:
            return 0.0, math.inf
        if self.family is Family.UNIFORM:
            half = _SQRT3 * self.std_dev
            return self.mean - half, self.mean + half
        return self.mean, self.mean

    # -- standard-normal mapping (vectorized) ----------------------------------
    def from_u(self, u):
        u = np.asarray(u, dtype=float)
        if self.family is Family.NORMAL:
            return self.mean + self.std_dev * u
        if self.family is Family.LOGNORMAL:
            lam, zeta = lognormal_shape_scale(self.mean, self.std_dev)
            return np.exp(lam + zeta * u)
        if self.family is Family.UNIFORM:
            a, b = self.bounds()
            return a + (b - a) * norm_cdf(u)
        return np.full_like(u, self.mean)

    def to_u(self, x):
        x = np.asarray(x, dtype=float)
        if self.family is Family.DETERMINISTIC:
            return np.zeros_like(x)
        a, b = self.bounds()
        if self.family is Family.UNIFORM:
            bad = (x < a) | (x > b)
        else:
            bad = (x <= a) | (x >= b) | ~np.isfinite(x)
        if np.any(bad):
            raise DomainError(f"value outside the support of {self.family.value} marginal")
        if self.family is Family.NORMAL:
            return (x - self.mean) / self.std_dev
        if self.family is Family.LOGNORMAL:
            lam, zeta = lognormal_shape_scale(self.mean, self.std_dev)
            return (np.log(x) - lam) / zeta
        p = (x - a) / (b - a)
        return norm_ppf(p)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.family is Family.DETERMINISTIC:
            return (x >= self.mean).astype(float)
        if self.family is Family.LOGNORMAL:
            lam, zeta = lognormal_shape_scale(self.mean, self.std_dev)
            with np.errstate(divide="ignore"):
                return np.where(x > 0, norm_cdf((np.log(np.maximum(x, 1e-300)) - lam) / zeta), 0.0)
        if self.family is Family.UNIFORM:
            a, b = self.bounds()
            return np.clip((x - a) / (b - a), 0.0, 1.0)
        return norm_cdf((x - self.mean) / self.std_dev)

    def mean_score(self, x):
        """Derivative of ``ln pdf(x)`` with respect to the mean, std_dev held fixed."""
        x = np.asarray(x, dtype=float)
        if self.family is Family.NORMAL:
            return (x - self.mean) / self.std_dev**2
        if self.family is Family.LOGNORMAL:
            mu, sd = self.mean, self.std_dev
            lam, zeta = lognormal_shape_scale(mu, sd)
            r = (sd / mu) ** 2
            dzeta2 = -2.0 * r / (mu * (1.0 + r))
            dzeta = dzeta2 / (2.0 * zeta)
            dlam = 1.0 / mu - 0.5 * dzeta2
            z = np.log(x) - lam
            return -dzeta / zeta + z * dlam / zeta**2 + z**2 * dzeta / zeta**3
        if self.family is Family.DETERMINISTIC:
            return np.zeros_like(x)
        raise DomainError("mean score is only defined for normal and lognormal marginals")


def quantile(spec: MarginalSpec, p: float) -> float:
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {p!r}")
    if spec.family is Family.DETERMINISTIC:
        return float(spec.mean)
    return float(spec.from_u(norm_ppf(p)))


@dataclass(frozen=True)
class RandomVectorSpec:
    """Ordered, mutually independent marginals with unique names."""

    marginals: tuple[MarginalSpec, ...]
    names: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "marginals", tuple(self.marginals))
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.marginals) != len(self.names):
            raise DomainError("one name per marginal is required")
        if len(set(self.names)) != len(self.names):
            raise DomainError("marginal names must be unique")

    @property
    def dim(self) -> int:
        return len(self.marginals)

    @property
    def stochastic_index(self) -> np.ndarray:
        return np.array([i for i, m in enumerate(self.marginals) if m.stochastic], dtype=int)

    @property
    def n_design(self) -> int:
        links = [m.design_var for m in self.marginals if m.design_var is not None]
        return max(links) + 1 if links else 0

    def index(self, name: str) -> int:
        return self.names.index(name)

    def at(self, design) -> tuple[MarginalSpec, ...]:
        """Marginals with design-linked means replaced by ``design`` values."""
        values = _design_values(design)
        out = []
        for m in self.marginals:
            if m.design_var is None:
                out.append(m)
            else:
                if m.design_var >= len(values):
                    raise DomainError(f"design vector too short for design_var {m.design_var}")
                out.append(m.with_mean(values[m.design_var]))
        return tuple(out)

    def means(self, design=None) -> np.ndarray:
        margs = self.marginals if design is None else self.at(design)
        return np.array([m.mean for m in margs], dtype=float)


@dataclass(frozen=True)
class DesignVector:
    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        v, lo, hi = (np.atleast_1d(np.asarray(a, dtype=float)).copy() for a in (self.values, self.lower, self.upper))
        if not (v.shape == lo.shape == hi.shape):
            raise DomainError("design values and bounds must have equal length")
        if np.any(lo > hi):
            raise DomainError("design bounds are empty")
        if np.any(v < lo) or np.any(v > hi):
            raise DomainError("design value outside its bounds")
        for a in (v, lo, hi):
            a.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def with_values(self, values) -> "DesignVector":
        return DesignVector(np.clip(values, self.lower, self.upper), self.lower, self.upper)

    def project(self, values) -> tuple[np.ndarray, bool]:
        values = np.asarray(values, dtype=float)
        clipped = np.clip(values, self.lower, self.upper)
        return clipped, bool(np.any(clipped != values))


def _design_values(design) -> np.ndarray:
    if design is None:
        return np.zeros(0)
    if isinstance(design, DesignVector):
        return design.values
    return np.atleast_1d(np.asarray(design, dtype=float))


def sample(spec: RandomVectorSpec, design, count: int, seed) -> np.ndarray:
    """``count`` i.i.d. rows of X(theta); reproducible for a fixed seed."""
    if count < 1:
        raise DomainError("count must be >= 1")
    rng = np.random.default_rng(seed)
    idx = spec.stochastic_index
    u = np.zeros((count, spec.dim))
    u[:, idx] = rng.standard_normal((count, idx.size))
    return from_standard_normal(spec, design, u)


def to_standard_normal(spec: RandomVectorSpec, design, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    margs = spec.at(design)
    if x.shape[-1] != len(margs):
        raise DomainError("dimension mismatch")
    u = np.empty_like(x)
    for i, m in enumerate(margs):
        u[..., i] = m.to_u(x[..., i])
    return u


def from_standard_normal(spec: RandomVectorSpec, design, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    margs = spec.at(design)
    if u.shape[-1] != len(margs):
        raise DomainError("dimension mismatch")
    x = np.empty_like(u)
    for i, m in enumerate(margs):
        x[..., i] = m.from_u(u[..., i])
    return x


@dataclass(frozen=True)
class ConfidenceBox:
    """Axis-aligned box in physical units.  Deterministic axes have ``lower == upper``."""

    lower: np.ndarray
    upper: np.ndarray
    active: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape:
            raise DomainError("box bounds must have equal length")
        active = hi > lo if self.active is None else np.asarray(self.active, dtype=bool)
        if np.any(lo[active] >= hi[active]) or np.any(lo[~active] != hi[~active]):
            raise DomainError("box requires lower < upper on every active axis")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "active", active)

    @property
    def dim(self) -> int:
        return int(self.active.sum())

    @property
    def reduced_lower(self) -> np.ndarray:
        return self.lower[self.active]

    @property
    def reduced_upper(self) -> np.ndarray:
        return self.upper[self.active]

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.reduced_upper - self.reduced_lower))

    def contains(self, x) -> np.ndarray:
        """Row-wise membership test on reduced (active-axis) coordinates."""
        x = np.atleast_2d(x)
        return np.all((x >= self.reduced_lower) & (x <= self.reduced_upper), axis=1)

    def embed(self, z) -> np.ndarray:
        """Reduced coordinates -> full physical vectors (constants on inactive axes)."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        x = np.broadcast_to(self.lower, (z.shape[0], self.lower.size)).copy()
        x[:, self.active] = z
        return x


def augmented_confidence_box(
    spec: RandomVectorSpec,
    design_bounds: tuple[Sequence[float], Sequence[float]] | None = None,
    beta_target: float = 8.0,
    grid: int = 33,
) -> ConfidenceBox:
    """Hyperrectangle covering X(theta) for every theta in the design bounds.

    Per axis, the bounds are the extreme ``Phi(-beta)`` / ``Phi(+beta)``
    quantiles over the linked design interval.  Interval endpoints are always
    included; ``grid`` interior means are scanned as well because the upper
    lognormal quantile at fixed std_dev is not monotone in the mean once the
    coefficient of variation exceeds ``1/beta``.
    """
    if not beta_target > 0:
        raise DomainError("beta_target must be positive")
    if design_bounds is None:
        if spec.n_design:
            raise DomainError("design bounds are required for design-linked marginals")
        design_bounds = ((), ())
    lo_d = np.atleast_1d(np.asarray(design_bounds[0], dtype=float))
    hi_d = np.atleast_1d(np.asarray(design_bounds[1], dtype=float))
    if lo_d.shape != hi_d.shape or np.any(lo_d > hi_d):
        raise DomainError("design bounds are empty")
    lower = np.empty(spec.dim)
    upper = np.empty(spec.dim)
    for i, m in enumerate(spec.marginals):
        if m.design_var is None:
            means = [m.mean]
        else:
            j = m.design_var
            means = np.unique(np.concatenate([[lo_d[j], hi_d[j]], np.linspace(lo_d[j], hi_d[j], grid)]))
        if not m.stochastic:
            if len(means) > 1 and means[0] != means[-1]:
                raise DomainError("deterministic marginal cannot be design-linked over a range")
            lower[i] = upper[i] = means[0]
            continue
        lows = [float(m.with_mean(mu).from_u(-beta_target)) for mu in means]
        highs = [float(m.with_mean(mu).from_u(beta_target)) for mu in means]
        lower[i], upper[i] = min(lows), max(highs)
    active = np.array([m.stochastic for m in spec.marginals])
    return ConfidenceBox(lower, upper, active)
