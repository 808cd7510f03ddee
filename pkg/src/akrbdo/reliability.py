"""Subset simulation in standard-normal space, with score-function sensitivities.

Level 0 is crude Monte Carlo.  Each further level picks the
``level_probability`` quantile of the current g-values as its threshold and
grows ``1 / level_probability`` new states from every seed with the
component-wise (modified) Metropolis sampler.  Seeds are not re-counted, so
every level costs exactly ``samples_per_level`` limit-state evaluations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .probability import DomainError, RandomVectorSpec, from_standard_normal, norm_cdf, norm_ppf

LimitState = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SubsetConfig:
    samples_per_level: int = 10_000
    level_probability: float = 0.1
    proposal_spread: float = 1.0
    max_levels: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.level_probability < 1.0:
            raise ValueError("level_probability must lie in (0, 1)")
        nc = self.samples_per_level * self.level_probability
        if abs(nc - round(nc)) > 1e-9 or round(nc) < 2:
            raise ValueError("samples_per_level * level_probability must be an integer >= 2")
        if self.samples_per_level % round(nc):
            raise ValueError("samples_per_level must be a multiple of the number of seeds")
        if self.proposal_spread <= 0 or self.max_levels < 1:
            raise ValueError("proposal_spread and max_levels must be positive")

    @property
    def n_seeds(self) -> int:
        return int(round(self.samples_per_level * self.level_probability))


@dataclass
class SubsetResult:
    pf: float
    cov: float
    beta: float
    levels: int
    thresholds: tuple[float, ...]
    calls: int
    sensitivities: dict[int, float] = field(default_factory=dict)
    sensitivity_errors: dict[int, float] = field(default_factory=dict)
    level_probabilities: tuple[float, ...] = ()
    # Standard-normal failure samples of the last level (not serialized).
    failure_samples: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "pf": self.pf,
            "cov": self.cov,
            "beta": self.beta,
            "levels": self.levels,
            "thresholds": list(self.thresholds),
            "level_probabilities": list(self.level_probabilities),
            "calls": self.calls,
            "sensitivities": {str(k): v for k, v in sorted(self.sensitivities.items())},
            "sensitivity_errors": {str(k): v for k, v in sorted(self.sensitivity_errors.items())},
        }


class PfFloorError(RuntimeError):
    """No failure reached within ``max_levels``; ``pf_bound`` is the last level's product."""

    def __init__(self, message: str, pf_bound: float, thresholds: tuple[float, ...], calls: int):
        super().__init__(message)
        self.pf_bound = pf_bound
        self.thresholds = thresholds
        self.calls = calls


def generalized_beta(pf: float) -> float:
    if not 0.0 < pf < 1.0:
        raise DomainError(f"pf must lie in (0, 1), got {pf!r}")
    return float(-norm_ppf(pf))


def _beta_or_inf(pf: float) -> float:
    if pf >= 1.0:
        return -math.inf
    return generalized_beta(pf)


def _chain_gamma(indicator: np.ndarray, p: float) -> float:
    """Au & Beck correlation factor for ``indicator`` of shape (chains, length)."""
    nc, ns = indicator.shape
    r0 = p * (1.0 - p)
    if ns < 2 or r0 <= 0.0:
        return 0.0
    ind = indicator.astype(float)
    n = nc * ns
    gamma = 0.0
    for k in range(1, ns):
        rk = np.sum(ind[:, : ns - k] * ind[:, k:]) / (n - k * nc) - p * p
        gamma += 2.0 * (1.0 - k / ns) * rk / r0
    return max(gamma, 0.0)


def _rng(seed: int, level: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, level]))


def _evaluate(g_u: Callable[[np.ndarray], np.ndarray], u: np.ndarray) -> np.ndarray:
    values = np.asarray(g_u(u), dtype=float).reshape(-1)
    if values.size != u.shape[0]:
        raise ValueError("limit state must return one value per input row")
    bad = ~np.isfinite(values)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise ValueError(f"limit state returned {values[i]!r} at sample {u[i].tolist()}")
    return values


def subset_simulate_u(g_u: Callable[[np.ndarray], np.ndarray], dim: int, config: SubsetConfig = SubsetConfig()) -> SubsetResult:
    """Subset simulation for a vectorized limit state defined on standard-normal rows."""
    if dim < 1:
        raise DomainError("at least one stochastic dimension is required")
    N, p0, nc = config.samples_per_level, config.level_probability, config.n_seeds
    steps = N // nc
    rng = _rng(config.seed, 0)
    u = rng.standard_normal((N, dim))
    gv = _evaluate(g_u, u)
    chains = None  # (nc, steps) view of the current level, None for crude MC
    thresholds: list[float] = []
    probs: list[float] = []
    deltas2: list[float] = []

    for level in range(config.max_levels):
        order = np.argsort(gv, kind="stable")
        b = 0.5 * (gv[order[nc - 1]] + gv[order[nc]])
        final = b <= 0.0
        if final:
            b = 0.0
        indicator = gv <= b
        p = float(np.mean(indicator)) if final else p0
        gamma = 0.0 if chains is None else _chain_gamma(indicator.reshape(nc, steps), p)
        thresholds.append(float(b))
        probs.append(p)
        deltas2.append((1.0 - p) / (N * p) * (1.0 + gamma))
        if final:
            pf = float(np.prod(probs))
            return SubsetResult(
                pf=pf,
                cov=math.sqrt(sum(deltas2)),
                beta=_beta_or_inf(pf),
                levels=level + 1,
                thresholds=tuple(thresholds),
                calls=N * (level + 1),
                level_probabilities=tuple(probs),
                failure_samples=u[indicator].copy(),
            )
        if len(thresholds) > 1 and b >= thresholds[-2]:
            raise PfFloorError("subset simulation stagnated: thresholds stopped decreasing",
                               float(np.prod(probs)), tuple(thresholds), N * (level + 1))
        if level + 1 == config.max_levels:
            break
        seeds, gseeds = u[order[:nc]], gv[order[:nc]]
        u, gv = _metropolis_chains(g_u, seeds, gseeds, b, steps, config.proposal_spread, _rng(config.seed, level + 1))
        chains = True
    raise PfFloorError(f"no failure reached within {config.max_levels} levels",
                       float(np.prod(probs)), tuple(thresholds), N * config.max_levels)


def _metropolis_chains(g_u, seeds, gseeds, threshold, steps, spread, rng):
    """Grow ``steps`` new states per seed; returns rows ordered chain-major."""
    nc, dim = seeds.shape
    cur, gcur = seeds.copy(), gseeds.copy()
    states = np.empty((nc, steps, dim))
    gstates = np.empty((nc, steps))
    for t in range(steps):
        xi = cur + rng.uniform(-spread, spread, size=cur.shape)
        ratio = np.exp(-0.5 * (xi * xi - cur * cur))
        take = rng.uniform(size=cur.shape) < ratio
        cand = np.where(take, xi, cur)
        gc = _evaluate(g_u, cand)
        ok = gc <= threshold
        cur = np.where(ok[:, None], cand, cur)
        gcur = np.where(ok, gc, gcur)
        states[:, t] = cur
        gstates[:, t] = gcur
    return states.reshape(nc * steps, dim), gstates.reshape(nc * steps)


def _physical_limit_state(limit_state: LimitState, spec: RandomVectorSpec, design) -> Callable[[np.ndarray], np.ndarray]:
    idx = spec.stochastic_index

    def g_u(u_red: np.ndarray) -> np.ndarray:
        u = np.zeros((u_red.shape[0], spec.dim))
        u[:, idx] = u_red
        return limit_state(from_standard_normal(spec, design, u))

    return g_u


def subset_simulate(
    limit_state: LimitState,
    spec: RandomVectorSpec,
    design=None,
    config: SubsetConfig = SubsetConfig(),
    sensitivities: bool = True,
) -> SubsetResult:
    """Failure probability ``P[g(X) <= 0]`` for X distributed per ``spec`` at ``design``.

    ``limit_state`` maps an (N, dim) array of physical vectors to N values.
    """
    idx = spec.stochastic_index
    result = subset_simulate_u(_physical_limit_state(limit_state, spec, design), idx.size, config)
    if sensitivities and spec.n_design:
        grad, err = pf_sensitivities(result, spec, design)
        result.sensitivities, result.sensitivity_errors = grad, err
    return result


def pf_sensitivities(result: SubsetResult, spec: RandomVectorSpec, design) -> tuple[dict[int, float], dict[int, float]]:
    """Score-function estimate of ``dPf/dtheta_j`` for every design variable.

    The last-level failure samples are draws from ``f_X(. | F)``, so
    ``dPf/dtheta = Pf * E[d ln f_X / dtheta | F]``.
    """
    n_design = spec.n_design
    grad = {j: 0.0 for j in range(n_design)}
    err = {j: 0.0 for j in range(n_design)}
    samples = result.failure_samples
    if samples is None or samples.shape[0] == 0:
        return grad, err
    idx = spec.stochastic_index
    u = np.zeros((samples.shape[0], spec.dim))
    u[:, idx] = samples
    margs = spec.at(design)
    x = from_standard_normal(spec, design, u)
    scores = np.zeros((samples.shape[0], n_design))
    for i, m in enumerate(margs):
        if m.design_var is None or not m.stochastic:
            continue
        scores[:, m.design_var] += m.mean_score(x[:, i])
    nf = samples.shape[0]
    for j in range(n_design):
        mean = float(np.mean(scores[:, j]))
        g = result.pf * mean
        sd = float(np.std(scores[:, j], ddof=1)) if nf > 1 else 0.0
        grad[j] = g
        err[j] = math.hypot(result.pf * sd / math.sqrt(nf), g * result.cov)
    return grad, err


def beta_gradient(result: SubsetResult) -> dict[int, float]:
    """``dbeta/dtheta = -(dPf/dtheta) / phi(Phi^-1(Pf))``, zero when Pf sits at 0 or 1."""
    if not 0.0 < result.pf < 1.0:
        return {j: 0.0 for j in result.sensitivities}
    dens = math.exp(-0.5 * result.beta**2) / math.sqrt(2.0 * math.pi)
    return {j: -v / dens for j, v in result.sensitivities.items()}


def crude_monte_carlo(limit_state: LimitState, spec: RandomVectorSpec, design, count: int, seed, chunk: int = 1_000_000):
    """Brute-force ``(pf, standard_error)``; used as an oracle."""
    rng = np.random.default_rng(seed)
    idx = spec.stochastic_index
    failures = 0
    done = 0
    while done < count:
        n = min(chunk, count - done)
        u = np.zeros((n, spec.dim))
        u[:, idx] = rng.standard_normal((n, idx.size))
        failures += int(np.sum(limit_state(from_standard_normal(spec, design, u)) <= 0.0))
        done += n
    pf = failures / count
    return pf, math.sqrt(max(pf * (1.0 - pf), 0.0) / count)


__all__ = [
    "SubsetConfig",
    "SubsetResult",
    "PfFloorError",
    "subset_simulate",
    "subset_simulate_u",
    "generalized_beta",
    "pf_sensitivities",
    "beta_gradient",
    "crude_monte_carlo",
    "norm_cdf",
]
