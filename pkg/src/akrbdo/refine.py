"""Adaptive enrichment of kriging DOEs around the predicted limit-state surface.

Candidates are drawn from a pseudo-density equal to the probability of lying
in the margin of uncertainty ``|G_hat| <= k sigma_hat`` (uniform weight on the
confidence box), reduced to a batch by K-means, and evaluated on the true
limit state.  Enrichment stops once the log10 spread of the bracketing
failure probabilities at the current design falls below a tolerance.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kriging
from .kriging import KrigingModel
from .probability import ConfidenceBox, RandomVectorSpec, from_standard_normal, norm_cdf
from .reliability import PfFloorError, SubsetConfig, subset_simulate
from .sampling import EmptyMarginError, kmeans, latin_hypercube, slice_sample

logger = logging.getLogger(__name__)

DEFAULT_K = 1.959963984540054  # Phi^-1(0.975)


def margin_probability_from(mean, sigma, k: float):
    """Probability that a Gaussian prediction ``N(mean, sigma^2)`` lies in ``[-k sigma, k sigma]``."""
    mean = np.asarray(mean, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = norm_cdf((k * sigma - mean) / sigma) - norm_cdf((-k * sigma - mean) / sigma)
    p = np.where(sigma > 0, p, (mean == 0).astype(float))
    return np.clip(p, 0.0, 1.0)


def margin_probability(model: KrigingModel, x, k: float = DEFAULT_K):
    mean, var = model.predict(x)
    out = margin_probability_from(mean, np.sqrt(var), k)
    return float(out) if np.ndim(out) == 0 else out


def refinement_log_density(model: KrigingModel, x, k: float, box: ConfidenceBox) -> np.ndarray:
    """Unnormalized log pseudo-density: ``log P[x in margin]`` inside the box, ``-inf`` outside."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.full(x.shape[0], -np.inf)
    inside = box.contains(x)
    if np.any(inside):
        p = margin_probability_from(*_mean_sigma(model, x[inside]), k)
        with np.errstate(divide="ignore"):
            out[inside] = np.log(p)
    return out


def _mean_sigma(model: KrigingModel, x):
    mean, var = model.predict(x)
    return mean, np.sqrt(var)


@dataclass
class Bracketing:
    pf_plus: float
    pf_zero: float
    pf_minus: float
    log10_spread: float
    cov: float
    below_floor: bool = False

    def as_tuple(self) -> tuple[float, float, float]:
        return self.pf_plus, self.pf_zero, self.pf_minus


def log10_spread(pf_plus: float, pf_minus: float) -> float:
    if pf_minus <= 0.0:
        return 0.0
    if pf_plus <= 0.0:
        return math.inf
    return math.log10(pf_minus) - math.log10(pf_plus)


def bracketing_probabilities(
    model: KrigingModel,
    spec: RandomVectorSpec,
    design=None,
    k: float = DEFAULT_K,
    config: SubsetConfig = SubsetConfig(),
) -> Bracketing:
    """Failure probabilities of ``G_hat + i k sigma_hat <= 0`` for ``i = +1, 0, -1``.

    One subset simulation targets the widest domain (``i = -1``); the two
    nested domains are then estimated from its conditional failure samples,
    which gives common random numbers and the exact ordering
    ``pf_plus <= pf_zero <= pf_minus``.  When even the widest domain is out
    of reach of the simulation floor, all three are reported as 0.
    """
    idx = spec.stochastic_index

    def lower_bound(x):
        mu, sd = _mean_sigma(model, x[:, idx])
        return mu - k * sd

    try:
        res = subset_simulate(lower_bound, spec, design, config, sensitivities=False)
    except PfFloorError:
        return Bracketing(0.0, 0.0, 0.0, 0.0, math.nan, below_floor=True)
    u = np.zeros((res.failure_samples.shape[0], spec.dim))
    u[:, idx] = res.failure_samples
    x = from_standard_normal(spec, design, u)[:, idx]
    mu, sd = _mean_sigma(model, x)
    nf = x.shape[0]
    frac_zero = float(np.sum(mu <= 0.0)) / nf
    frac_plus = float(np.sum(mu + k * sd <= 0.0)) / nf
    pf_minus = res.pf
    pf_zero, pf_plus = pf_minus * frac_zero, pf_minus * frac_plus
    return Bracketing(pf_plus, pf_zero, pf_minus, log10_spread(pf_plus, pf_minus), res.cov)


@dataclass
class RefinementSettings:
    k: float = DEFAULT_K
    epsilon_pf0: float = 5e-2
    candidates: int = 10_000
    batch: int = 50
    chains: int = 50
    burn_in: int | None = None  # sweeps; None means 100 * dim
    max_calls: int = 500
    subset: SubsetConfig = field(default_factory=SubsetConfig)
    basis: kriging.TrendBasis = kriging.TrendBasis.CONSTANT
    seed: int = 0


@dataclass
class RoundRecord:
    limit_state: int
    round: int
    calls_used: int
    doe_size: int
    pf_plus: float
    pf_zero: float
    pf_minus: float
    log10_spread: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class RefinementState:
    candidates: np.ndarray | None = None
    centers: np.ndarray | None = None
    bracketing: tuple[float, float, float] = (math.nan, math.nan, math.nan)
    log10_spread: float = math.inf
    cov: float = math.nan
    calls_used: int = 0
    converged: bool = False
    rounds: list[RoundRecord] = field(default_factory=list)


def _seed(*parts: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts])


def _drop_close(points: np.ndarray, existing: np.ndarray, tol: float) -> np.ndarray:
    keep = []
    ref = existing
    for p in points:
        if ref.shape[0] and np.min(np.linalg.norm(ref - p, axis=1)) <= tol:
            continue
        keep.append(p)
        ref = np.vstack([ref, p])
    return np.array(keep).reshape(-1, points.shape[1])


def enrich_one(
    model: KrigingModel,
    limit_state: Callable[[np.ndarray], np.ndarray],
    spec: RandomVectorSpec,
    design,
    box: ConfidenceBox,
    settings: RefinementSettings,
    calls_used: int = 0,
    label: int = 0,
    on_round: Callable[[RoundRecord], None] | None = None,
    round_offset: int = 0,
) -> tuple[KrigingModel, RefinementState]:
    """Refine one surrogate until its bracketing spread at ``design`` meets the tolerance.

    ``limit_state`` is the true function on full physical rows; ``calls_used``
    carries previously spent evaluations so that ``settings.max_calls`` is a
    lifetime budget.
    """
    state = RefinementState(calls_used=calls_used)
    tol = 1e-8 * box.diagonal
    rnd = round_offset
    confirmed_empty = False
    while True:
        cfg = _subset_for(settings.subset, settings.seed, label, rnd)
        br = bracketing_probabilities(model, spec, design, settings.k, cfg)
        state.bracketing = br.as_tuple()
        state.log10_spread = br.log10_spread
        state.cov = br.cov
        rec = RoundRecord(label, rnd, state.calls_used, model.doe.size, *br.as_tuple(), br.log10_spread)
        state.rounds.append(rec)
        if on_round:
            on_round(rec)
        logger.info("limit state %d round %d: calls=%d pf=(%.3e, %.3e, %.3e) spread=%.4f",
                    label, rnd, state.calls_used, *br.as_tuple(), br.log10_spread)
        if br.log10_spread <= settings.epsilon_pf0 or confirmed_empty:
            state.converged = br.log10_spread <= settings.epsilon_pf0 or confirmed_empty
            return model, state
        room = settings.max_calls - state.calls_used
        if room <= 0:
            return model, state
        rnd += 1
        seq = _seed(settings.seed, label, rnd, 7)
        s_slice, s_km, s_fit = seq.spawn(3)
        try:
            cand = slice_sample(
                lambda z: refinement_log_density(model, z, settings.k, box),
                box, settings.candidates, s_slice, chains=settings.chains,
                burn_in=settings.burn_in,
            )
        except EmptyMarginError:
            logger.info("limit state %d: empty margin; confirming spread", label)
            confirmed_empty = True
            continue
        n_clusters = min(settings.batch, room, np.unique(cand, axis=0).shape[0])
        centers = kmeans(cand, n_clusters, s_km)
        state.candidates, state.centers = cand, centers
        new = _drop_close(centers, model.doe.inputs, tol)
        if new.shape[0] == 0:
            logger.info("limit state %d: all centers duplicate existing DOE points", label)
            return model, state
        y = np.asarray(limit_state(box.embed(new)), dtype=float)
        state.calls_used += new.shape[0]
        model = kriging.fit(model.doe.extend(new, y), settings.basis, seed=s_fit)


def _subset_for(base: SubsetConfig, seed: int, label: int, rnd: int) -> SubsetConfig:
    s = int(_seed(seed, label, rnd, 11).generate_state(1)[0])
    return SubsetConfig(base.samples_per_level, base.level_probability, base.proposal_spread, base.max_levels, s)


def initial_doe(limit_state, box: ConfidenceBox, size: int, seed) -> kriging.DesignOfExperiments:
    X = latin_hypercube(box, size, seed)
    return kriging.DesignOfExperiments(X, np.asarray(limit_state(box.embed(X)), dtype=float))


def enrich(
    models: Sequence[KrigingModel],
    limit_states: Sequence[Callable[[np.ndarray], np.ndarray]],
    spec: RandomVectorSpec,
    design,
    box: ConfidenceBox,
    settings: RefinementSettings,
    calls_used: Sequence[int] | None = None,
    on_round: Callable[[RoundRecord], None] | None = None,
    round_offset: int = 0,
) -> tuple[list[KrigingModel], list[RefinementState]]:
    """Refine every surrogate in turn; see :func:`enrich_one`."""
    calls_used = list(calls_used) if calls_used is not None else [m.doe.size for m in models]
    out_models, states = [], []
    for l, (model, g) in enumerate(zip(models, limit_states)):
        m, st = enrich_one(model, g, spec, design, box, settings, calls_used[l], l, on_round, round_offset)
        out_models.append(m)
        states.append(st)
    return out_models, states
