"""Nested surrogate-based RBDO.

Outer loop: Polak-He on normalized design variables.  Inner loop: subset
simulation on the kriging mean of every limit state.  Surrogates live in the
augmented reliability space, so they are built once and only enriched when
their bracketing spread at the current design exceeds the tolerance.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import kriging
from .kriging import KrigingModel
from .optimizer import (
    OptIterate,
    central_gradient,
    goldstein_armijo_step,
    polak_he_direction,
    polak_he_minimize,
)
from .probability import DesignVector, DomainError, RandomVectorSpec, augmented_confidence_box
from .refine import DEFAULT_K, RefinementSettings, RoundRecord, enrich, initial_doe
from .reliability import PfFloorError, SubsetConfig, SubsetResult, beta_gradient, generalized_beta, subset_simulate

logger = logging.getLogger(__name__)

LimitState = Callable[[np.ndarray], np.ndarray]
BETA_CLIP = 8.0


def derive_seed(master: int, *labels) -> int:
    """Stable 32-bit seed from a master seed and a label path."""
    words = [int(master) & 0xFFFFFFFF]
    for lab in labels:
        if isinstance(lab, str):
            words.extend(lab.encode())
        else:
            words.append(int(lab) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(words).generate_state(1)[0])


@dataclass
class RbdoProblem:
    spec: RandomVectorSpec
    design: DesignVector
    cost: Callable[[np.ndarray], float]  # of the mean physical vector
    limit_states: Sequence[LimitState]
    deterministic_constraints: Sequence[Callable[[np.ndarray], float]] = ()  # of theta, <= 0
    beta_targets: Sequence[float] = (3.0,)
    cost_design_gradient: Callable[[np.ndarray], np.ndarray] | None = None
    constraint_mode: str = "system"
    epsilon_pf0: float = 5e-2
    initial_doe_size: int = 50
    enrichment_batch: int = 50
    seed: int = 0

    def __post_init__(self) -> None:
        self.beta_targets = tuple(float(b) for b in self.beta_targets)
        if not all(b > 0 for b in self.beta_targets):
            raise DomainError("beta targets must be positive")
        if not self.epsilon_pf0 > 0:
            raise DomainError("epsilon_pf0 must be positive")
        if self.constraint_mode not in ("system", "component"):
            raise DomainError("constraint_mode must be 'system' or 'component'")
        if self.constraint_mode == "system" and len(self.beta_targets) != 1:
            raise DomainError("system mode takes exactly one beta target")
        if self.constraint_mode == "component" and len(self.beta_targets) != len(self.limit_states):
            raise DomainError("component mode takes one beta target per limit state")
        if self.initial_doe_size < 2 or self.enrichment_batch < 1:
            raise DomainError("DOE sizes must be positive")
        if self.spec.n_design != self.design.values.size:
            raise DomainError("design vector size does not match the design-linked marginals")

    def cost_of(self, theta) -> float:
        return float(self.cost(self.spec.means(theta)))


@dataclass
class RbdoSettings:
    k: float = DEFAULT_K
    candidates: int = 10_000
    chains: int = 50
    burn_in: int | None = None
    max_calls: int = 500  # lifetime, per limit state
    subset: SubsetConfig = field(default_factory=SubsetConfig)
    verification_samples: int = 100_000
    box_beta: float = 8.0
    basis: kriging.TrendBasis = kriging.TrendBasis.CONSTANT
    max_iter: int = 50
    direction_tol: float = 1e-3
    cost_tol: float = 1e-3
    step_tol: float = 1e-2
    gamma: float = 1.0
    alpha: float = 0.5
    base: float = 0.6
    fd_step: float = 1e-6


class CallCounter:
    """Wraps a true limit state and counts evaluated rows."""

    def __init__(self, fn: LimitState):
        self.fn = fn
        self.calls = 0
        self.locked = False

    def __call__(self, x):
        if self.locked:
            raise RuntimeError("true limit state called outside enrichment")
        x = np.atleast_2d(x)
        self.calls += x.shape[0]
        return self.fn(x)


@dataclass
class IterationRecord:
    iteration: int
    design: list[float]
    design_normalized: list[float]
    cost: float
    beta: list[float]
    beta_cov: list[float]
    step_exponent: int
    spread: list[float]
    calls: list[int]
    projected: bool = False

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class RbdoHistory:
    iterations: list[IterationRecord]
    converged: bool
    final_design: DesignVector
    flags: dict = field(default_factory=dict)
    rounds: list[dict] = field(default_factory=list)
    models: list[KrigingModel] = field(default_factory=list, repr=False)

    @property
    def calls(self) -> list[int]:
        return self.iterations[-1].calls if self.iterations else []

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "final_design": self.final_design.values.tolist(),
            "flags": dict(self.flags),
            "iterations": [r.to_dict() for r in self.iterations],
            "refinement_rounds": list(self.rounds),
        }


@dataclass
class DdoResult:
    design: DesignVector
    cost: float
    converged: bool
    stalled: bool
    iterations: int
    constraint_values: list[float]
    history: list[dict]

    def to_dict(self) -> dict:
        return {
            "design": self.design.values.tolist(),
            "cost": self.cost,
            "converged": self.converged,
            "stalled": self.stalled,
            "iterations": self.iterations,
            "constraint_values": self.constraint_values,
            "history": self.history,
        }


class _Scaling:
    """theta = z * theta0, with the bounds rewritten as linear constraints on z."""

    def __init__(self, design: DesignVector):
        self.theta0 = design.values.astype(float)
        if np.any(self.theta0 == 0):
            raise DomainError("initial design has a zero component; cannot normalize")
        self.design = design
        a, b = design.lower / self.theta0, design.upper / self.theta0
        self.z_lo, self.z_hi = np.minimum(a, b), np.maximum(a, b)

    def theta(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.theta0

    def z(self, theta) -> np.ndarray:
        return np.asarray(theta, dtype=float) / self.theta0

    def bound_values(self, z) -> np.ndarray:
        return np.concatenate([self.z_lo - z, z - self.z_hi])

    def bound_gradients(self) -> np.ndarray:
        n = self.theta0.size
        return np.vstack([-np.eye(n), np.eye(n)])

    def project(self, z):
        theta, moved = self.design.project(self.theta(z))
        return self.z(theta), moved


def _cost_gradient_z(problem: RbdoProblem, sc: _Scaling, z, fd_step) -> np.ndarray:
    if problem.cost_design_gradient is not None:
        return np.asarray(problem.cost_design_gradient(sc.theta(z)), dtype=float) * sc.theta0
    return central_gradient(lambda zz: problem.cost_of(sc.theta(zz)), z, fd_step)


def _deterministic(problem: RbdoProblem, sc: _Scaling, z, grads: bool, fd_step):
    vals, jac = [], []
    for f in problem.deterministic_constraints:
        vals.append(float(f(sc.theta(z))))
        if grads:
            jac.append(central_gradient(lambda zz: float(f(sc.theta(zz))), z, fd_step))
    return vals, jac


def ddo_solve(problem: RbdoProblem, settings: RbdoSettings = RbdoSettings(), max_iter: int = 200, tol: float = 1e-8) -> DdoResult:
    """Deterministic optimum with every random variable at its mean and ``g_l >= 0`` as constraints."""
    sc = _Scaling(problem.design)
    spec = problem.spec

    def g_means(z):
        x = spec.means(sc.theta(z))[None, :]
        return np.array([float(np.asarray(g(x)).ravel()[0]) for g in problem.limit_states])

    def evaluate(z, grads):
        det_v, det_j = _deterministic(problem, sc, z, grads, settings.fd_step)
        gm = g_means(z)
        vals = np.concatenate([det_v, -gm, sc.bound_values(z)])
        cg, jac = None, None
        if grads:
            cg = _cost_gradient_z(problem, sc, z, settings.fd_step)
            gj = [-central_gradient(lambda zz, l=l: g_means(zz)[l], z, settings.fd_step) for l in range(gm.size)]
            jac = np.vstack([*det_j, *gj, sc.bound_gradients()])
        return OptIterate(z, problem.cost_of(sc.theta(z)), vals, cg, jac)

    res = polak_he_minimize(evaluate, sc.z(problem.design.values), max_iter=max_iter, tol=tol,
                            gamma=settings.gamma, alpha=settings.alpha, base=settings.base, project=sc.project)
    theta = sc.theta(res.iterate.design_normalized)
    if not res.converged:
        logger.warning("DDO did not converge (stalled=%s) after %d iterations", res.stalled, res.iterations)
    return DdoResult(
        design=problem.design.with_values(theta),
        cost=res.iterate.cost,
        converged=res.converged,
        stalled=res.stalled,
        iterations=res.iterations,
        constraint_values=res.iterate.constraint_values.tolist(),
        history=[h.to_dict() for h in res.history],
    )


def _surrogate_mean(models: Sequence[KrigingModel], idx: np.ndarray, which: Sequence[int]) -> LimitState:
    def g(x):
        xr = np.atleast_2d(x)[:, idx]
        out = models[which[0]].predict_mean(xr)
        for l in which[1:]:
            out = np.minimum(out, models[l].predict_mean(xr))
        return out

    return g


def _reliability(problem, models, theta, config: SubsetConfig, grads: bool):
    """Per reliability constraint: ``(beta, cov, dbeta/dtheta or None)`` on the surrogate means."""
    idx = problem.spec.stochastic_index
    n_l = len(problem.limit_states)
    groups = [list(range(n_l))] if problem.constraint_mode == "system" else [[l] for l in range(n_l)]
    out = []
    for c, which in enumerate(groups):
        cfg = replace(config, seed=derive_seed(config.seed, "constraint", c))
        g = _surrogate_mean(models, idx, which)
        try:
            res = subset_simulate(g, problem.spec, theta, cfg, sensitivities=grads)
        except PfFloorError as err:
            beta = generalized_beta(err.pf_bound) if err.pf_bound > 0 else BETA_CLIP
            out.append((max(beta, BETA_CLIP), math.nan, np.zeros(problem.spec.n_design) if grads else None))
            continue
        beta = res.beta if math.isfinite(res.beta) else -BETA_CLIP
        grad = None
        if grads:
            bg = beta_gradient(res)
            grad = np.array([bg.get(j, 0.0) for j in range(problem.spec.n_design)])
        out.append((beta, res.cov, grad))
    return out


def rbdo_solve(
    problem: RbdoProblem,
    settings: RbdoSettings = RbdoSettings(),
    start: DesignVector | None = None,
    on_iteration: Callable[[IterationRecord], None] | None = None,
) -> RbdoHistory:
    """Run the nested surrogate-based RBDO loop from ``start`` (default: the problem's design)."""
    spec = problem.spec
    design = start or problem.design
    sc = _Scaling(design)
    box = augmented_confidence_box(spec, (design.lower, design.upper), settings.box_beta)
    counters = [CallCounter(g) for g in problem.limit_states]
    rounds: list[dict] = []
    n_l = len(counters)

    def refine_settings(stage: int) -> RefinementSettings:
        return RefinementSettings(
            k=settings.k, epsilon_pf0=problem.epsilon_pf0, candidates=settings.candidates,
            batch=problem.enrichment_batch, chains=settings.chains, burn_in=settings.burn_in,
            max_calls=settings.max_calls,
            subset=settings.subset, basis=settings.basis, seed=derive_seed(problem.seed, "refine", stage),
        )

    def run_enrichment(models, theta, stage):
        for c in counters:
            c.locked = False

        def log_round(rec: RoundRecord):
            rounds.append({"iteration": stage, **rec.to_dict()})

        models, states = enrich(models, counters, spec, theta, box, refine_settings(stage),
                                [c.calls for c in counters], log_round)
        for c in counters:
            c.locked = True
        return models, states

    models = []
    for l, c in enumerate(counters):
        doe = initial_doe(c, box, problem.initial_doe_size, derive_seed(problem.seed, "doe", l))
        models.append(kriging.fit(doe, settings.basis, seed=derive_seed(problem.seed, "fit", l)))

    z = sc.z(design.values)
    models, states = run_enrichment(models, sc.theta(z), 0)
    targets = np.array(problem.beta_targets)
    history: list[IterationRecord] = []
    flags = {"stalled": False, "budget_exhausted": False, "projections": 0}
    k_saved = 0
    converged = False
    prev: tuple[float, np.ndarray] | None = None

    def evaluate(zz, grads, seed):
        theta = sc.theta(zz)
        rel = _reliability(problem, models, theta, replace(settings.subset, seed=seed), grads)
        betas = np.array([r[0] for r in rel])
        det_v, det_j = _deterministic(problem, sc, zz, grads, settings.fd_step)
        vals = np.concatenate([targets - betas, det_v, sc.bound_values(zz)])
        cg, jac = None, None
        if grads:
            cg = _cost_gradient_z(problem, sc, zz, settings.fd_step)
            rj = [-r[2] * sc.theta0 for r in rel]
            jac = np.vstack([*rj, *det_j, sc.bound_gradients()])
        it = OptIterate(zz, problem.cost_of(theta), vals, cg, jac)
        it.info = {"beta": betas.tolist(), "cov": [r[1] for r in rel]}
        return it

    projected = False
    for it in range(settings.max_iter):
        seed = derive_seed(problem.seed, "inner", it)
        cur = evaluate(z, True, seed)
        cur.step_exponent = k_saved
        spreads = [s.log10_spread for s in states]
        rec = IterationRecord(it, sc.theta(z).tolist(), z.tolist(), cur.cost, cur.info["beta"], cur.info["cov"],
                              k_saved, spreads, [c.calls for c in counters], projected)
        history.append(rec)
        if on_iteration:
            on_iteration(rec)
        logger.info("iteration %d: cost=%.6g beta=%s spread=%s calls=%s", it, cur.cost, rec.beta, spreads, rec.calls)

        accurate = all(s.converged for s in states)
        if not accurate and any(s.calls_used >= settings.max_calls for s in states):
            flags["budget_exhausted"] = True
            break
        feasible = _feasible(cur, targets, len(problem.deterministic_constraints))
        direc = polak_he_direction(cur, settings.gamma)
        dnorm = float(np.linalg.norm(direc.delta))
        small_move = prev is not None and abs(cur.cost - prev[0]) <= settings.cost_tol * abs(cur.cost) \
            and float(np.max(np.abs(z - prev[1]))) <= settings.step_tol
        if feasible and accurate and (dnorm <= settings.direction_tol or small_move):
            converged = True
            break
        if dnorm == 0.0:
            flags["stalled"] = True
            break

        before = [c.calls for c in counters]
        step = goldstein_armijo_step(cur, direc, lambda zz: evaluate(zz, False, seed), k_saved,
                                     settings.base, settings.alpha, settings.gamma, sc.project)
        if [c.calls for c in counters] != before:
            raise RuntimeError("surrogate-reuse invariant violated: true calls inside the optimizer")
        if step.stalled:
            flags["stalled"] = True
            converged = feasible and accurate
            break
        prev = (cur.cost, z)
        k_saved = step.next_exponent
        z = step.iterate.design_normalized
        projected = step.projected
        flags["projections"] += int(projected)
        models, states = run_enrichment(models, sc.theta(z), it + 1)

    final = design.with_values(sc.theta(z))
    flags["calls"] = [c.calls for c in counters]
    return RbdoHistory(history, converged, final, flags, rounds, list(models))


def _feasible(cur: OptIterate, targets: np.ndarray, n_det: int) -> bool:
    betas = np.array(cur.info["beta"])
    covs = np.nan_to_num(np.array(cur.info["cov"], dtype=float), nan=0.0)
    rel_ok = np.all(betas >= targets - 2.0 * np.abs(betas) * covs)
    n_r = targets.size
    det_ok = np.all(cur.constraint_values[n_r : n_r + n_det] <= 1e-8)
    bounds_ok = np.all(cur.constraint_values[n_r + n_det :] <= 1e-12)
    return bool(rel_ok and det_ok and bounds_ok)


@dataclass
class VerificationReport:
    system: dict
    components: list[dict]
    deterministic_constraints: list[float]
    deterministic_feasible: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _verify_one(g, spec, theta, config) -> dict:
    try:
        return subset_simulate(g, spec, theta, config, sensitivities=False).to_dict()
    except PfFloorError as err:
        return {"pf": 0.0, "pf_upper_bound": err.pf_bound, "beta": None, "cov": None,
                "below_floor": True, "calls": err.calls, "thresholds": list(err.thresholds)}


def verify_limit_states(
    spec: RandomVectorSpec,
    limit_states: Sequence[LimitState],
    design=None,
    samples_per_level: int = 100_000,
    seed: int = 0,
    level_probability: float = 0.1,
    deterministic_constraints: Sequence[Callable[[np.ndarray], float]] = (),
) -> VerificationReport:
    """Subset simulation on the TRUE limit states: the series system and each component."""
    gs = list(limit_states)

    def system(x):
        out = gs[0](x)
        for g in gs[1:]:
            out = np.minimum(out, g(x))
        return out

    cfg = SubsetConfig(samples_per_level, level_probability, seed=seed)
    sys_res = _verify_one(system, spec, design, cfg)
    comps = [_verify_one(g, spec, design, replace(cfg, seed=derive_seed(seed, "component", l))) for l, g in enumerate(gs)]
    det = [float(f(design)) for f in deterministic_constraints]
    return VerificationReport(sys_res, comps, det, all(v <= 1e-8 for v in det))


def verify_design(
    problem: RbdoProblem,
    design,
    samples_per_level: int = 100_000,
    seed: int | None = None,
    level_probability: float = 0.1,
) -> VerificationReport:
    """Reliability of ``design`` on the true limit states, independent of deterministic feasibility."""
    theta = np.asarray(getattr(design, "values", design), dtype=float)
    if np.any(theta < problem.design.lower) or np.any(theta > problem.design.upper):
        raise DomainError("design lies outside its bounds")
    seed = derive_seed(problem.seed, "verify") if seed is None else seed
    return verify_limit_states(problem.spec, problem.limit_states, theta, samples_per_level, seed,
                               level_probability, problem.deterministic_constraints)


__all__ = [
    "RbdoProblem",
    "RbdoSettings",
    "RbdoHistory",
    "IterationRecord",
    "DdoResult",
    "VerificationReport",
    "CallCounter",
    "ddo_solve",
    "rbdo_solve",
    "verify_design",
    "verify_limit_states",
    "derive_seed",
]
