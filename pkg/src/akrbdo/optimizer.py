"""Polak-He feasible-descent optimizer on normalized design variables.

Search direction: ``delta = -(mu_0 grad c + sum_j mu_j grad f_j)`` where ``mu``
solves, over the unit simplex,

    min  mu_0 gamma psi+  +  sum_j mu_j (psi+ - f_j)  +  1/2 || mu_0 grad c + sum_j mu_j grad f_j ||^2

with ``psi+ = max(0, max_j f_j)``.  The optimal value ``theta <= 0`` is the
optimality function; it vanishes at KKT points.

Step: ``b^k`` with the smallest admissible ``k`` (Armijo on the merit
``max(c(x') - c(x) - gamma psi+(x), psi(x') - psi+(x))``), starting from the
exponent saved by the previous iteration.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .probability import DomainError

logger = logging.getLogger(__name__)

K_MIN, K_MAX = 0, 10


def normalize(design, initial) -> np.ndarray:
    design = np.asarray(design, dtype=float)
    initial = np.asarray(initial, dtype=float)
    if np.any(initial == 0):
        raise DomainError("initial design has a zero component; cannot normalize")
    return design / initial


def denormalize(normalized, initial) -> np.ndarray:
    initial = np.asarray(initial, dtype=float)
    if np.any(initial == 0):
        raise DomainError("initial design has a zero component; cannot normalize")
    return np.asarray(normalized, dtype=float) * initial


@dataclass
class OptIterate:
    design_normalized: np.ndarray
    cost: float
    constraint_values: np.ndarray
    cost_gradient: np.ndarray | None = None
    constraint_gradients: np.ndarray | None = None  # (n_constraints, n)
    step_exponent: int = 0
    info: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.design_normalized = np.asarray(self.design_normalized, dtype=float)
        self.constraint_values = np.atleast_1d(np.asarray(self.constraint_values, dtype=float))
        if self.cost_gradient is not None:
            self.cost_gradient = np.asarray(self.cost_gradient, dtype=float)
        if self.constraint_gradients is not None:
            self.constraint_gradients = np.asarray(self.constraint_gradients, dtype=float).reshape(
                self.constraint_values.size, self.design_normalized.size
            )
        if not K_MIN <= self.step_exponent <= K_MAX:
            raise DomainError("step exponent outside [0, 10]")

    @property
    def psi(self) -> float:
        return float(np.max(self.constraint_values)) if self.constraint_values.size else -math.inf

    @property
    def violation(self) -> float:
        return max(0.0, self.psi)


@dataclass
class Direction:
    delta: np.ndarray
    multipliers: np.ndarray
    theta: float


def solve_simplex_qp(G: np.ndarray, b: np.ndarray, tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    """Primal active-set solution of ``min 1/2 mu'G mu + b'mu`` on the unit simplex."""
    G = np.asarray(G, dtype=float)
    b = np.asarray(b, dtype=float)
    p = b.size
    scale = max(1.0, float(np.max(np.abs(np.diag(G)))) if p else 1.0)
    Gr = G + 1e-13 * scale * np.eye(p)
    obj = 0.5 * np.diag(Gr) + b
    start = int(np.argmin(obj))
    mu = np.zeros(p)
    mu[start] = 1.0
    free = np.zeros(p, dtype=bool)
    free[start] = True
    for _ in range(max_iter):
        F = np.flatnonzero(free)
        nf = F.size
        K = np.zeros((nf + 1, nf + 1))
        K[:nf, :nf] = Gr[np.ix_(F, F)]
        K[:nf, nf] = 1.0
        K[nf, :nf] = 1.0
        rhs = np.concatenate([-b[F], [1.0]])
        sol = np.linalg.solve(K, rhs)
        target = sol[:nf]
        if np.all(target >= -tol):
            mu[:] = 0.0
            mu[F] = np.maximum(target, 0.0)
            mu /= mu.sum()
            lam = sol[nf]
            nu = Gr @ mu + b + lam
            nu[free] = 0.0
            j = int(np.argmin(nu))
            if nu[j] >= -tol:
                return mu
            free[j] = True
            continue
        # Move toward the subspace optimum until the first free component hits zero.
        step = mu[F] - target
        ratios = np.where(target < 0, mu[F] / np.where(step > 0, step, np.inf), np.inf)
        i = int(np.argmin(ratios))
        t = float(ratios[i])
        mu[F] = mu[F] + t * (target - mu[F])
        mu[F[i]] = 0.0
        free[F[i]] = False
        mu = np.maximum(mu, 0.0)
        mu /= mu.sum()
    logger.warning("simplex QP did not converge in %d iterations", max_iter)
    return mu


def polak_he_direction(iterate: OptIterate, gamma: float = 1.0) -> Direction:
    grads = [iterate.cost_gradient] + list(iterate.constraint_gradients if iterate.constraint_gradients is not None else [])
    J = np.vstack(grads)
    if not np.all(np.isfinite(J)):
        raise ValueError("non-finite gradient passed to the direction subproblem")
    psi_plus = iterate.violation
    lin = np.concatenate([[gamma * psi_plus], psi_plus - iterate.constraint_values])
    G = J @ J.T
    mu = solve_simplex_qp(G, lin)
    d = mu @ J
    theta = -(float(mu @ lin) + 0.5 * float(d @ d))
    return Direction(delta=-d, multipliers=mu, theta=theta)


def merit(trial: OptIterate, current: OptIterate, gamma: float = 1.0) -> float:
    psi_plus = current.violation
    return max(trial.cost - current.cost - gamma * psi_plus, trial.psi - psi_plus)


def step_factor(k: int, base: float = 0.6) -> float:
    return base**k


@dataclass
class StepResult:
    iterate: OptIterate
    step_exponent: int
    next_exponent: int
    stalled: bool
    probes: list[int]
    projected: bool = False


def goldstein_armijo_step(
    current: OptIterate,
    direction: Direction,
    evaluator: Callable[[np.ndarray], OptIterate],
    start_exponent: int | None = None,
    base: float = 0.6,
    alpha: float = 0.5,
    gamma: float = 1.0,
    project: Callable[[np.ndarray], tuple[np.ndarray, bool]] | None = None,
) -> StepResult:
    """Largest step ``base**k`` (``k`` from the saved exponent up to 10) passing the Armijo test.

    A step accepted at the first probe lowers the exponent saved for the next
    iteration by one, so the optimizer tries a longer step next time.
    """
    if not np.any(direction.delta):
        raise ValueError("zero search direction")
    k0 = current.step_exponent if start_exponent is None else start_exponent
    k0 = min(max(k0, K_MIN), K_MAX)
    probes: list[int] = []
    for k in range(k0, K_MAX + 1):
        probes.append(k)
        lam = step_factor(k, base)
        z = current.design_normalized + lam * direction.delta
        projected = False
        if project is not None:
            z, projected = project(z)
        trial = evaluator(z)
        if merit(trial, current, gamma) <= alpha * lam * direction.theta:
            nxt = max(k - 1, K_MIN) if k == k0 else k
            trial.step_exponent = nxt
            return StepResult(trial, k, nxt, False, probes, projected)
    logger.info("line search stalled from exponent %d", k0)
    return StepResult(current, K_MAX, k0, True, probes)


@dataclass
class OptRecord:
    iteration: int
    design_normalized: list[float]
    cost: float
    constraint_values: list[float]
    direction_norm: float
    theta: float
    step_exponent: int | None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class OptResult:
    iterate: OptIterate
    converged: bool
    stalled: bool
    iterations: int
    history: list[OptRecord]


def polak_he_minimize(
    evaluator: Callable[[np.ndarray, bool], OptIterate],
    z0,
    max_iter: int = 200,
    tol: float = 1e-8,
    feasibility_tol: float = 1e-8,
    base: float = 0.6,
    alpha: float = 0.5,
    gamma: float = 1.0,
    project=None,
) -> OptResult:
    """Deterministic Polak-He loop.  ``evaluator(z, with_gradients)`` returns an :class:`OptIterate`."""
    cur = evaluator(np.asarray(z0, dtype=float), True)
    history: list[OptRecord] = []
    k_saved = 0
    for it in range(max_iter):
        direc = polak_he_direction(cur, gamma)
        dnorm = float(np.linalg.norm(direc.delta))
        history.append(OptRecord(it, cur.design_normalized.tolist(), cur.cost, cur.constraint_values.tolist(),
                                 dnorm, direc.theta, k_saved))
        if (dnorm <= tol or direc.theta >= -tol * tol) and cur.psi <= feasibility_tol:
            return OptResult(cur, True, False, it, history)
        if dnorm == 0.0:
            return OptResult(cur, False, True, it, history)
        step = goldstein_armijo_step(cur, direc, lambda z: evaluator(z, False), k_saved, base, alpha, gamma, project)
        if step.stalled:
            return OptResult(cur, cur.psi <= feasibility_tol and dnorm <= math.sqrt(tol), True, it, history)
        k_saved = step.next_exponent
        cur = evaluator(step.iterate.design_normalized, True)
        cur.step_exponent = k_saved
    return OptResult(cur, False, False, max_iter, history)


def central_gradient(fun: Callable[[np.ndarray], float], z: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    g = np.empty_like(z)
    for j in range(z.size):
        h = rel_step * max(1.0, abs(z[j]))
        zp, zm = z.copy(), z.copy()
        zp[j] += h
        zm[j] -= h
        g[j] = (fun(zp) - fun(zm)) / (2.0 * h)
    return g


__all__ = [
    "normalize",
    "denormalize",
    "OptIterate",
    "Direction",
    "solve_simplex_qp",
    "polak_he_direction",
    "merit",
    "step_factor",
    "goldstein_armijo_step",
    "polak_he_minimize",
    "central_gradient",
    "StepResult",
    "OptResult",
]
