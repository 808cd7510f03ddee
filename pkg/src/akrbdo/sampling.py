"""Sampling utilities for the refinement loop: LHS, slice sampling, K-means."""
from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .probability import ConfidenceBox, DomainError

LogDensity = Callable[[np.ndarray], np.ndarray]


class EmptyMarginError(RuntimeError):
    """No point with finite log-density was found inside the box."""


def _box_bounds(box) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(box, ConfidenceBox):
        return box.reduced_lower, box.reduced_upper
    lo, hi = box
    return np.atleast_1d(np.asarray(lo, dtype=float)), np.atleast_1d(np.asarray(hi, dtype=float))


def latin_hypercube(box, count: int, seed) -> np.ndarray:
    lo, hi = _box_bounds(box)
    sampler = qmc.LatinHypercube(d=lo.size, seed=np.random.default_rng(seed))
    return qmc.scale(sampler.random(count), lo, hi)


def find_start(log_density: LogDensity, box, count: int, rng: np.random.Generator, max_trials: int = 100_000) -> np.ndarray:
    """``count`` starting points with finite log-density, by rejection from uniform-in-box."""
    lo, hi = _box_bounds(box)
    found = []
    tried = 0
    batch = min(max_trials, max(1000, 10 * count))
    while tried < max_trials and sum(len(f) for f in found) < count:
        n = min(batch, max_trials - tried)
        x = lo + (hi - lo) * rng.uniform(size=(n, lo.size))
        ok = np.isfinite(log_density(x))
        found.append(x[ok])
        tried += n
    pts = np.concatenate(found) if found else np.empty((0, lo.size))
    if pts.shape[0] == 0:
        raise EmptyMarginError(f"no finite log-density in {max_trials} uniform trials")
    if pts.shape[0] < count:
        pts = pts[np.arange(count) % pts.shape[0]]
    return pts[:count]


def slice_sample(
    log_density: LogDensity,
    box,
    N: int,
    seed,
    chains: int = 1,
    burn_in: int | None = None,
    thin: int | None = None,
    width=None,
    max_step_out: int = 50,
) -> np.ndarray:
    """Univariate slice-within-Gibbs sampling with step-out and shrinkage.

    ``log_density`` is vectorized over rows and must return ``-inf`` outside
    the support.  ``chains`` independent chains advance in lock-step; rows of
    the output are interleaved (sweep-major) and truncated to ``N``.  Defaults:
    ``burn_in = 100 * dim`` sweeps, ``thin = dim`` sweeps, per-axis width equal to
    one twentieth of the box width.
    """
    lo, hi = _box_bounds(box)
    n = lo.size
    rng = np.random.default_rng(seed)
    burn_in = 100 * n if burn_in is None else burn_in
    thin = n if thin is None else max(1, thin)
    w = (hi - lo) / 20.0 if width is None else np.broadcast_to(np.asarray(width, dtype=float), (n,))

    x = find_start(log_density, (lo, hi), chains, rng)
    lp = np.asarray(log_density(x), dtype=float)
    per_chain = math.ceil(N / chains)
    out = np.empty((per_chain, chains, n))
    total = burn_in + per_chain * thin
    kept = 0
    for sweep in range(total):
        for d in range(n):
            x, lp = _slice_axis(log_density, x, lp, d, w[d], rng, max_step_out)
        if sweep >= burn_in and (sweep - burn_in + 1) % thin == 0:
            out[kept] = x
            kept += 1
    return out.reshape(per_chain * chains, n)[:N]


def _slice_axis(log_density, x, lp, d, width, rng, max_step_out):
    c = x.shape[0]
    log_y = lp - rng.exponential(size=c)
    left = x[:, d] - width * rng.uniform(size=c)
    right = left + width

    def lp_at(rows, values):
        z = x[rows].copy()
        z[:, d] = values
        return np.asarray(log_density(z), dtype=float)

    for side, sign in ((0, -1.0), (1, 1.0)):
        active = np.arange(c)
        for _ in range(max_step_out):
            edge = left[active] if side == 0 else right[active]
            still = lp_at(active, edge) > log_y[active]
            active = active[still]
            if active.size == 0:
                break
            if side == 0:
                left[active] -= width
            else:
                right[active] += width

    new_x = x[:, d].copy()
    new_lp = lp.copy()
    pending = np.arange(c)
    while pending.size:
        prop = left[pending] + (right[pending] - left[pending]) * rng.uniform(size=pending.size)
        lpp = lp_at(pending, prop)
        ok = lpp > log_y[pending]
        new_x[pending[ok]] = prop[ok]
        new_lp[pending[ok]] = lpp[ok]
        bad = pending[~ok]
        below = prop[~ok] < x[bad, d]
        left[bad[below]] = prop[~ok][below]
        right[bad[~below]] = prop[~ok][~below]
        pending = bad
    x = x.copy()
    x[:, d] = new_x
    return x, new_lp


def _sqdist(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = np.zeros((points.shape[0], centers.shape[0]))
    for k in range(points.shape[1]):
        diff = points[:, k, None] - centers[None, :, k]
        d += diff * diff
    return d


def kmeans(points, K: int, seed, max_iter: int = 100, return_history: bool = False):
    """Lloyd's algorithm from k-means++ seeding.

    Stops at an assignment fixpoint or after ``max_iter`` iterations.  With
    ``return_history`` the within-cluster sum of squares after every
    iteration is returned as well.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    m = X.shape[0]
    n_distinct = np.unique(X, axis=0).shape[0]
    if not 1 <= K <= n_distinct:
        raise DomainError(f"K={K} exceeds the {n_distinct} distinct points")
    rng = np.random.default_rng(seed)

    centers = np.empty((K, X.shape[1]))
    centers[0] = X[rng.integers(m)]
    closest = _sqdist(X, centers[:1]).ravel()
    for i in range(1, K):
        total = closest.sum()
        if total <= 0:
            break
        j = int(np.searchsorted(np.cumsum(closest), rng.uniform() * total, side="right"))
        centers[i] = X[min(j, m - 1)]
        closest = np.minimum(closest, _sqdist(X, centers[i : i + 1]).ravel())

    labels = None
    history = []
    for _ in range(max_iter):
        d = _sqdist(X, centers)
        new_labels = np.argmin(d, axis=1)
        history.append(float(d[np.arange(m), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for k in range(K):
            members = labels == k
            if np.any(members):
                centers[k] = X[members].mean(axis=0)
            else:
                # Re-seed an empty cluster at the worst-served point.
                far = int(np.argmax(d[np.arange(m), labels]))
                centers[k] = X[far]
                labels[far] = k
    if return_history:
        return centers, history
    return centers
