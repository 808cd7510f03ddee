"""Ordinary/universal kriging with an anisotropic squared-exponential correlation.

The emulator is ``Y(x) = f(x)^T beta + Z(x)`` with ``Cov[Z(x), Z(x')] =
sigma2 * R(x - x')``.  Hyperparameters ``lengths`` are found by maximizing the
profiled likelihood; ``beta`` and ``sigma2`` then follow in closed form.

A tiny nugget keeps the correlation matrix numerically positive definite.  It
is modelled as part of the process (a white component of Z), so it also
appears in the correlation vector at zero distance and the predictor keeps
interpolating the DOE exactly.
"""
from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg, optimize
from scipy.stats import qmc

logger = logging.getLogger(__name__)

FORMAT_NAME = "akrbdo.kriging"
FORMAT_VERSION = 1

_LOG_2PI = math.log(2.0 * math.pi)


class KrigingFitError(RuntimeError):
    pass


class TrendBasis(str, enum.Enum):
    CONSTANT = "constant"
    LINEAR = "linear"

    def size(self, n: int) -> int:
        return 1 if self is TrendBasis.CONSTANT else n + 1

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        ones = np.ones((X.shape[0], 1))
        if self is TrendBasis.CONSTANT:
            return ones
        return np.hstack([ones, X])


@dataclass(frozen=True)
class DesignOfExperiments:
    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self) -> None:
        X = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.asarray(self.outputs, dtype=float).ravel()
        if X.shape[0] != y.size:
            raise ValueError("inputs and outputs disagree on the number of points")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("DOE contains non-finite values")
        if np.unique(X, axis=0).shape[0] != X.shape[0]:
            raise ValueError("DOE contains duplicate input rows")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "outputs", y)

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def extend(self, X, y) -> "DesignOfExperiments":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return DesignOfExperiments(np.vstack([self.inputs, X]), np.concatenate([self.outputs, np.ravel(y)]))


def _check_lengths(lengths) -> np.ndarray:
    lengths = np.atleast_1d(np.asarray(lengths, dtype=float))
    if np.any(~(lengths > 0)) or np.any(~np.isfinite(lengths)):
        raise ValueError("correlation lengths must be positive and finite")
    return lengths


def correlation(x, x_prime, lengths) -> float:
    """``exp(-sum_k ((x_k - x'_k) / l_k)^2)``."""
    lengths = _check_lengths(lengths)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if not (x.shape == x_prime.shape == lengths.shape):
        raise ValueError("dimension mismatch")
    return float(np.exp(-np.sum(((x - x_prime) / lengths) ** 2)))


def _scaled_sqdist(A: np.ndarray, B: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    # Accumulated per axis so identical rows give an exact zero.
    D = np.zeros((A.shape[0], B.shape[0]))
    for k in range(A.shape[1]):
        diff = (A[:, k, None] - B[None, :, k]) / lengths[k]
        D += diff * diff
    return D


def correlation_matrix(A, B, lengths) -> np.ndarray:
    lengths = _check_lengths(lengths)
    return np.exp(-_scaled_sqdist(np.atleast_2d(A), np.atleast_2d(B), lengths))


class _Factor:
    """Cholesky-based quantities shared by the likelihood and the predictor."""

    def __init__(self, doe: DesignOfExperiments, basis: TrendBasis, lengths: np.ndarray, nugget: float):
        X, y = doe.inputs, doe.outputs
        m = X.shape[0]
        self.R = correlation_matrix(X, X, lengths)
        Rn = self.R + nugget * np.eye(m)
        self.Rn = Rn
        self.L = linalg.cholesky(Rn, lower=True, check_finite=False)
        self.F = basis.evaluate(X)
        Ft = linalg.solve_triangular(self.L, self.F, lower=True, check_finite=False)
        yt = linalg.solve_triangular(self.L, y, lower=True, check_finite=False)
        self.Q, self.G = np.linalg.qr(Ft)
        if np.min(np.abs(np.diag(self.G))) <= 1e-12 * max(1.0, np.max(np.abs(np.diag(self.G)))):
            raise KrigingFitError("regression matrix is rank deficient; trend is not identifiable")
        self.beta = linalg.solve_triangular(self.G, self.Q.T @ yt, check_finite=False)
        et = yt - Ft @ self.beta
        self.sigma2 = float(et @ et) / m
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(self.L))))
        resid = y - self.F @ self.beta
        alpha = linalg.cho_solve((self.L, True), resid, check_finite=False)
        # One refinement pass: interpolation accuracy hinges on the residual of this solve.
        alpha = alpha + linalg.cho_solve((self.L, True), resid - Rn @ alpha, check_finite=False)
        self.alpha = alpha
        self.Ft = Ft
        self.m = m


def _degenerate(sigma2: float, y: np.ndarray) -> bool:
    scale = max(1.0, float(np.max(np.abs(y)))) if y.size else 1.0
    return sigma2 <= 1e-24 * scale * scale


def _nll_from_factor(fac: _Factor, y: np.ndarray) -> float:
    m = fac.m
    if _degenerate(fac.sigma2, y):
        # Zero residual: the likelihood is unbounded for every lengths value alike.
        scale = max(1.0, float(np.max(np.abs(y))))
        return 0.5 * m * (_LOG_2PI + math.log(1e-24 * scale * scale)) + 0.5 * m
    return 0.5 * m * (_LOG_2PI + math.log(fac.sigma2)) + 0.5 * fac.logdet + 0.5 * m


def negative_log_likelihood(doe: DesignOfExperiments, basis, lengths, nugget: float = 1e-10) -> float:
    """Profiled negative log-likelihood ``-ln N(y; F beta_hat, sigma2_hat R)``.

    Returns ``inf`` when the correlation matrix is not numerically positive
    definite.
    """
    basis = TrendBasis(basis)
    lengths = _check_lengths(lengths)
    if doe.size < basis.size(doe.dim):
        raise KrigingFitError("fewer DOE points than trend coefficients")
    try:
        fac = _Factor(doe, basis, lengths, nugget)
    except (linalg.LinAlgError, np.linalg.LinAlgError):
        return math.inf
    return _nll_from_factor(fac, doe.outputs)


class _Likelihood:
    """Objective in log-length coordinates with analytic gradient."""

    def __init__(self, doe: DesignOfExperiments, basis: TrendBasis, nugget: float):
        self.doe = doe
        self.basis = basis
        self.nugget = nugget
        X = doe.inputs
        self.sqdiff = np.stack([(X[:, k, None] - X[None, :, k]) ** 2 for k in range(X.shape[1])])

    def __call__(self, log_lengths: np.ndarray) -> tuple[float, np.ndarray]:
        lengths = np.exp(log_lengths)
        try:
            fac = _Factor(self.doe, self.basis, lengths, self.nugget)
        except (linalg.LinAlgError, np.linalg.LinAlgError, KrigingFitError):
            return 1e300, np.zeros_like(log_lengths)
        value = _nll_from_factor(fac, self.doe.outputs)
        if _degenerate(fac.sigma2, self.doe.outputs):
            return value, np.zeros_like(log_lengths)
        Rinv = linalg.cho_solve((fac.L, True), np.eye(fac.m), check_finite=False)
        W = 0.5 * (Rinv - np.outer(fac.alpha, fac.alpha) / fac.sigma2) * fac.R
        grad = np.array([2.0 * np.sum(W * self.sqdiff[k]) / lengths[k] ** 2 for k in range(lengths.size)])
        return value, grad


@dataclass(frozen=True, eq=False)
class KrigingModel:
    basis: TrendBasis
    lengths: np.ndarray
    process_variance: float
    trend_coefficients: np.ndarray
    nugget: float
    doe: DesignOfExperiments
    _fac: _Factor = field(repr=False, default=None)  # type: ignore[assignment]

    @property
    def factorized_correlation(self) -> np.ndarray:
        return self._fac.L

    @property
    def regression_matrix(self) -> np.ndarray:
        return self._fac.F

    @property
    def dim(self) -> int:
        return self.doe.dim

    def predict(self, X, chunk: int = 4096, return_variance: bool = True):
        """Mean and variance at each row of ``X`` (a single vector is also accepted)."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim}-dimensional inputs, got {X.shape[1]}")
        mean = np.empty(X.shape[0])
        var = np.empty(X.shape[0]) if return_variance else None
        for s in range(0, X.shape[0], chunk):
            mu, v = self._predict_block(X[s : s + chunk], return_variance)
            mean[s : s + chunk] = mu
            if return_variance:
                var[s : s + chunk] = v
        if single:
            return (float(mean[0]), float(var[0])) if return_variance else float(mean[0])
        return (mean, var) if return_variance else mean

    def predict_mean(self, X, chunk: int = 4096) -> np.ndarray:
        return self.predict(X, chunk=chunk, return_variance=False)

    def _predict_block(self, X: np.ndarray, return_variance: bool):
        fac = self._fac
        D = _scaled_sqdist(X, self.doe.inputs, self.lengths)
        r = np.exp(-D)
        r[D == 0.0] += self.nugget
        f = self.basis.evaluate(X)
        mean = f @ self.trend_coefficients + r @ fac.alpha
        if not return_variance:
            return mean, None
        v = linalg.solve_triangular(fac.L, r.T, lower=True, check_finite=False)
        u = fac.Ft.T @ v - f.T
        w = linalg.solve_triangular(fac.G, u, trans="T", check_finite=False)
        ratio = 1.0 + self.nugget - np.sum(v * v, axis=0) + np.sum(w * w, axis=0)
        floor = -1e-10
        if np.any(ratio < floor):
            worst = float(ratio.min())
            if worst < -1e-6:
                raise FloatingPointError(f"prediction variance is negative beyond round-off ({worst:.3e} sigma2)")
            logger.debug("clamping prediction variance ratio %.3e", worst)
        return mean, self.process_variance * np.maximum(ratio, 0.0)


def _build(doe: DesignOfExperiments, basis: TrendBasis, lengths: np.ndarray, nugget: float) -> KrigingModel:
    fac = _Factor(doe, basis, lengths, nugget)
    return KrigingModel(
        basis=basis,
        lengths=lengths.copy(),
        process_variance=fac.sigma2,
        trend_coefficients=fac.beta.copy(),
        nugget=float(nugget),
        doe=doe,
        _fac=fac,
    )


def default_length_bounds(doe: DesignOfExperiments) -> tuple[np.ndarray, np.ndarray]:
    span = np.ptp(doe.inputs, axis=0)
    span = np.where(span > 0, span, 1.0)
    return 1e-2 * span, 1e2 * span


def _closest_pair(X: np.ndarray) -> str:
    D = _scaled_sqdist(X, X, np.ones(X.shape[1]))
    np.fill_diagonal(D, np.inf)
    i, j = np.unravel_index(np.argmin(D), D.shape)
    return f"points {min(i, j)} and {max(i, j)} (distance {math.sqrt(D[i, j]):.3e})"


def fit(
    doe: DesignOfExperiments,
    basis=TrendBasis.CONSTANT,
    length_bounds=None,
    seed=0,
    n_starts: int | None = None,
    n_polish: int = 3,
    nugget: float = 1e-10,
    max_nugget: float = 1e-6,
    lengths=None,
) -> KrigingModel:
    """Maximum-likelihood kriging fit.

    ``n_starts`` (default ``10 * dim``) scrambled-Sobol log-length candidates are
    screened on the likelihood; the best ``n_polish`` are polished with bounded
    L-BFGS-B.  Pass ``lengths`` to freeze the hyperparameters instead.
    """
    basis = TrendBasis(basis)
    n = doe.dim
    if doe.size < basis.size(n):
        raise KrigingFitError(f"{doe.size} DOE points cannot identify {basis.size(n)} trend coefficients")

    if lengths is not None:
        best = _check_lengths(lengths)
    else:
        lo, hi = default_length_bounds(doe) if length_bounds is None else map(np.asarray, length_bounds)
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,))
        if np.any(lo <= 0) or np.any(hi < lo):
            raise ValueError("length bounds must be positive intervals")
        best = _search_lengths(doe, basis, np.log(lo), np.log(hi), seed, n_starts or 10 * n, n_polish, nugget, max_nugget)

    # Escalate the nugget on a failed factorization, and also when round-off in
    # the solve spoils interpolation at the DOE points (long lengths, dense DOE).
    tau = nugget
    fallback = None
    while tau <= max_nugget * (1 + 1e-9):
        try:
            model = _build(doe, basis, best, tau)
        except (linalg.LinAlgError, np.linalg.LinAlgError):
            tau *= 10.0
            continue
        if _interpolation_error(model) <= INTERPOLATION_TOL:
            return model
        fallback = fallback or model
        tau *= 10.0
    if fallback is not None:
        logger.warning("interpolation residual %.2e above tolerance at every nugget", _interpolation_error(fallback))
        return fallback
    raise KrigingFitError(f"correlation matrix singular up to nugget {max_nugget:g}; closest {_closest_pair(doe.inputs)}")


INTERPOLATION_TOL = 1e-9


def _interpolation_error(model: KrigingModel) -> float:
    y = model.doe.outputs
    fac = model._fac
    fit_y = fac.F @ model.trend_coefficients + fac.Rn @ fac.alpha
    return float(np.max(np.abs(fit_y - y) / np.maximum(1.0, np.abs(y))))


def _search_lengths(doe, basis, log_lo, log_hi, seed, n_starts, n_polish, nugget, max_nugget) -> np.ndarray:
    n = log_lo.size
    sobol = qmc.Sobol(d=n, scramble=True, seed=np.random.default_rng(seed))
    m = 1 << max(0, math.ceil(math.log2(max(n_starts, 1))))
    starts = qmc.scale(sobol.random(m), log_lo, log_hi) if np.all(log_hi > log_lo) else np.tile(log_lo, (m, 1))
    starts = starts[:n_starts]
    tau = nugget
    while True:
        obj = _Likelihood(doe, basis, tau)
        values = np.array([obj(s)[0] for s in starts])
        if np.min(values) < 1e299 or tau >= max_nugget:
            break
        tau *= 10.0
    order = np.argsort(values, kind="stable")
    best_x, best_f = starts[order[0]], values[order[0]]
    bounds = list(zip(log_lo, log_hi))
    for idx in order[:n_polish]:
        if values[idx] >= 1e299:
            continue
        res = optimize.minimize(obj, starts[idx], jac=True, method="L-BFGS-B", bounds=bounds)
        if res.fun < best_f:
            best_x, best_f = res.x, float(res.fun)
    logger.debug("kriging MLE: nll=%.6g lengths=%s", best_f, np.exp(best_x))
    return np.exp(best_x)


# -- persistence ---------------------------------------------------------------

def model_to_dict(model: KrigingModel) -> dict:
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "basis": model.basis.value,
        "lengths": model.lengths.tolist(),
        "process_variance": model.process_variance,
        "trend_coefficients": model.trend_coefficients.tolist(),
        "nugget": model.nugget,
        "inputs": model.doe.inputs.tolist(),
        "outputs": model.doe.outputs.tolist(),
    }


def model_from_dict(data: dict) -> KrigingModel:
    if data.get("format") != FORMAT_NAME:
        raise ValueError("not a kriging model file")
    if data.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported kriging model version {data.get('version')!r}")
    doe = DesignOfExperiments(np.array(data["inputs"], dtype=float), np.array(data["outputs"], dtype=float))
    model = _build(doe, TrendBasis(data["basis"]), np.array(data["lengths"], dtype=float), float(data["nugget"]))
    # Stored estimates win over the recomputation so a reload is bit-identical.
    object.__setattr__(model, "process_variance", float(data["process_variance"]))
    object.__setattr__(model, "trend_coefficients", np.array(data["trend_coefficients"], dtype=float))
    return model


def save_model(model: KrigingModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), sort_keys=True, indent=1) + "\n")


def load_model(path) -> KrigingModel:
    return model_from_dict(json.loads(Path(path).read_text()))
