"""Ring-stiffened pressure hull model and analytic benchmark problems.

Units: lengths in mm, stresses and pressures in MPa, densities in kg/m^3.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np
from scipy import integrate

from .probability import (
    DesignVector,
    DomainError,
    Family,
    MarginalSpec,
    RandomVectorSpec,
    norm_cdf,
    norm_pdf,
)

RHO_STEEL = 7850.0
RHO_SEA = 1026.0

# Order of the physical vector of the hull problem.
HULL_VARIABLES = ("E", "nu", "sigma_y", "L_s", "R", "e", "h_w", "e_w", "w_f", "e_f", "A_n", "A_m", "p0")
HULL_DESIGN = ("e", "h_w", "e_w", "w_f", "e_f")
HULL_INITIAL = (24.0, 156.0, 10.0, 120.0, 24.0)


@dataclass(frozen=True)
class HullGeometry:
    """Single-bay geometry (mm).  Arrays are accepted for vectorized use."""

    e: float
    h_w: float
    e_w: float
    w_f: float
    e_f: float
    L_s: float = 600.0
    R: float = 2488.0

    def __post_init__(self) -> None:
        for name in ("e", "h_w", "e_w", "w_f", "e_f", "L_s", "R"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise DomainError(f"geometry dimension {name} must be strictly positive")

    def to_dict(self) -> dict:
        return {"units": "mm", **{k: float(v) for k, v in self.__dict__.items()}}


@dataclass(frozen=True)
class Material:
    youngs_modulus: float = 200_000.0
    poisson: float = 0.3
    yield_stress: float = 390.0
    rho_steel: float = RHO_STEEL
    rho_sea: float = RHO_SEA

    def __post_init__(self) -> None:
        if np.any(np.asarray(self.youngs_modulus) <= 0) or np.any(np.asarray(self.yield_stress) <= 0):
            raise DomainError("E and yield stress must be positive")
        if not 0.0 < self.poisson < 0.5:
            raise DomainError("Poisson ratio must lie in (0, 0.5)")
        if self.rho_steel <= 0 or self.rho_sea <= 0:
            raise DomainError("densities must be positive")

    def to_dict(self) -> dict:
        return {
            "units": {"youngs_modulus": "MPa", "yield_stress": "MPa", "rho": "kg/m^3"},
            **{k: float(v) for k, v in self.__dict__.items()},
        }


def _volumes(g: HullGeometry):
    r_web = g.R - g.e / 2 - g.h_w / 2
    r_flange = g.R - g.e / 2 - g.h_w - g.e_f / 2
    v_shell = 2 * math.pi * g.R * g.e * g.L_s
    v_web = 2 * math.pi * r_web * g.h_w * g.e_w
    v_flange = 2 * math.pi * r_flange * g.w_f * g.e_f
    v_sea = math.pi * (g.R + g.e / 2) ** 2 * g.L_s
    return v_shell, v_web, v_flange, v_sea


def hull_cost(geometry: HullGeometry, material: Material = Material()):
    """Mass of steel over mass of displaced water for one bay (dimensionless).

    Shell on its mid-surface radius ``R``; web and flange revolved inside the
    shell; displacement measured to the outer surface ``R + e/2``.
    """
    v_shell, v_web, v_flange, v_sea = _volumes(geometry)
    return material.rho_steel * (v_shell + v_web + v_flange) / (material.rho_sea * v_sea)


def hull_cost_gradient(geometry: HullGeometry, material: Material = Material()) -> np.ndarray:
    """Analytic gradient of :func:`hull_cost` with respect to (e, h_w, e_w, w_f, e_f)."""
    g = geometry
    v_shell, v_web, v_flange, v_sea = _volumes(g)
    v_steel = v_shell + v_web + v_flange
    tp = 2 * math.pi
    r_web = g.R - g.e / 2 - g.h_w / 2
    r_flange = g.R - g.e / 2 - g.h_w - g.e_f / 2
    d_steel = np.array([
        tp * g.R * g.L_s - tp * 0.5 * g.h_w * g.e_w - tp * 0.5 * g.w_f * g.e_f,
        tp * (r_web - g.h_w / 2) * g.e_w - tp * g.w_f * g.e_f,
        tp * r_web * g.h_w,
        tp * r_flange * g.e_f,
        tp * g.w_f * (r_flange - g.e_f / 2),
    ])
    d_sea = np.array([math.pi * (g.R + g.e / 2) * g.L_s, 0.0, 0.0, 0.0, 0.0])
    k = material.rho_steel / material.rho_sea
    return k * (d_steel / v_sea - v_steel * d_sea / v_sea**2)


class CollapsePressureModel(Protocol):
    """``(geometry, material, A_n, A_m) -> (p_n_pl, p_m_pl)`` in MPa; mode numbers live on the model."""

    n: int
    m: int

    def __call__(self, geometry: HullGeometry, material: Material, a_n, a_m) -> tuple[np.ndarray, np.ndarray]: ...


def _perry_robertson(p_yield, p_elastic, eta):
    # smaller root of (p_y - p)(p_el - p) = eta p p_el
    s = p_yield + (1.0 + eta) * p_elastic
    return 0.5 * (s - np.sqrt(np.maximum(s * s - 4.0 * p_yield * p_elastic, 0.0)))


@dataclass
class PlaceholderCollapse:
    """NOT the reference formulas: an elastic-buckling-style stand-in for demo runs only.

    Overall mode: ring-buckling pressure ``(n^2 - 1) E I / (R_c^3 L_s)`` of the
    frame plus an effective shell strip, knocked down against the hoop yield
    pressure by a Perry-Robertson interaction driven by ``A_n``.  Interframe
    mode: a Windenburg-type unstiffened-shell formula over the clear frame
    spacing, knocked down by ``A_m / e``.  The interframe formula does not use
    ``m``; it is kept on the model for the interface.
    """

    n: int = 2
    m: int = 14

    def __call__(self, geometry: HullGeometry, material: Material, a_n, a_m):
        g, mat = geometry, material
        E, sy, nu = mat.youngs_modulus, mat.yield_stress, mat.poisson
        b_eff = np.minimum(g.L_s, 1.56 * np.sqrt(g.R * g.e))
        areas = [b_eff * g.e, g.h_w * g.e_w, g.w_f * g.e_f]
        z = [0.0 * g.e, -(g.e / 2 + g.h_w / 2), -(g.e / 2 + g.h_w + g.e_f / 2)]
        own = [b_eff * g.e**3 / 12, g.e_w * g.h_w**3 / 12, g.w_f * g.e_f**3 / 12]
        area = sum(areas)
        zbar = sum(a * zi for a, zi in zip(areas, z)) / area
        inertia = sum(o + a * (zi - zbar) ** 2 for o, a, zi in zip(own, areas, z))
        r_c = g.R + zbar
        p_el_n = (self.n**2 - 1) * E * inertia / (r_c**3 * g.L_s)
        p_y_n = sy * (g.e * g.L_s + areas[1] + areas[2]) / (g.R * g.L_s)
        fiber = np.maximum(g.e / 2 - zbar, zbar + g.e / 2 + g.h_w + g.e_f)
        eta_n = a_n * fiber * area / inertia
        p_n = _perry_robertson(p_y_n, p_el_n, eta_n)

        D = 2 * g.R
        t = g.e / D
        L_clear = g.L_s - g.e_w
        p_el_m = 2.42 * E * t**2.5 / ((1 - nu**2) ** 0.75 * (L_clear / D - 0.45 * np.sqrt(t)))
        p_y_m = sy * g.e / g.R
        p_m = _perry_robertson(p_y_m, p_el_m, a_m / g.e)
        return p_n, p_m


COLLAPSE_MODELS: dict[str, Callable[..., CollapsePressureModel]] = {"placeholder": PlaceholderCollapse}


def register_collapse_model(name: str, factory: Callable[..., CollapsePressureModel]) -> None:
    COLLAPSE_MODELS[name] = factory


def get_collapse_model(name: str, **kwargs) -> CollapsePressureModel:
    try:
        return COLLAPSE_MODELS[name](**kwargs)
    except KeyError:
        raise DomainError(f"unknown collapse model {name!r}; known: {sorted(COLLAPSE_MODELS)}") from None


class CollapseModelError(RuntimeError):
    pass


def _unpack(x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    cols = {name: x[:, i] for i, name in enumerate(HULL_VARIABLES)}
    geom = HullGeometry(cols["e"], cols["h_w"], cols["e_w"], cols["w_f"], cols["e_f"], cols["L_s"], cols["R"])
    mat = Material(cols["E"], float(cols["nu"][0]), cols["sigma_y"])
    return geom, mat, cols


def hull_limit_states(x, collapse_model: CollapsePressureModel):
    """``(g1, g2, g)`` with ``g_i = ln(p_pl / p0)`` and ``g = min(g1, g2)``; rows follow HULL_VARIABLES."""
    geom, mat, cols = _unpack(x)
    p_n, p_m = collapse_model(geom, mat, cols["A_n"], cols["A_m"])
    p_n, p_m = np.asarray(p_n, dtype=float), np.asarray(p_m, dtype=float)
    if np.any(~(p_n > 0)) or np.any(~(p_m > 0)):
        raise CollapseModelError("collapse model returned a nonpositive pressure")
    g1 = np.log(p_n / cols["p0"])
    g2 = np.log(p_m / cols["p0"])
    return g1, g2, np.minimum(g1, g2)


def bs5500_stiffener_bounds(geometry: HullGeometry, material: Material = Material(), c1: float = 1.1, c2: float = 0.5):
    """Placeholder web and flange slenderness limits ``(f1, f2)``; admissible iff ``<= 0``.

    ``f1 = h_w/e_w - c1 sqrt(E/sy)``, ``f2 = w_f/e_f - c2 sqrt(E/sy)``.  An
    infinite constant disables its bound (returns ``-inf``).  The default
    constants are illustrative, not code values.
    """
    root = np.sqrt(material.youngs_modulus / material.yield_stress)

    def bound(ratio, c):
        if math.isinf(c) and c > 0:
            return -math.inf
        return ratio - c * root

    return bound(geometry.h_w / geometry.e_w, c1), bound(geometry.w_f / geometry.e_f, c2)


def hull_random_vector() -> RandomVectorSpec:
    R, L_s = 2488.0, 600.0
    a_n, a_m = 5 * R / 3000, L_s / 300
    LN = Family.LOGNORMAL
    marg = [
        MarginalSpec(LN, 200_000.0, 10_000.0),
        MarginalSpec(Family.DETERMINISTIC, 0.3),
        MarginalSpec(LN, 390.0, 19.5),
        MarginalSpec(Family.DETERMINISTIC, L_s),
        MarginalSpec(Family.DETERMINISTIC, R),
        MarginalSpec(LN, 24.0, 0.72, design_var=0),
        MarginalSpec(LN, 156.0, 4.68, design_var=1),
        MarginalSpec(LN, 10.0, 0.30, design_var=2),
        MarginalSpec(LN, 120.0, 3.60, design_var=3),
        MarginalSpec(LN, 24.0, 0.72, design_var=4),
        MarginalSpec(LN, a_n, 0.5 * a_n),
        MarginalSpec(LN, a_m, 0.5 * a_m),
        MarginalSpec(Family.DETERMINISTIC, 2.0),
    ]
    return RandomVectorSpec(tuple(marg), HULL_VARIABLES)


def geometry_from_means(means) -> HullGeometry:
    m = dict(zip(HULL_VARIABLES, np.asarray(means, dtype=float)))
    return HullGeometry(m["e"], m["h_w"], m["e_w"], m["w_f"], m["e_f"], m["L_s"], m["R"])


def material_from_means(means) -> Material:
    m = dict(zip(HULL_VARIABLES, np.asarray(means, dtype=float)))
    return Material(m["E"], m["nu"], m["sigma_y"])


def hull_problem(
    beta_target: float = 3.0,
    collapse_model: str = "placeholder",
    bound_constants: tuple[float, float] = (1.1, 0.5),
    relative_bounds: float = 0.5,
    spec: RandomVectorSpec | None = None,
    **kwargs,
):
    """RBDO problem for the hull with the named collapse-pressure plugin."""
    from .rbdo import RbdoProblem

    spec = spec or hull_random_vector()
    model = get_collapse_model(collapse_model)
    init = np.array(HULL_INITIAL)
    design = DesignVector(init, init * (1 - relative_bounds), init * (1 + relative_bounds))
    idx = [spec.index(n) for n in HULL_DESIGN]

    def cost(means):
        return float(hull_cost(geometry_from_means(means)))

    def cost_gradient(means):
        return hull_cost_gradient(geometry_from_means(means))

    def bound(i):
        def f(theta):
            means = spec.means(theta)
            return float(bs5500_stiffener_bounds(geometry_from_means(means), material_from_means(means),
                                                 *bound_constants)[i])
        return f

    return RbdoProblem(
        spec=spec,
        design=design,
        cost=cost,
        cost_design_gradient=lambda theta: cost_gradient(spec.means(theta)),
        limit_states=(lambda x: hull_limit_states(x, model)[0], lambda x: hull_limit_states(x, model)[1]),
        deterministic_constraints=(bound(0), bound(1)),
        beta_targets=(beta_target,),
        **kwargs,
    )


# --------------------------------------------------------------------------
# Benchmarks


@dataclass
class BenchmarkProblem:
    name: str
    spec: RandomVectorSpec
    limit_states: tuple[Callable[[np.ndarray], np.ndarray], ...]
    exact_pf: Callable[..., float] | None = None
    design: DesignVector | None = None
    description: str = ""
    params: dict = field(default_factory=dict)
    cost: Callable[[np.ndarray], float] | None = None  # of the mean physical vector
    cost_design_gradient: Callable[[np.ndarray], np.ndarray] | None = None
    deterministic_constraints: tuple[Callable[[np.ndarray], float], ...] = ()  # of theta, <= 0

    @property
    def dimension(self) -> int:
        return self.spec.stochastic_index.size

    def system(self, x) -> np.ndarray:
        out = self.limit_states[0](x)
        for g in self.limit_states[1:]:
            out = np.minimum(out, g(x))
        return out

    def oracle(self, count: int = 10_000_000, seed=0, design=None) -> tuple[float, float]:
        """Brute-force Monte Carlo ``(pf, standard_error)`` of the system limit state."""
        from .reliability import crude_monte_carlo

        return crude_monte_carlo(self.system, self.spec, design, count, seed)


def _standard_normals(n: int, prefix: str = "u") -> RandomVectorSpec:
    return RandomVectorSpec(tuple(MarginalSpec(Family.NORMAL, 0.0, 1.0) for _ in range(n)),
                            tuple(f"{prefix}{i + 1}" for i in range(n)))


def linear(n: int = 2, beta_true: float = 3.0) -> BenchmarkProblem:
    """``g(u) = beta_true - sum(u) / sqrt(n)``; ``Pf = Phi(-beta_true)``."""
    root = math.sqrt(n)

    def g(x):
        return beta_true - np.sum(np.atleast_2d(x), axis=1) / root

    return BenchmarkProblem("LINEAR", _standard_normals(n), (g,), lambda design=None: norm_cdf(-beta_true),
                            description="linear limit state in standard-normal space",
                            params={"n": n, "beta_true": beta_true})


def series_2d(offset: float = 3.0, curvature: float = 0.1) -> BenchmarkProblem:
    """Two curved branches on either side of the origin, combined in series.

    ``g_a = c + k (u1 - u2)^2 - (u1 + u2)/sqrt 2``, ``g_b`` the mirror image.
    In rotated coordinates the failure probability reduces to a 1-D integral,
    used as a second oracle next to crude Monte Carlo.
    """

    def branches(x):
        x = np.atleast_2d(x)
        s = (x[:, 0] + x[:, 1]) / math.sqrt(2.0)
        q = offset + curvature * (x[:, 0] - x[:, 1]) ** 2
        return q - s, q + s

    def g(x):
        a, b = branches(x)
        return np.minimum(a, b)

    def pf(design=None):
        f = lambda v: 2.0 * norm_pdf(v) * norm_cdf(-(offset + 2.0 * curvature * v * v))
        val, _ = integrate.quad(f, -np.inf, np.inf, epsabs=1e-14, epsrel=1e-12)
        return float(val)

    return BenchmarkProblem("SERIES-2D", _standard_normals(2), (g,), pf,
                            description="two-branch nonlinear series system",
                            params={"offset": offset, "curvature": curvature})


def gaussian_1d(c: float = 3.0, theta: float = 0.0) -> BenchmarkProblem:
    """``g = c - x`` with ``x ~ N(theta, 1)``; ``Pf = Phi(theta - c)``, ``dPf/dtheta = phi(c - theta)``."""
    spec = RandomVectorSpec((MarginalSpec(Family.NORMAL, theta, 1.0, design_var=0),), ("x",))

    def g(x):
        return c - np.atleast_2d(x)[:, 0]

    def pf(design=None):
        t = theta if design is None else float(np.atleast_1d(design)[0])
        return norm_cdf(t - c)

    return BenchmarkProblem("GAUSSIAN-1D", spec, (g,), pf,
                            design=DesignVector(np.array([theta]), np.array([theta - 10.0]), np.array([theta + 10.0])),
                            description="shifted Gaussian, closed-form sensitivity", params={"c": c, "theta": theta})


def rbdo_closed_form(
    a: float = 4.0,
    sigma: tuple[float, float] = (1.0, 1.0),
    start: tuple[float, float] = (5.0, 5.0),
    bounds: tuple[float, float] = (0.5, 10.0),
    second_component: bool = True,
) -> BenchmarkProblem:
    """``c = theta1 + theta2``, ``X_i ~ N(theta_i, sigma_i)``, ``g1 = X1 + X2 - a``.

    ``beta = (theta1 + theta2 - a) / |sigma|``, so the RBDO optimum is the line
    ``theta1 + theta2 = a + beta0 |sigma|``.  The optional second component
    ``g2 = g1 + 3 + 0.05 (X1 - X2)^2`` is nonlinear but never governs the
    series system.
    """
    s1, s2 = sigma
    spec = RandomVectorSpec(
        (MarginalSpec(Family.NORMAL, start[0], s1, design_var=0), MarginalSpec(Family.NORMAL, start[1], s2, design_var=1)),
        ("x1", "x2"),
    )
    norm = math.hypot(s1, s2)

    def g1(x):
        x = np.atleast_2d(x)
        return x[:, 0] + x[:, 1] - a

    def g2(x):
        x = np.atleast_2d(x)
        return x[:, 0] + x[:, 1] - a + 3.0 + 0.05 * (x[:, 0] - x[:, 1]) ** 2

    def pf(design):
        t = np.asarray(design, dtype=float)
        return norm_cdf(-(t[0] + t[1] - a) / norm)

    lo, hi = bounds
    design = DesignVector(np.array(start, dtype=float), np.array([lo, lo]), np.array([hi, hi]))
    return BenchmarkProblem(
        "RBDO-CLOSED-FORM", spec, (g1, g2) if second_component else (g1,), pf, design,
        description="linear cost, linear limit state, closed-form RBDO optimum",
        params={"a": a, "sigma": [s1, s2], "start": list(start), "bounds": [lo, hi]},
        cost=lambda means: float(means[0] + means[1]),
        cost_design_gradient=lambda theta: np.ones(2),
    )


def closed_form_optimum_sum(beta0: float, a: float = 4.0, sigma=(1.0, 1.0)) -> float:
    """``theta1 + theta2`` on the RBDO-CLOSED-FORM optimal line."""
    return a + beta0 * math.hypot(*sigma)


def benchmark_problem(benchmark: BenchmarkProblem, beta_targets=(3.0,), **kwargs):
    """:class:`~akrbdo.rbdo.RbdoProblem` for a benchmark that carries a cost and design bounds."""
    from .rbdo import RbdoProblem

    if benchmark.cost is None or benchmark.design is None:
        raise DomainError(f"benchmark {benchmark.name} has no design problem")
    return RbdoProblem(
        spec=benchmark.spec,
        design=benchmark.design,
        cost=benchmark.cost,
        cost_design_gradient=benchmark.cost_design_gradient,
        limit_states=benchmark.limit_states,
        deterministic_constraints=benchmark.deterministic_constraints,
        beta_targets=tuple(beta_targets),
        **kwargs,
    )


def closed_form_problem(beta_target: float, benchmark: BenchmarkProblem | None = None, **kwargs):
    return benchmark_problem(benchmark or rbdo_closed_form(), (beta_target,), **kwargs)


CATALOG_VERSION = 1

BENCHMARKS: dict[str, Callable[..., BenchmarkProblem]] = {
    "LINEAR": linear,
    "SERIES-2D": series_2d,
    "GAUSSIAN-1D": gaussian_1d,
    "RBDO-CLOSED-FORM": rbdo_closed_form,
}


def benchmark_catalog() -> list[BenchmarkProblem]:
    return [factory() for factory in BENCHMARKS.values()]


def get_benchmark(name: str, **params) -> BenchmarkProblem:
    try:
        factory = BENCHMARKS[name.upper()]
    except KeyError:
        raise DomainError(f"unknown benchmark {name!r}; known: {sorted(BENCHMARKS)}") from None
    return factory(**params)
