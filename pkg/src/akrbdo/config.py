"""Run configuration: schema, canonical hashing and problem construction."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from . import kriging, models
from .probability import DesignVector, DomainError, Family, MarginalSpec, RandomVectorSpec
from .rbdo import RbdoProblem, RbdoSettings, derive_seed
from .refine import DEFAULT_K
from .reliability import SubsetConfig


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MarginalEntry(_Strict):
    name: str
    family: Family
    mean: float
    std_dev: Optional[float] = None
    cov: Optional[float] = None
    design_var: Optional[int] = None

    @field_validator("family", mode="before")
    @classmethod
    def _lower(cls, v):
        return v.lower() if isinstance(v, str) else v

    @model_validator(mode="after")
    def _spread(self):
        if self.std_dev is not None and self.cov is not None:
            raise ValueError(f"{self.name}: give std_dev or cov, not both")
        return self

    def spread(self) -> float:
        if self.cov is not None:
            return abs(self.mean) * self.cov
        return 0.0 if self.std_dev is None else self.std_dev


class DesignSettings(_Strict):
    initial: list[float]
    lower: list[float]
    upper: list[float]


class ProblemConfig(_Strict):
    kind: Literal["benchmark", "hull"] = "benchmark"
    name: Optional[str] = None
    params: dict = Field(default_factory=dict)
    marginals: Optional[list[MarginalEntry]] = None
    design: Optional[DesignSettings] = None
    collapse_model: str = "placeholder"
    bound_constants: tuple[float, float] = (1.1, 0.5)

    @model_validator(mode="after")
    def _named(self):
        if self.kind == "benchmark" and not self.name:
            raise ValueError("problem.name is required for a benchmark problem")
        return self


class SubsetSettings(_Strict):
    samples_per_level: int = 10_000
    level_probability: float = 0.1
    proposal_spread: float = 1.0
    max_levels: int = 20


class RefineConfig(_Strict):
    initial_doe_size: int = 50
    batch: int = 50
    candidates: int = 10_000
    chains: int = 50
    burn_in: Optional[int] = Field(default=None, ge=0)
    max_calls: int = 500
    k: float = DEFAULT_K
    epsilon_pf0: float = 5e-2
    basis: kriging.TrendBasis = kriging.TrendBasis.CONSTANT
    grid_points: int = 101
    box_beta: float = 8.0


class OptimizerConfig(_Strict):
    max_iter: int = 50
    gamma: float = 1.0
    alpha: float = 0.5
    base: float = 0.6
    direction_tol: float = 1e-3
    cost_tol: float = 1e-3
    step_tol: float = 1e-2


class RunConfig(_Strict):
    problem: ProblemConfig
    beta_targets: list[float] = Field(default_factory=lambda: [3.0])
    constraint_mode: Literal["system", "component"] = "system"
    design_point: Optional[list[float]] = None
    start: Literal["ddo", "initial"] = "ddo"
    subset: SubsetSettings = Field(default_factory=SubsetSettings)
    refine: RefineConfig = Field(default_factory=RefineConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    verification_samples: int = 100_000
    seed: int = 0
    output_dir: str = "runs/out"

    @model_validator(mode="after")
    def _positive(self):
        if not self.beta_targets or any(not b > 0 for b in self.beta_targets):
            raise ValueError("beta_targets must be positive")
        if not self.refine.epsilon_pf0 > 0:
            raise ValueError("refine.epsilon_pf0 must be positive")
        return self


def load_config(path) -> RunConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as err:
        raise ConfigError(f"cannot read configuration {path}: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    return RunConfig.model_validate(data)


def dump_config(config: RunConfig) -> str:
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=True)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(canonical_json(config.model_dump(mode="json")).encode()).hexdigest()


def subset_config(config: RunConfig, label: str) -> SubsetConfig:
    s = config.subset
    return SubsetConfig(s.samples_per_level, s.level_probability, s.proposal_spread, s.max_levels,
                        derive_seed(config.seed, label))


def rbdo_settings(config: RunConfig) -> RbdoSettings:
    r, o = config.refine, config.optimizer
    return RbdoSettings(
        k=r.k, candidates=r.candidates, chains=r.chains, burn_in=r.burn_in, max_calls=r.max_calls,
        subset=subset_config(config, "rbdo-subset"), verification_samples=config.verification_samples,
        box_beta=r.box_beta, basis=r.basis, max_iter=o.max_iter, direction_tol=o.direction_tol,
        cost_tol=o.cost_tol, step_tol=o.step_tol, gamma=o.gamma, alpha=o.alpha, base=o.base,
    )


def _override_spec(spec: RandomVectorSpec, entries: list[MarginalEntry] | None) -> RandomVectorSpec:
    if entries is None:
        return spec
    if [e.name for e in entries] != list(spec.names):
        raise ConfigError(f"marginal table must list exactly {list(spec.names)} in order")
    try:
        return RandomVectorSpec(tuple(MarginalSpec(e.family, e.mean, e.spread(), e.design_var) for e in entries),
                                spec.names)
    except (DomainError, ValueError) as err:
        raise ConfigError(f"invalid marginal table: {err}") from err


def _override_design(design: DesignVector | None, settings: DesignSettings | None) -> DesignVector | None:
    if settings is None:
        return design
    try:
        return DesignVector(np.array(settings.initial, float), np.array(settings.lower, float),
                            np.array(settings.upper, float))
    except (DomainError, ValueError) as err:
        raise ConfigError(f"invalid design settings: {err}") from err


def build_benchmark(config: RunConfig) -> models.BenchmarkProblem:
    """Benchmark (or hull, wrapped as a benchmark) with any configured overrides."""
    p = config.problem
    try:
        if p.kind == "hull":
            spec = _override_spec(models.hull_random_vector(), p.marginals)
            prob = models.hull_problem(collapse_model=p.collapse_model, bound_constants=tuple(p.bound_constants),
                                       spec=spec)
            bm = models.BenchmarkProblem("HULL", prob.spec, tuple(prob.limit_states), None, prob.design,
                                         cost=prob.cost, cost_design_gradient=prob.cost_design_gradient,
                                         deterministic_constraints=tuple(prob.deterministic_constraints))
        else:
            bm = models.get_benchmark(p.name, **p.params)
    except TypeError as err:
        raise ConfigError(f"invalid benchmark parameters: {err}") from err
    except DomainError as err:
        raise ConfigError(str(err)) from err
    bm.spec = _override_spec(bm.spec, p.marginals)
    bm.design = _override_design(bm.design, p.design)
    if bm.spec.n_design and (bm.design is None or bm.design.values.size != bm.spec.n_design):
        raise ConfigError("design settings do not match the design-linked marginals")
    return bm


def design_point(config: RunConfig, bm: models.BenchmarkProblem):
    if config.design_point is not None:
        if bm.design is None or len(config.design_point) != bm.design.values.size:
            raise ConfigError("design_point does not match the problem's design variables")
        return np.array(config.design_point, dtype=float)
    return None if bm.design is None else bm.design.values.copy()


def build_rbdo_problem(config: RunConfig, bm: models.BenchmarkProblem | None = None) -> RbdoProblem:
    bm = bm or build_benchmark(config)
    if bm.cost is None or bm.design is None:
        raise ConfigError(f"problem {bm.name} has no design problem (cost and design bounds required)")
    r = config.refine
    try:
        return RbdoProblem(
            spec=bm.spec,
            design=bm.design,
            cost=bm.cost,
            cost_design_gradient=bm.cost_design_gradient,
            limit_states=bm.limit_states,
            deterministic_constraints=bm.deterministic_constraints,
            beta_targets=tuple(config.beta_targets),
            constraint_mode=config.constraint_mode,
            epsilon_pf0=r.epsilon_pf0,
            initial_doe_size=r.initial_doe_size,
            enrichment_batch=r.batch,
            seed=derive_seed(config.seed, "rbdo"),
        )
    except DomainError as err:
        raise ConfigError(str(err)) from err


__all__ = [
    "RunConfig",
    "ConfigError",
    "load_config",
    "dump_config",
    "config_hash",
    "canonical_json",
    "build_benchmark",
    "build_rbdo_problem",
    "rbdo_settings",
    "subset_config",
    "design_point",
]
