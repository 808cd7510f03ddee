"""Command-line front end.

    akrbdo {reliability,refine,ddo,rbdo,verify} --config run.yaml [--out DIR] [--seed N] [--threads N]

Exit codes: 0 success (including runs flagged not converged), 2 configuration
error, 3 numerical failure.  Every output file carries the manifest hash;
nothing time-dependent is written, so identical manifests give identical bytes.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import logging
import math
import platform
import sys
from pathlib import Path

import numpy as np
import scipy
from pydantic import ValidationError
from threadpoolctl import threadpool_info, threadpool_limits

from . import __version__, kriging
from .config import (
    ConfigError,
    RunConfig,
    build_benchmark,
    build_rbdo_problem,
    config_hash,
    design_point,
    load_config,
    rbdo_settings,
    subset_config,
)
from .probability import augmented_confidence_box
from .rbdo import CallCounter, ddo_solve, derive_seed, rbdo_solve, verify_limit_states
from .refine import RefinementSettings, enrich, initial_doe
from .reliability import PfFloorError, beta_gradient, subset_simulate

logger = logging.getLogger("akrbdo")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


class Artifacts:
    """Writes hash-stamped JSON documents and delimited tables into one directory."""

    def __init__(self, out: Path, config: RunConfig, command: str):
        self.out = Path(out)
        self.hash = config_hash(config)
        self.manifest = {
            "command": command,
            "config": config.model_dump(mode="json"),
            "config_hash": self.hash,
            "seed": config.seed,
            "versions": {"akrbdo": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
            "status": "running",
        }
        path = self.out / "manifest.json"
        if path.exists():
            try:
                old = json.loads(path.read_text()).get("config_hash")
            except (OSError, ValueError) as err:
                raise ConfigError(f"unreadable manifest in {self.out}: {err}") from err
            if old != self.hash:
                raise ConfigError(f"manifest hash mismatch in {self.out}: found {old}, config gives {self.hash}")
        self.out.mkdir(parents=True, exist_ok=True)
        self.write_manifest()

    def write_manifest(self, **status) -> None:
        self.manifest.update(status)
        self._dump("manifest.json", self.manifest)

    def _dump(self, name: str, obj) -> None:
        text = json.dumps(_clean(obj), sort_keys=True, indent=1) + "\n"
        (self.out / name).write_text(text)

    def json(self, name: str, obj: dict) -> None:
        self._dump(name, {"manifest_hash": self.hash, **obj})

    def table(self, name: str, header, rows) -> None:
        buf = io.StringIO()
        buf.write(f"# manifest_hash={self.hash}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        (self.out / name).write_text(buf.getvalue())


# --------------------------------------------------------------------------
# Commands


def cmd_reliability(config: RunConfig, art: Artifacts) -> int:
    bm = build_benchmark(config)
    theta = design_point(config, bm)
    cfg = subset_config(config, "reliability")
    try:
        res = subset_simulate(bm.system, bm.spec, theta, cfg, sensitivities=bm.spec.n_design > 0)
    except PfFloorError as err:
        art.json("result.json", {"pf_upper_bound": err.pf_bound, "thresholds": list(err.thresholds),
                                 "calls": err.calls, "below_floor": True})
        raise
    out = res.to_dict()
    out["beta_gradient"] = {str(k): v for k, v in sorted(beta_gradient(res).items())} if res.sensitivities else {}
    if bm.exact_pf is not None:
        out["reference_pf"] = bm.exact_pf(theta) if theta is not None else bm.exact_pf()
    fs = res.failure_samples
    out["failure_samples"] = {"count": int(fs.shape[0]), "mean_u": fs.mean(axis=0).tolist() if fs.size else []}
    out["problem"] = bm.name
    art.json("result.json", out)
    art.table("levels.csv", ["level", "threshold", "conditional_probability"],
              [(i, t, p) for i, (t, p) in enumerate(zip(res.thresholds, res.level_probabilities))])
    art.write_manifest(status="completed", converged=True)
    return EXIT_OK


def cmd_refine(config: RunConfig, art: Artifacts) -> int:
    bm = build_benchmark(config)
    theta = design_point(config, bm)
    r = config.refine
    bounds = None if bm.design is None else (bm.design.lower, bm.design.upper)
    box = augmented_confidence_box(bm.spec, bounds, r.box_beta)
    settings = RefinementSettings(
        k=r.k, epsilon_pf0=r.epsilon_pf0, candidates=r.candidates, batch=r.batch, chains=r.chains,
        burn_in=r.burn_in, max_calls=r.max_calls, subset=subset_config(config, "refine-subset"), basis=r.basis,
        seed=derive_seed(config.seed, "refine"),
    )
    counters = [CallCounter(g) for g in bm.limit_states]
    models = []
    for l, c in enumerate(counters):
        doe = initial_doe(c, box, r.initial_doe_size, derive_seed(config.seed, "doe", l))
        models.append(kriging.fit(doe, r.basis, seed=derive_seed(config.seed, "fit", l)))
    rounds = []
    models, states = enrich(models, counters, bm.spec, theta, box, settings, on_round=rounds.append)

    art.table("rounds.csv", ["limit_state", "round", "calls", "doe_size", "pf_plus", "pf_zero", "pf_minus", "log10_spread"],
              [(q.limit_state, q.round, q.calls_used, q.doe_size, q.pf_plus, q.pf_zero, q.pf_minus, q.log10_spread)
               for q in rounds])
    summary = []
    for l, (m, st) in enumerate(zip(models, states)):
        kriging.save_model(m, art.out / f"surrogate_{l}.json")
        mean, var = m.predict(m.doe.inputs)
        names = [bm.spec.names[i] for i in bm.spec.stochastic_index]
        art.table(f"doe_{l}.csv", [*names, "output", "prediction", "sigma"],
                  [(*x, y, p, s) for x, y, p, s in zip(m.doe.inputs, m.doe.outputs, mean, np.sqrt(var))])
        _grid(art, f"grid_{l}.csv", m, box, r.grid_points, r.k, names)
        last = st.rounds[-1] if st.rounds else None
        summary.append({
            "limit_state": l, "converged": st.converged, "calls": st.calls_used, "rounds": len(st.rounds) - 1,
            "pf_plus": st.bracketing[0], "pf_zero": st.bracketing[1], "pf_minus": st.bracketing[2],
            "log10_spread": st.log10_spread, "cov": st.cov, "doe_size": m.doe.size,
            "lengths": m.lengths.tolist(), "process_variance": m.process_variance,
            "last_round": last.to_dict() if last else None,
        })
    out = {"problem": bm.name, "limit_states": summary}
    if bm.exact_pf is not None and bm.spec.n_design == 0:
        out["reference_pf"] = bm.exact_pf()
    art.json("result.json", out)
    converged = all(st.converged for st in states)
    if not converged:
        logger.warning("refinement budget exhausted before the spread criterion was met")
    art.write_manifest(status="completed", converged=converged)
    return EXIT_OK


def _grid(art: Artifacts, name, model, box, points, k, names) -> None:
    lo, hi = box.reduced_lower, box.reduced_upper
    if lo.size > 2:
        logger.info("no contour grid for %d-dimensional surrogates", lo.size)
        return
    axes = [np.linspace(a, b, points) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.column_stack([m.ravel() for m in mesh])
    mean, var = model.predict(X)
    sd = np.sqrt(var)
    art.table(name, [*names, "mean", "lower", "upper"],
              [(*x, mu, mu - k * s, mu + k * s) for x, mu, s in zip(X, mean, sd)])


def cmd_ddo(config: RunConfig, art: Artifacts) -> int:
    problem = build_rbdo_problem(config)
    res = ddo_solve(problem, rbdo_settings(config), max_iter=max(200, config.optimizer.max_iter))
    art.json("ddo.json", res.to_dict())
    _ddo_table(art, res)
    art.write_manifest(status="completed", converged=res.converged)
    return EXIT_OK


def _ddo_table(art, res) -> None:
    if not res.history:
        return
    n = len(res.history[0]["design_normalized"])
    art.table("ddo_trajectory.csv", ["iteration", *[f"z{j}" for j in range(n)], "cost", "max_constraint"],
              [(h["iteration"], *h["design_normalized"], h["cost"], max(h["constraint_values"])) for h in res.history])


def cmd_rbdo(config: RunConfig, art: Artifacts) -> int:
    problem = build_rbdo_problem(config)
    settings = rbdo_settings(config)
    start = None
    if config.start == "ddo":
        ddo = ddo_solve(problem, settings)
        art.json("ddo.json", ddo.to_dict())
        _ddo_table(art, ddo)
        start = ddo.design
    records = []
    try:
        hist = rbdo_solve(problem, settings, start=start, on_iteration=records.append)
    except Exception:
        _trajectories(art, records)
        art.write_manifest(status="failed")
        raise
    _trajectories(art, hist.iterations)
    art.json("history.json", hist.to_dict())
    art.table("rounds.csv", ["iteration", "limit_state", "round", "calls", "doe_size", "pf_plus", "pf_zero", "pf_minus",
                             "log10_spread"],
              [(q["iteration"], q["limit_state"], q["round"], q["calls_used"], q["doe_size"], q["pf_plus"],
                q["pf_zero"], q["pf_minus"], q["log10_spread"]) for q in hist.rounds])
    for l, m in enumerate(hist.models):
        kriging.save_model(m, art.out / f"surrogate_{l}.json")
    report = verify_limit_states(problem.spec, problem.limit_states, hist.final_design.values,
                                 config.verification_samples, derive_seed(config.seed, "verify"),
                                 deterministic_constraints=problem.deterministic_constraints)
    art.json("verification.json", {"design": hist.final_design.values.tolist(), **report.to_dict()})
    art.write_manifest(status="completed", converged=hist.converged, flags=hist.flags)
    return EXIT_OK


def _trajectories(art: Artifacts, records) -> None:
    if not records:
        return
    n = len(records[0].design)
    n_b = len(records[0].beta)
    n_l = len(records[0].calls)
    art.table("design.csv", ["iteration", *[f"theta{j}" for j in range(n)], *[f"z{j}" for j in range(n)]],
              [(r.iteration, *r.design, *r.design_normalized) for r in records])
    art.table("beta.csv", ["iteration", *[f"beta{c}" for c in range(n_b)], *[f"cov{c}" for c in range(n_b)], "step_exponent"],
              [(r.iteration, *r.beta, *r.beta_cov, r.step_exponent) for r in records])
    art.table("cost.csv", ["iteration", "cost"], [(r.iteration, r.cost) for r in records])
    art.table("calls.csv", ["iteration", *[f"calls{l}" for l in range(n_l)], *[f"spread{l}" for l in range(n_l)]],
              [(r.iteration, *r.calls, *r.spread) for r in records])


def cmd_verify(config: RunConfig, art: Artifacts) -> int:
    bm = build_benchmark(config)
    theta = design_point(config, bm)
    report = verify_limit_states(bm.spec, bm.limit_states, theta, config.verification_samples,
                                 derive_seed(config.seed, "verify"),
                                 deterministic_constraints=bm.deterministic_constraints)
    art.json("verification.json", {"problem": bm.name, "design": None if theta is None else theta.tolist(),
                                   **report.to_dict()})
    art.write_manifest(status="completed", converged=True)
    return EXIT_OK


COMMANDS = {
    "reliability": cmd_reliability,
    "refine": cmd_refine,
    "ddo": cmd_ddo,
    "rbdo": cmd_rbdo,
    "verify": cmd_verify,
}


def _thread_cap(requested: int) -> int:
    # Only ever lower the pools: OpenBLAS can crash when raised past its start-up size.
    current = [p["num_threads"] for p in threadpool_info()]
    cap = min([requested, *current])
    if cap != requested:
        logger.info("--threads %d capped to %d", requested, cap)
    return cap


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="akrbdo", description="Kriging-assisted reliability-based design optimization")
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", help="output directory (default: output_dir from the config)")
        p.add_argument("--seed", type=int, help="master seed, overrides the config")
        p.add_argument("--threads", type=int, help="cap on BLAS/OpenMP threads")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = RunConfig.model_validate({**config.model_dump(mode="json"), "seed": args.seed})
        art = Artifacts(Path(args.out or config.output_dir), config, args.command)
    except ValidationError as err:
        print(f"configuration error in {args.config}:\n{err}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads is not None and args.threads < 1:
        print("configuration error: --threads must be positive", file=sys.stderr)
        return EXIT_CONFIG

    limits = threadpool_limits(limits=_thread_cap(args.threads)) if args.threads else contextlib.nullcontext()
    with limits:
        try:
            return COMMANDS[args.command](config, art)
        except ConfigError as err:
            print(f"configuration error: {err}", file=sys.stderr)
            art.write_manifest(status="config_error", error=str(err))
            return EXIT_CONFIG
        except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as err:
            logger.error("numerical failure: %s", err)
            art.write_manifest(status="numerical_failure", error=f"{type(err).__name__}: {err}")
            return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
