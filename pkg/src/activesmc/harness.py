"""Experiment runner: JSON configs in, result JSON and CSV traces out.

A run executes ``repeats`` independently seeded copies of one sampler on
one model and aggregates the RMSE of the posterior mean against a
configured truth.  Result files depend only on the config and seed; wall
times go to a separate ``timing.json``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .adaptive import run_adaptive_assmc
from .asmh import run_asmh, write_chain_csv
from .assmc import run_assmc
from .assmc2 import run_assmc2
from .baseline import run_standard_smc
from .smc_core import RngStream, SmcSettings, TemperingSchedule, pilot_adaptive_schedule
from .subspace import GapRule, SubspaceBasis, eigendecompose, estimate_as_matrix, split_basis
from .toymodels import make_model, plane_posterior_moments

log = logging.getLogger(__name__)

THREADS_ENV = "ACTIVESMC_THREADS"

__all__ = [
    "RunConfig",
    "ConfigError",
    "load_config",
    "build_model",
    "resolve_schedule",
    "rmse",
    "run_experiment",
    "compare",
    "spectrum",
]


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSpec(_Strict):
    name: Literal["plane", "banana", "gauss-cauchy"]
    params: dict = Field(default_factory=dict)
    data_seed: Optional[int] = None


class PilotSpec(_Strict):
    n_particles: int = 1000
    target_ess_fraction: float = Field(0.5, gt=0.0, lt=1.0)
    n_moves: int = 1


class GapRuleSpec(_Strict):
    kind: Literal["largest-gap", "explained-variance", "fixed"] = "largest-gap"
    fraction: float = 0.9
    d_a: Optional[int] = None
    threshold: float = 2.0

    def rule(self) -> GapRule:
        return GapRule(self.kind, self.fraction, self.d_a, self.threshold)


class ProposalSpec(_Strict):
    inactive: Literal["prior", "adaptive"] = "prior"
    family: Literal["gaussian", "student-t"] = "gaussian"


class ResampleSpec(_Strict):
    trigger: Literal["ess", "always"] = "ess"
    threshold: float = Field(0.5, gt=0.0, le=1.0)
    scheme: Literal["stratified", "multinomial"] = "stratified"


class OutputSpec(_Strict):
    dir: str = "results"
    name: Optional[str] = None


class RunConfig(_Strict):
    """Validated experiment description (unknown keys are rejected)."""

    model: ModelSpec
    algorithm: Literal["smc", "as-smc", "adaptive-as-smc", "as-smc2", "as-mh"]
    n_particles: int = Field(200, ge=1)
    n_inner: int = Field(10, ge=1)
    n_moves: int = Field(1, ge=0)
    n_iter: Optional[int] = Field(None, ge=0)
    schedule: Union[list[float], PilotSpec] = Field(default_factory=PilotSpec)
    gap_rule: GapRuleSpec = Field(default_factory=GapRuleSpec)
    force_full_active: bool = False
    proposal: ProposalSpec = Field(default_factory=ProposalSpec)
    resample: ResampleSpec = Field(default_factory=ResampleSpec)
    seed: int = Field(0, ge=0)
    repeats: int = Field(10, ge=1)
    truth: Union[Literal["zero", "analytic"], list[float]] = "zero"
    output: OutputSpec = Field(default_factory=OutputSpec)

    @model_validator(mode="after")
    def _check(self):
        if isinstance(self.schedule, list):
            TemperingSchedule(tuple(self.schedule))
        if self.gap_rule.kind == "fixed" and self.gap_rule.d_a is None:
            raise ValueError("gap_rule.kind 'fixed' needs d_a")
        return self

    def settings(self) -> SmcSettings:
        return SmcSettings(
            n_particles=self.n_particles,
            n_inner=self.n_inner,
            n_moves=self.n_moves,
            resample_trigger=self.resample.trigger,
            ess_threshold=self.resample.threshold,
            resample_scheme=self.resample.scheme,
            inactive_proposal=self.proposal.inactive,
            proposal_family=self.proposal.family,
        )

    @property
    def run_name(self) -> str:
        return self.output.name or f"{self.model.name}-{self.algorithm}"


def _line_of(text: str, key) -> int | None:
    needle = f'"{key}"'
    for n, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return n
    return None


def parse_config(text: str) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"])
            key = next((p for p in reversed(err["loc"]) if isinstance(p, str)), None)
            line = _line_of(text, key) if key else None
            where = f" (line {line})" if line else ""
            msgs.append(f"{loc}{where}: {err['msg']}")
        raise ConfigError("; ".join(msgs)) from None


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def dump_config(cfg: RunConfig) -> str:
    return cfg.model_dump_json(indent=2)


def build_model(cfg: RunConfig):
    """The toy model with its synthetic data drawn from a seeded stream."""
    data_seed = cfg.seed if cfg.model.data_seed is None else cfg.model.data_seed
    rng = RngStream(data_seed).generator("data")
    try:
        return make_model(cfg.model.name, rng, **dict(cfg.model.params))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model.params: {exc}") from None


def resolve_schedule(cfg: RunConfig, model=None) -> TemperingSchedule:
    if isinstance(cfg.schedule, list):
        return TemperingSchedule(tuple(cfg.schedule))
    model = model or build_model(cfg)
    p = cfg.schedule
    return pilot_adaptive_schedule(model, p.n_particles, p.target_ess_fraction, RngStream(cfg.seed, ("pilot",)), p.n_moves)


def rmse(estimates, truth) -> np.ndarray:
    """Per-parameter sqrt(mean over repeats of squared error)."""
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    return np.sqrt(np.mean((est - np.asarray(truth, dtype=float)) ** 2, axis=0))


def _truth(cfg: RunConfig, model) -> np.ndarray:
    if cfg.truth == "zero":
        return np.zeros(model.d)
    if cfg.truth == "analytic":
        if cfg.model.name != "plane":
            raise ConfigError("truth 'analytic' is only available for the plane model")
        return plane_posterior_moments(model)[0]
    t = np.asarray(cfg.truth, dtype=float)
    if t.shape != (model.d,):
        raise ConfigError(f"truth has length {t.size}, model has d={model.d}")
    return t


def _basis_override(cfg: RunConfig, d: int):
    return SubspaceBasis.identity(d) if cfg.force_full_active else None


def _run_one(cfg: RunConfig, toy, target, repeat: int) -> dict:
    stream = RngStream(cfg.seed, (repeat,))
    settings = cfg.settings()
    rule = cfg.gap_rule.rule()
    basis = _basis_override(cfg, toy.d)
    if cfg.algorithm == "as-mh":
        n_iter = cfg.n_iter if cfg.n_iter is not None else cfg.n_particles
        if basis is None:
            theta0 = toy.prior.sample(stream.generator("init"), cfg.n_particles)
            basis = split_basis(eigendecompose(estimate_as_matrix(toy.score(theta0))), rule)
        chain = run_asmh(target, basis, n_iter, cfg.n_inner, stream)
        burn = n_iter // 5
        return {
            "posterior_mean": chain.theta[burn:].mean(axis=0),
            "acceptance_rate": chain.acceptance_rate,
            "d_a": basis.d_a,
            "chain": chain,
        }
    if cfg.algorithm == "smc":
        res = run_standard_smc(target, settings, stream)
    elif cfg.algorithm == "as-smc":
        res = run_assmc(target, settings, stream, basis, rule)
    elif cfg.algorithm == "adaptive-as-smc":
        res = run_adaptive_assmc(target, settings, stream, rule)
    else:
        res = run_assmc2(target, settings, stream, basis, rule)
    out = {
        "posterior_mean": res.posterior_mean,
        "posterior_mean_all": res.posterior_mean_all,
        "log_z": res.log_z,
        "n_evals": res.n_evals,
        "ess": res.ess,
        "acceptance": res.acceptance,
        "d_a": res.basis.d_a if res.basis is not None else toy.d,
        "spectra": res.spectra or [],
    }
    return out


def _floats(x):
    return [float(v) for v in np.ravel(x)]


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def run_experiment(cfg: RunConfig, out_dir=None, threads: int | None = None) -> dict:
    """Run every repeat, write result files, and return the summary dict.

    Files written to ``out_dir/<name>/``: ``result.json``, ``logz.csv``,
    ``spectra.csv``, ``timing.json`` and (AS-MH only) ``chain_<r>.csv``.
    """
    threads = threads or int(os.environ.get(THREADS_ENV, "1"))
    out = Path(out_dir or cfg.output.dir) / cfg.run_name
    out.mkdir(parents=True, exist_ok=True)
    toy = build_model(cfg)
    schedule = resolve_schedule(cfg, toy)
    target = toy.target(schedule.temperatures)
    truth = _truth(cfg, toy)

    def job(r):
        t0 = time.perf_counter()
        try:
            res = _run_one(cfg, toy, target, r)
            res["error"] = None
        except Exception as exc:  # recorded, aggregation continues
            log.warning("repeat %d failed: %s", r, exc)
            res = {"error": f"{type(exc).__name__}: {exc}"}
        res["wall_time"] = time.perf_counter() - t0
        return res

    t_start = time.perf_counter()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(job, range(cfg.repeats)))
    else:
        runs = [job(r) for r in range(cfg.repeats)]
    total = time.perf_counter() - t_start

    ok = [r for r in runs if r["error"] is None]
    if len(ok) < len(runs):
        log.warning("%d of %d repeats failed; aggregating over successes", len(runs) - len(ok), len(runs))
    per_param = rmse([r["posterior_mean"] for r in ok], truth) if ok else np.full(toy.d, np.nan)
    repeats = []
    for i, r in enumerate(runs):
        entry = {"repeat": i, "error": r["error"]}
        if r["error"] is None:
            entry["posterior_mean"] = _floats(r["posterior_mean"])
            entry["d_a"] = int(r["d_a"])
            if "log_z" in r:
                entry["posterior_mean_all"] = _floats(r["posterior_mean_all"])
                entry["log_evidence"] = float(r["log_z"][-1])
                entry["n_evals"] = int(r["n_evals"])
                entry["final_ess"] = float(r["ess"][-1]) if len(r["ess"]) else None
                entry["acceptance"] = [_clean(float(a)) for a in r["acceptance"]]
            else:
                entry["acceptance_rate"] = float(r["acceptance_rate"])
        repeats.append(entry)
    summary = {
        "name": cfg.run_name,
        "algorithm": cfg.algorithm,
        "model": {"name": cfg.model.name, "params": cfg.model.params, "d": toy.d, "data": _floats(getattr(toy, "data", []))},
        "config": json.loads(dump_config(cfg)),
        "schedule": list(schedule.temperatures),
        "truth": _floats(truth),
        "rmse": _floats(per_param),
        "mean_rmse": float(np.mean(per_param)),
        "n_success": len(ok),
        "repeats": repeats,
    }
    (out / "result.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    with open(out / "logz.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["repeat", "stage", "log_z"])
        for i, r in enumerate(runs):
            for s, z in enumerate(r.get("log_z", [])):
                w.writerow([i, s, repr(float(z))])
    with open(out / "spectra.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["repeat", "stage", "index", "eigenvalue", "explained_fraction"])
        for i, r in enumerate(runs):
            for s, spec in enumerate(r.get("spectra", [])):
                if spec is None:
                    continue
                frac = spec.explained_fraction()
                for j, lam in enumerate(spec.eigenvalues):
                    w.writerow([i, s, j, repr(float(lam)), repr(float(frac[j]))])
    for i, r in enumerate(runs):
        if "chain" in r:
            write_chain_csv(out / f"chain_{i}.csv", r["chain"])
    timing = {"total_seconds": total, "threads": threads, "per_repeat_seconds": [r["wall_time"] for r in runs]}
    (out / "timing.json").write_text(json.dumps(timing, indent=2))
    return summary


def _summary_row(res: dict) -> dict:
    r = np.asarray(res["rmse"], dtype=float)
    q = np.quantile(r, [0.0, 0.25, 0.5, 0.75, 1.0])
    evals = [x["n_evals"] for x in res["repeats"] if x.get("n_evals") is not None]
    return {
        "name": res["name"],
        "algorithm": res["algorithm"],
        "rmse_min": q[0],
        "rmse_q1": q[1],
        "rmse_median": q[2],
        "rmse_q3": q[3],
        "rmse_max": q[4],
        "rmse_mean": float(r.mean()),
        "mean_evals": float(np.mean(evals)) if evals else None,
        "n_success": res["n_success"],
    }


def compare(paths, out_path=None) -> list[dict]:
    """Per-algorithm RMSE summaries of several result files, as CSV rows."""
    results = [json.loads(Path(p).read_text()) for p in paths]
    if not results:
        raise ValueError("nothing to compare")
    ref = results[0]
    for res in results[1:]:
        if res["model"] != ref["model"] or res["truth"] != ref["truth"]:
            raise ValueError(f"{res['name']} was run on a different model or truth than {ref['name']}")
    rows = [_summary_row(r) for r in results]
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return rows


def spectrum(cfg: RunConfig, out_path=None):
    """Estimate the subspace from ``n_particles`` prior draws."""
    toy = build_model(cfg)
    theta = toy.prior.sample(RngStream(cfg.seed).generator("init"), cfg.n_particles)
    spec = eigendecompose(estimate_as_matrix(toy.score(theta)))
    basis = split_basis(spec, cfg.gap_rule.rule())
    if out_path is not None:
        frac = spec.explained_fraction()
        with open(out_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "eigenvalue", "explained_fraction"])
            for j, lam in enumerate(spec.eigenvalues):
                w.writerow([j, repr(float(lam)), repr(float(frac[j]))])
    return spec, basis
