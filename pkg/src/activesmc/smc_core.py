"""Shared SMC machinery.

Weights are kept in log space throughout.  Random numbers come from
:class:`RngStream` objects keyed by a path such as ``(repeat, stage,
"move")``; a path always maps to the same generator, so results do not
depend on how work is scheduled across threads.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RngStream",
    "TemperingSchedule",
    "CountingTarget",
    "logsumexp",
    "normalise_log_weights",
    "ess",
    "stratified_resample",
    "multinomial_resample",
    "multinomial_draw",
    "resample",
    "sample_rows",
    "log_weighted_mean",
    "log_evidence_accumulate",
    "adapt_rw_covariance",
    "safe_cholesky",
    "RandomWalk",
    "SmcSettings",
    "SmcResult",
    "pilot_adaptive_schedule",
]

RW_SCALE = 2.38**2


class RngStream:
    """Deterministic tree of random streams.

    ``RngStream(seed).child("move", 3).generator()`` always returns a
    generator in the same state; different paths give independent streams
    (numpy ``SeedSequence`` spawn keys).
    """

    def __init__(self, seed: int, path: tuple = ()):
        self.seed = int(seed)
        self.path = tuple(path)

    @staticmethod
    def _key(k) -> int:
        if isinstance(k, str):
            return zlib.crc32(k.encode())
        k = int(k)
        if k < 0:
            raise ValueError("stream keys must be nonnegative")
        return k

    def child(self, *keys) -> "RngStream":
        return RngStream(self.seed, self.path + tuple(keys))

    def generator(self, *keys) -> np.random.Generator:
        path = self.path + tuple(keys)
        ss = np.random.SeedSequence(self.seed, spawn_key=tuple(self._key(k) for k in path))
        return np.random.default_rng(ss)

    def __repr__(self):
        return f"RngStream({self.seed}, {self.path!r})"


@dataclass(frozen=True)
class TemperingSchedule:
    temperatures: tuple

    def __post_init__(self):
        eta = np.asarray(self.temperatures, dtype=float)
        if eta.ndim != 1 or len(eta) < 2:
            raise ValueError("a schedule needs at least two temperatures")
        if eta[0] != 0.0 or eta[-1] != 1.0:
            raise ValueError("schedule must start at 0 and end at 1")
        if np.any(np.diff(eta) <= 0):
            raise ValueError("schedule must be strictly increasing")
        object.__setattr__(self, "temperatures", tuple(float(x) for x in eta))

    @property
    def T(self) -> int:
        return len(self.temperatures) - 1

    def to_json(self) -> str:
        return json.dumps(list(self.temperatures))

    @classmethod
    def from_json(cls, text: str) -> "TemperingSchedule":
        return cls(tuple(json.loads(text)))


class CountingTarget:
    """Proxy around a TargetModel counting likelihood evaluations (one per
    theta point, however many stages are read off it)."""

    def __init__(self, model):
        self.model = model
        self.n_evals = 0

    def __getattr__(self, name):
        return getattr(self.model, name)

    def _count(self, theta):
        self.n_evals += int(np.prod(np.shape(theta)[:-1], dtype=np.int64))

    def log_l(self, theta, t):
        if t > 0:
            self._count(theta)
        return self.model.log_l(theta, t)

    def log_l_pair(self, theta, t):
        self._count(theta)
        return self.model.log_l_pair(theta, t)



def logsumexp(x, axis=None, keepdims=False):
    """log(sum(exp(x))) along ``axis``, shifted by the maximum.

    A lean stand-in for :func:`scipy.special.logsumexp`; the samplers call
    it on small arrays inside tight loops where the scipy wrapper overhead
    dominates.
    """
    x = np.asarray(x, dtype=float)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    if not keepdims:
        out = np.squeeze(out, axis=axis) if axis is not None else out.reshape(())
    return out[()] if out.ndim == 0 else out

def normalise_log_weights(log_w, axis=-1) -> np.ndarray:
    """Normalised weights (natural scale) from log weights."""
    log_w = np.asarray(log_w, dtype=float)
    if np.all(np.isneginf(log_w)):
        raise FloatingPointError("all weights are zero")
    return np.exp(log_w - logsumexp(log_w, axis=axis, keepdims=True))


def ess(log_w) -> float:
    """Effective sample size (sum w)^2 / sum w^2 of unnormalised log weights."""
    log_w = np.asarray(log_w, dtype=float)
    if log_w.size == 0 or not np.any(np.isfinite(log_w)):
        raise FloatingPointError("population has died: no finite log weight")
    if np.any(np.isnan(log_w)) or np.any(log_w == np.inf):
        raise FloatingPointError("log weights contain nan or +inf")
    return float(np.exp(2.0 * logsumexp(log_w) - logsumexp(2.0 * log_w)))


def _cumulative(weights):
    w = np.asarray(weights, dtype=float)
    cw = np.cumsum(w)
    cw /= cw[-1]
    cw[-1] = 1.0
    return cw


def stratified_resample(weights, n: int, rng: np.random.Generator) -> np.ndarray:
    """One uniform per stratum ((k + U_k) / n) inverted through the CDF."""
    cw = _cumulative(weights)
    u = (np.arange(n) + rng.uniform(size=n)) / n
    return np.minimum(np.searchsorted(cw, u, side="right"), len(cw) - 1)


def multinomial_resample(weights, n: int, rng: np.random.Generator) -> np.ndarray:
    """n independent categorical draws."""
    cw = _cumulative(weights)
    return np.minimum(np.searchsorted(cw, rng.uniform(size=n), side="right"), len(cw) - 1)


def multinomial_draw(weights, rng: np.random.Generator) -> int:
    return int(multinomial_resample(weights, 1, rng)[0])


def resample(weights, n: int, rng: np.random.Generator, scheme: str = "stratified") -> np.ndarray:
    if scheme == "stratified":
        return stratified_resample(weights, n, rng)
    if scheme == "multinomial":
        return multinomial_resample(weights, n, rng)
    raise ValueError(f"unknown resampling scheme {scheme!r}")


def sample_rows(log_w, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of a (M, K) array of log weights."""
    log_w = np.asarray(log_w, dtype=float)
    M, K = log_w.shape
    u = rng.uniform(size=M)
    if K == 1:
        return np.zeros(M, dtype=np.intp)
    w = normalise_log_weights(log_w, axis=1)
    cw = np.cumsum(w, axis=1)
    cw /= cw[:, -1:]
    return np.minimum(np.sum(cw <= u[:, None], axis=1), K - 1)


def log_weighted_mean(log_w_prev, log_incr) -> float:
    """log sum_m W_m exp(incr_m) with W the normalised previous weights."""
    log_w_prev = np.asarray(log_w_prev, dtype=float)
    return float(logsumexp(log_w_prev + log_incr) - logsumexp(log_w_prev))


def log_evidence_accumulate(stage_log_means) -> np.ndarray:
    """Running log Z_t from per-stage log mean incremental weights."""
    return np.cumsum(np.asarray(stage_log_means, dtype=float))


def adapt_rw_covariance(x, weights, fallback=None, jitter: float = 1e-10) -> np.ndarray:
    """Random-walk covariance (2.38^2 / k) * weighted covariance of ``x``.

    A ``jitter * trace`` ridge is added.  Populations with zero spread get
    ``fallback`` (identity when omitted).
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    k = x.shape[1]
    mu = w @ x
    diff = x - mu
    cov = (diff * w[:, None]).T @ diff
    cov = RW_SCALE / k * 0.5 * (cov + cov.T)
    tr = np.trace(cov)
    if not np.isfinite(tr) or tr <= 0:
        return np.eye(k) if fallback is None else np.asarray(fallback, dtype=float)
    return cov + jitter * tr * np.eye(k)


def safe_cholesky(cov, fallback=None) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    floor = 1e-10 * max(vals.max(), 0.0)
    if floor <= 0:
        return np.linalg.cholesky(np.eye(len(cov)) if fallback is None else fallback)
    fixed = (vecs * np.maximum(vals, floor)) @ vecs.T
    return np.linalg.cholesky(0.5 * (fixed + fixed.T))


class RandomWalk:
    """Symmetric Gaussian random-walk proposal x* = x + L z."""

    def __init__(self, cov):
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        self.cov = cov
        self.chol = safe_cholesky(cov) if cov.size else cov

    @property
    def k(self) -> int:
        return self.cov.shape[0]

    def propose(self, x, rng: np.random.Generator) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x + rng.standard_normal(x.shape) @ self.chol.T

    def log_ratio(self, x, x_prop) -> np.ndarray:
        """log q(x | x*) - log q(x* | x); zero for a symmetric walk."""
        return np.zeros(np.shape(x)[:-1])


@dataclass
class SmcSettings:
    """Knobs shared by the SMC samplers.

    ``n_particles`` is N_a for the active-subspace samplers and N for the
    standard sampler.  ``resample_trigger`` is ``"ess"`` (resample when
    ESS < ``ess_threshold`` * N) or ``"always"``; ``resample_scheme`` is
    ``"stratified"`` or ``"multinomial"`` (one independent ancestor draw per
    particle, as in the algorithm listings).
    """

    n_particles: int = 200
    n_inner: int = 10
    n_moves: int = 1
    resample_trigger: str = "ess"
    ess_threshold: float = 0.5
    resample_scheme: str = "stratified"
    inactive_proposal: str = "prior"
    proposal_family: str = "gaussian"
    inner_ess_threshold: float = 0.5

    def __post_init__(self):
        if self.n_particles < 1 or self.n_inner < 1 or self.n_moves < 0:
            raise ValueError("particle counts must be positive and n_moves nonnegative")
        if self.resample_trigger not in ("ess", "always"):
            raise ValueError(f"unknown resample trigger {self.resample_trigger!r}")
        if self.resample_scheme not in ("stratified", "multinomial"):
            raise ValueError(f"unknown resampling scheme {self.resample_scheme!r}")
        if self.inactive_proposal not in ("prior", "adaptive"):
            raise ValueError(f"unknown inactive proposal {self.inactive_proposal!r}")
        if self.proposal_family not in ("gaussian", "student-t"):
            raise ValueError(f"unknown proposal family {self.proposal_family!r}")

    def should_resample(self, log_w) -> bool:
        if self.resample_trigger == "always":
            return True
        return ess(log_w) < self.ess_threshold * np.size(log_w)


def _next_temperature(loglik, eta, target, tol=1e-12, max_iter=200):
    """Largest-step bisection on the ESS fraction of the incremental weights."""

    def frac(delta):
        lw = delta * loglik
        return ess(lw) / lw.size

    if frac(1.0 - eta) >= target:
        return 1.0
    lo, hi = 0.0, 1.0 - eta
    if not frac(lo) >= target:
        return 1.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if frac(mid) >= target:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    step = lo if lo > 0 else hi
    return min(eta + step, 1.0)


def pilot_adaptive_schedule(
    model,
    n_particles: int,
    target_ess_fraction: float = 0.5,
    rng=None,
    n_moves: int = 1,
    max_stages: int = 1000,
) -> TemperingSchedule:
    """Choose annealing temperatures with a preliminary adaptive SMC run.

    ``model`` needs ``prior`` (GaussianPrior) and a vectorised ``loglik``.
    At each stage the next temperature is found by bisection so that the
    ESS of the incremental weights is ``target_ess_fraction * N``; the
    population is then resampled and moved by random-walk Metropolis.
    """
    if not 0 < target_ess_fraction < 1:
        raise ValueError("target_ess_fraction must lie in (0, 1)")
    stream = rng if isinstance(rng, RngStream) else RngStream(0 if rng is None else int(rng))
    prior = model.prior
    theta = prior.sample(stream.generator("pilot", "init"), n_particles)
    L = model.loglik(theta)
    temps = [0.0]
    eta = 0.0
    while eta < 1.0:
        if len(temps) > max_stages:
            raise RuntimeError("pilot schedule exceeded max_stages")
        new_eta = _next_temperature(L, eta, target_ess_fraction)
        if new_eta <= eta:
            new_eta = 1.0
        stage = len(temps)
        log_w = (new_eta - eta) * L
        eta = new_eta
        temps.append(eta)
        if eta >= 1.0:
            break
        w = normalise_log_weights(log_w)
        anc = stratified_resample(w, n_particles, stream.generator("pilot", stage, "resample"))
        chol = safe_cholesky(adapt_rw_covariance(theta, w))
        theta, L = theta[anc], L[anc]
        logp = prior.logpdf(theta)
        for k in range(n_moves):
            gen = stream.generator("pilot", stage, "move", k)
            prop = theta + gen.standard_normal(theta.shape) @ chol.T
            L_prop = model.loglik(prop)
            logp_prop = prior.logpdf(prop)
            log_alpha = logp_prop + eta * L_prop - logp - eta * L
            acc = np.log(gen.uniform(size=n_particles)) < log_alpha
            theta[acc], L[acc], logp[acc] = prop[acc], L_prop[acc], logp_prop[acc]
    temps[-1] = 1.0
    return TemperingSchedule(tuple(temps))


@dataclass
class SmcResult:
    """Output of an SMC run.

    ``log_z`` holds the running log evidence for stages 0..T.  Posterior
    means are with respect to the final target; ``posterior_mean_all`` uses
    every inner point (None for samplers without inner points).
    """

    log_z: np.ndarray
    posterior_mean: np.ndarray
    posterior_mean_all: np.ndarray | None
    ess: np.ndarray
    resampled: np.ndarray
    acceptance: np.ndarray
    n_evals: int
    particles: np.ndarray
    log_weights: np.ndarray
    basis: object = None
    spectra: list | None = None
    diagnostics: dict | None = None

    @property
    def log_evidence(self) -> float:
        return float(self.log_z[-1])
