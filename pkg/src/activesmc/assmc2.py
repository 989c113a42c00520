"""Nested SMC on the active subspace (AS-SMC^2).

Every active particle carries its own SMC sampler over the inactive
variables, targeting p_i(i | a) l_{1:s}(A a + I i) for s = 1, 2, ...  The
product of that sampler's mean incremental weights is an unbiased estimate
of the active marginal likelihood l_{t,a}(a), which drives the outer
weights and a particle marginal MH move on ``a``.

Inner states are batched over the outer particles.  An inner state at
stage s is *pending*: it has been reweighted to s but not yet resampled or
moved there.  Advancing to s + 1 resamples and moves at s, then reweights,
which is the same sequence of operations as one uninterrupted inner run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .asmh import log_acceptance
from .assmc import initial_population
from .model import ConditionalGaussian, ProjectedPrior
from .smc_core import (
    CountingTarget,
    RandomWalk,
    RngStream,
    SmcResult,
    SmcSettings,
    adapt_rw_covariance,
    ess,
    logsumexp,
    normalise_log_weights,
    resample,
    sample_rows,
)
from .subspace import SubspaceBasis

__all__ = [
    "InnerSmcState",
    "inner_reweight",
    "inner_resample_move",
    "inner_smc",
    "adapt_inner_proposal",
    "assmc2_reweight",
    "aspmmh_move",
    "run_assmc2",
]


@dataclass
class InnerSmcState:
    """Inner samplers for N active points, pending at ``stage``.

    Attributes
    ----------
    a : (N, d_a) array
    points : (N, K, d_i) array
    log_w : (N, K) array
        Normalised log weights at ``stage``.
    log_l : (N, K) array
        log l_{1:stage} at the current points.
    log_sums : (N, stage) array
        log sum_n w~_s for s = 1..stage.
    ancestors : list of (N, K) int arrays
        Ancestor indices used at each resample/move step.
    """

    a: np.ndarray
    points: np.ndarray
    log_w: np.ndarray
    log_l: np.ndarray
    stage: int = 0
    log_sums: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    ancestors: list = field(default_factory=list)

    def __post_init__(self):
        if self.log_sums.shape[0] != self.a.shape[0]:
            self.log_sums = np.zeros((self.a.shape[0], self.stage))

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def log_evidence(self) -> np.ndarray:
        return np.sum(self.log_sums, axis=1)

    @classmethod
    def start(cls, a, points) -> "InnerSmcState":
        N, K = points.shape[:2]
        return cls(np.asarray(a, dtype=float), points, np.full((N, K), -math.log(K)), np.zeros((N, K)))

    def take(self, idx) -> "InnerSmcState":
        return InnerSmcState(
            self.a[idx], self.points[idx], self.log_w[idx], self.log_l[idx], self.stage,
            self.log_sums[idx], [v[idx] for v in self.ancestors],
        )

    def where(self, mask, other: "InnerSmcState") -> "InnerSmcState":
        if other.stage != self.stage:
            raise ValueError("inner states are at different stages")
        m1, m2 = mask[:, None], mask[:, None, None]
        return InnerSmcState(
            np.where(m1, other.a, self.a),
            np.where(m2, other.points, self.points),
            np.where(m1, other.log_w, self.log_w),
            np.where(m1, other.log_l, self.log_l),
            self.stage,
            np.where(m1, other.log_sums, self.log_sums),
            [np.where(m1, o, s) for s, o in zip(self.ancestors, other.ancestors)],
        )

    def theta(self, basis: SubspaceBasis) -> np.ndarray:
        return basis.reconstruct(self.a[:, None, :], self.points)


def inner_reweight(state: InnerSmcState, basis: SubspaceBasis, model, s: int):
    """Reweight every inner sampler from stage s-1 to s.

    w~_s = w_{s-1} l_{1:s} / l_{1:s-1}.  Returns the new state and
    log sum_n w~_s per row (-inf for a row whose weights all vanish).
    """
    if s != state.stage + 1:
        raise ValueError(f"cannot reweight a stage-{state.stage} state to stage {s}")
    log_l = model.log_l(state.theta(basis), s)
    log_wt = state.log_w + (log_l - state.log_l)
    log_wt = np.where(np.isnan(log_wt), -np.inf, log_wt)
    log_sum = logsumexp(log_wt, axis=1)
    dead = ~np.isfinite(log_sum)
    K = log_wt.shape[1]
    with np.errstate(invalid="ignore"):
        log_w = np.where(dead[:, None], -math.log(K), log_wt - log_sum[:, None])
    new = InnerSmcState(
        state.a, state.points, log_w, log_l, s,
        np.concatenate([state.log_sums, log_sum[:, None]], axis=1), list(state.ancestors),
    )
    return new, log_sum


def _row_ess(log_w):
    return np.exp(2.0 * logsumexp(log_w, axis=1) - logsumexp(2.0 * log_w, axis=1))


def _row_resample(log_w, rng, scheme):
    N, K = log_w.shape
    cw = np.cumsum(np.exp(log_w), axis=1)
    cw /= cw[:, -1:]
    cw[:, -1] = 1.0
    if scheme == "stratified":
        u = (np.arange(K)[None, :] + rng.uniform(size=(N, K))) / K
    else:
        u = rng.uniform(size=(N, K))
    idx = np.sum(cw[:, None, :] <= u[:, :, None], axis=2)
    return np.minimum(idx, K - 1)


def inner_resample_move(
    state: InnerSmcState,
    basis: SubspaceBasis,
    projected: ProjectedPrior,
    q_s,
    model,
    gens,
    scheme: str = "stratified",
    threshold: float = 0.5,
) -> InnerSmcState:
    """Resample rows whose ESS fell below ``threshold * K``, then one
    independence MH move per inner point targeting p_i l_{1:s}.

    ``gens`` = (resampling generator, proposal generator, acceptance
    generator).  ``q_s`` is the independence proposal (None for the
    conditional prior).
    """
    N, K, _ = state.points.shape
    s = state.stage
    rng_res, rng_prop, rng_acc = gens
    anc = np.broadcast_to(np.arange(K), (N, K)).copy()
    trigger = _row_ess(state.log_w) < threshold * K
    drawn = _row_resample(state.log_w, rng_res, scheme)
    anc[trigger] = drawn[trigger]
    points = np.take_along_axis(state.points, anc[:, :, None], axis=1)
    log_l = np.take_along_axis(state.log_l, anc, axis=1)
    log_w = np.where(trigger[:, None], -math.log(K), state.log_w)

    q_s = projected.conditional_i if q_s is None else q_s
    prop = q_s.sample(state.a, K, rng_prop)
    log_l_prop = model.log_l(basis.reconstruct(state.a[:, None, :], prop), s)
    if q_s is projected.conditional_i or prop.shape[-1] == 0:
        log_alpha = log_l_prop - log_l
    else:
        p_i = projected.conditional_i
        log_alpha = (log_l_prop + p_i.logpdf(prop, state.a) - q_s.logpdf(prop, state.a)) - (
            log_l + p_i.logpdf(points, state.a) - q_s.logpdf(points, state.a)
        )
    acc = np.log(rng_acc.uniform(size=(N, K))) < log_alpha
    points = np.where(acc[:, :, None], prop, points)
    log_l = np.where(acc, log_l_prop, log_l)
    return InnerSmcState(state.a, points, log_w, log_l, s, state.log_sums, state.ancestors + [anc])


def _advance(state, basis, projected, q_list, model, s, stream, settings):
    """Resample/move a state pending at s-1 (if s > 1), then reweight to s."""
    if s > 1:
        gens = (stream.generator(s, "inner-resample"), stream.generator(s, "inner-propose"), stream.generator(s, "inner-accept"))
        state = inner_resample_move(
            state, basis, projected, q_list[s - 1], model, gens,
            settings.resample_scheme, settings.inner_ess_threshold,
        )
    return inner_reweight(state, basis, model, s)


def inner_smc(a, basis: SubspaceBasis, projected: ProjectedPrior, model, t: int, n_inner: int, rng, q_list=None, settings=None):
    """Run the inactive-variable SMC from scratch up to stage ``t``.

    Parameters
    ----------
    a : (N, d_a) array
        One inner sampler is run per row.
    q_list : sequence, optional
        ``q_list[s]`` is the independence proposal used when moving at
        stage s (None entries mean the conditional prior).
    rng : RngStream

    Returns
    -------
    log_evidence : (N,) array
        log of prod_s sum_n w~_s.
    state : InnerSmcState
        Pending at stage t.
    """
    if t < 1:
        raise ValueError("inner SMC needs t >= 1")
    settings = settings or SmcSettings(n_inner=n_inner)
    stream = rng if isinstance(rng, RngStream) else RngStream(int(rng))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    K = n_inner if basis.d_i > 0 else 1
    points = projected.conditional_i.sample(a, K, stream.generator("inner-init"))
    state = InnerSmcState.start(a, points)
    q_list = q_list or [None] * (t + 1)
    for s in range(1, t + 1):
        state, _ = _advance(state, basis, projected, q_list, model, s, stream, settings)
    return state.log_evidence, state


def adapt_inner_proposal(state: InnerSmcState, log_omega, projected: ProjectedPrior, family: str = "gaussian"):
    """Shared Gaussian fitted to every inner point, weighted by omega^m w^{n,m}.

    Falls back to the conditional prior when there is one inner point per
    sampler or the pooled covariance is singular.
    """
    N, K, k = state.points.shape
    if K < 2 or k == 0:
        return projected.conditional_i
    W = normalise_log_weights(log_omega)[:, None] * np.exp(state.log_w)
    W = (W / W.sum()).ravel()
    x = state.points.reshape(-1, k)
    mu = W @ x
    diff = x - mu
    cov = (diff * W[:, None]).T @ diff
    cov = 0.5 * (cov + cov.T)
    eig = np.linalg.eigvalsh(cov)
    if not np.all(np.isfinite(eig)) or eig[-1] <= 0 or eig[0] <= 1e-10 * eig[-1]:
        return projected.conditional_i
    return ConditionalGaussian(mu, np.linalg.cholesky(cov), None, family)


@dataclass
class Smc2Population:
    inner: InnerSmcState
    log_omega: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        return normalise_log_weights(self.log_omega)


def assmc2_reweight(pop: Smc2Population, basis, projected, q_list, model, t: int, stream: RngStream, settings: SmcSettings):
    """Advance every inner sampler to stage t and multiply the outer
    weights by that stage's sum of inner weights."""
    inner, log_sum = _advance(pop.inner, basis, projected, q_list, model, t, stream.child("advance"), settings)
    return Smc2Population(inner, pop.log_omega + log_sum), log_sum


def aspmmh_move(pop: Smc2Population, walk: RandomWalk, basis, projected, q_list, model, t: int, stream: RngStream, settings: SmcSettings):
    """Particle marginal MH on ``a``: a fresh inner SMC to stage t at the
    proposed point supplies the likelihood estimate.  Rejected rows keep
    their whole inner state."""
    gen = stream.generator("propose")
    cur = pop.inner
    a_prop = walk.propose(cur.a, gen)
    log_z_prop, fresh = inner_smc(a_prop, basis, projected, model, t, settings.n_inner, stream.child("fresh"), q_list, settings)
    log_alpha = log_acceptance(
        projected.marginal_a.logpdf(a_prop), log_z_prop,
        projected.marginal_a.logpdf(cur.a), cur.log_evidence,
        walk.log_ratio(cur.a, a_prop),
    )
    acc = np.log(gen.uniform(size=cur.n)) < log_alpha
    return Smc2Population(cur.where(acc, fresh), pop.log_omega), acc


def run_assmc2(model, settings: SmcSettings | None = None, rng=0, basis=None, gap_rule=None) -> SmcResult:
    """AS-SMC^2 with a fixed subspace.

    ``settings.inactive_proposal == "adaptive"`` fits the pooled inner
    proposal at each stage; otherwise the conditional prior is used.
    ``diagnostics`` reports the inner ESS (mean over particles) per stage.
    """
    settings = settings or SmcSettings()
    stream = rng if isinstance(rng, RngStream) else RngStream(int(rng))
    target = CountingTarget(model)
    start, basis, projected = initial_population(target, settings, stream, basis, gap_rule)
    pop = Smc2Population(InnerSmcState.start(start.state.a, start.state.points), start.log_omega)
    N = settings.n_particles
    q_list = [None]
    log_z = [0.0]
    ess_trace, resampled, acceptance, inner_ess = [], [], [], []
    for t in range(1, target.T + 1):
        if t > 1:
            q = None
            if settings.inactive_proposal == "adaptive":
                q = adapt_inner_proposal(pop.inner, pop.log_omega, projected, settings.proposal_family)
            q_list.append(q)
        prev = pop.log_omega
        pop, incr = assmc2_reweight(pop, basis, projected, q_list, target, t, stream.child(t), settings)
        log_z.append(log_z[-1] + float(logsumexp(prev + incr) - logsumexp(prev)))
        ess_trace.append(ess(pop.log_omega))
        inner_ess.append(float(np.mean(_row_ess(pop.inner.log_w))))
        if not settings.should_resample(pop.log_omega):
            resampled.append(False)
            acceptance.append(float("nan"))
            continue
        W = pop.weights
        walk = RandomWalk(adapt_rw_covariance(pop.inner.a, W))
        anc = resample(W, N, stream.generator(t, "resample"), settings.resample_scheme)
        pop = Smc2Population(pop.inner.take(anc), np.full(N, -math.log(N)))
        rates = []
        for k in range(settings.n_moves):
            pop, acc = aspmmh_move(pop, walk, basis, projected, q_list, target, t, stream.child(t, "pmmh", k), settings)
            rates.append(acc.mean())
        resampled.append(True)
        acceptance.append(float(np.mean(rates)) if rates else float("nan"))

    st = pop.inner
    W = pop.weights
    theta = st.theta(basis)
    mean_all = np.einsum("m,mk,mkj->j", W, np.exp(st.log_w), theta)
    u = sample_rows(st.log_w, stream.generator("final-select"))
    sel = theta[np.arange(st.n), u]
    return SmcResult(
        log_z=np.asarray(log_z),
        posterior_mean=np.tensordot(W, sel, axes=1),
        posterior_mean_all=mean_all,
        ess=np.asarray(ess_trace),
        resampled=np.asarray(resampled, dtype=bool),
        acceptance=np.asarray(acceptance),
        n_evals=target.n_evals,
        particles=sel,
        log_weights=pop.log_omega.copy(),
        basis=basis,
        spectra=[basis.spectrum] if basis.spectrum is not None else None,
        diagnostics={"inner_ess": np.asarray(inner_ess), "population": pop},
    )

