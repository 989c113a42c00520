"""SMC sampler on the active variables with a fixed subspace.

Each of the N_a particles is an active point ``a`` carrying N_i inactive
points.  The extended target at stage t is

    pi_t(a, i^{1:N_i}) = p_a(a) prod_j q_t(i^j | a) (1/N_i) sum_n w_t^n,
    w_t^n = p_i(i^n | a) l_{1:t}(A a + I i^n) / q_t(i^n | a),

so the outer weight update is a ratio of inner weight sums times a ratio
of proposal products (which cancel when the proposal does not change).
Moves are pseudo-marginal MH steps from :mod:`activesmc.asmh`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .asmh import AsmhState, asmh_step, inner_log_weights
from .model import ConditionalGaussian, ProjectedPrior, project_prior
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
from .subspace import GapRule, SubspaceBasis, estimate_basis

__all__ = [
    "ActivePopulation",
    "canonical_basis",
    "initial_population",
    "assmc_reweight",
    "assmc_move",
    "estimate_expectation",
    "adapt_active_proposal",
    "adapt_inactive_proposal",
    "run_assmc",
]


@dataclass
class ActivePopulation:
    """Weighted active particles.

    ``q`` is the inactive proposal the stored points are weighted against
    (the conditional prior unless adapted).
    """

    state: AsmhState
    log_omega: np.ndarray
    q: ConditionalGaussian

    @property
    def n(self) -> int:
        return self.state.n

    @property
    def weights(self) -> np.ndarray:
        return normalise_log_weights(self.log_omega)

    def take(self, idx) -> "ActivePopulation":
        return ActivePopulation(self.state.take(idx), self.log_omega[idx], self.q.take(idx))


def canonical_basis(basis: SubspaceBasis) -> SubspaceBasis:
    """With no inactive directions the particle is just theta: use a = theta."""
    if basis.d_i == 0:
        return SubspaceBasis(np.eye(basis.d), np.zeros((basis.d, 0)), basis.spectrum)
    return basis


def initial_population(model, settings: SmcSettings, stream: RngStream, basis=None, gap_rule=None):
    """Prior draws, the subspace estimated from them, and the initial
    particles (the first inactive point of each is the projected draw).

    Returns
    -------
    population : ActivePopulation
    basis : SubspaceBasis
    projected : ProjectedPrior
    """
    N = settings.n_particles
    theta0 = model.prior.sample(stream.generator("init"), N)
    if basis is None:
        basis = estimate_basis(model.score(theta0), None, gap_rule or GapRule())
    basis = canonical_basis(basis)
    projected = project_prior(model.prior, basis)
    a = basis.to_active(theta0)
    K = settings.n_inner if basis.d_i > 0 else 1
    rest = projected.conditional_i.sample(a, K - 1, stream.generator("init-inner"))
    points = np.concatenate([basis.to_inactive(theta0)[:, None, :], rest], axis=1)
    state = AsmhState(a, points, np.zeros((N, K)), np.zeros(N, dtype=np.intp))
    pop = ActivePopulation(state, np.full(N, -math.log(N)), projected.conditional_i)
    return pop, basis, projected


def adapt_active_proposal(pop: ActivePopulation, fallback=None) -> np.ndarray:
    """(2.38^2/d_a) times the weighted covariance of the active points."""
    return adapt_rw_covariance(pop.state.a, pop.weights, fallback)


def adapt_inactive_proposal(
    points,
    log_kappa,
    u,
    projected: ProjectedPrior,
    a,
    family: str = "gaussian",
    df: float = 5.0,
) -> ConditionalGaussian:
    """Per-particle Gaussian (or t) fitted to each particle's inactive points.

    The point with index ``u`` is left out; the others are weighted by
    ``exp(log_kappa)`` renormalised.  Rows with fewer than two usable
    points or a numerically singular covariance fall back to the
    conditional prior at the particle's current ``a``.
    """
    points = np.asarray(points, dtype=float)
    N, K, k = points.shape
    prior_mean = projected.conditional_i.mean(a)
    prior_cov = projected.conditional_i.chol @ projected.conditional_i.chol.T
    lk = np.array(log_kappa, dtype=float)
    lk[np.arange(N), u] = -np.inf
    usable = np.sum(np.isfinite(lk), axis=1) >= 2
    mu = np.array(prior_mean, dtype=float, copy=True)
    cov = np.broadcast_to(prior_cov, (N, k, k)).copy()
    if np.any(usable):
        lku = lk[usable]
        W = np.exp(lku - logsumexp(lku, axis=1, keepdims=True))
        m = np.einsum("nk,nkj->nj", W, points[usable])
        diff = points[usable] - m[:, None, :]
        c = np.einsum("nk,nki,nkj->nij", W, diff, diff)
        c = 0.5 * (c + np.swapaxes(c, 1, 2))
        eig = np.linalg.eigvalsh(c)
        ok = np.all(np.isfinite(eig), axis=1) & (eig[:, -1] > 0) & (eig[:, 0] > 1e-10 * eig[:, -1])
        rows = np.flatnonzero(usable)[ok]
        mu[rows] = m[ok]
        cov[rows] = c[ok]
    return ConditionalGaussian(mu, np.linalg.cholesky(cov), None, family, df)


def _log_q_sum(q, points, a) -> np.ndarray:
    return np.sum(q.logpdf(points, a), axis=1)


def assmc_reweight(pop: ActivePopulation, projected: ProjectedPrior, basis: SubspaceBasis, model, t: int, q_new=None, pair=None):
    """Move the population from stage t-1 to stage t.

    Parameters
    ----------
    q_new : ConditionalGaussian, optional
        Inactive proposal for stage t; defaults to the population's current one.
    pair : tuple of arrays, optional
        Precomputed (log l_{1:t}, log l_{1:t-1}) at all stored points.

    Returns
    -------
    population : ActivePopulation
        Inner weights refreshed to stage t, outer weights updated, ``u``
        left untouched (drawn afterwards).
    log_increment : (N,) array
    """
    st = pop.state
    if pair is None:
        pair = model.log_l_pair(st.theta(basis), t)
    log_l, log_l_prev = pair
    q_prev = pop.q
    q_new = q_prev if q_new is None else q_new
    log_w_prev = inner_log_weights(st.a, st.points, projected, q_prev, log_l_prev)
    log_w_new = inner_log_weights(st.a, st.points, projected, q_new, log_l)
    incr = logsumexp(log_w_new, axis=1) - logsumexp(log_w_prev, axis=1)
    if q_new is not q_prev and st.points.shape[-1] > 0:
        incr = incr + (_log_q_sum(q_new, st.points, st.a) - _log_q_sum(q_prev, st.points, st.a))
    incr = np.where(np.isnan(incr), -np.inf, incr)
    new_state = AsmhState(st.a, st.points, log_w_new, st.u)
    return ActivePopulation(new_state, pop.log_omega + incr, q_new), incr


def assmc_move(pop: ActivePopulation, walk: RandomWalk, projected, basis, model, t: int, gens) -> tuple:
    """One AS-MH sweep over a resampled population.

    ``gens`` is a triple of generators (proposal and acceptance, inner
    points, selected index).
    """
    new_state, acc = asmh_step(pop.state, walk, pop.q, projected, basis, model, t, *gens)
    return ActivePopulation(new_state, pop.log_omega, pop.q), acc


def estimate_expectation(pop: ActivePopulation, basis: SubspaceBasis, g: Callable | None = None, mode: str = "single-point"):
    """Weighted posterior expectation of ``g`` (identity by default).

    ``mode="single-point"`` uses the selected inactive point of each
    particle; ``mode="all-points"`` averages over every inactive point
    with its normalised inner weight.
    """
    g = (lambda x: x) if g is None else g
    W = pop.weights
    st = pop.state
    if mode == "single-point":
        vals = np.asarray(g(st.selected_theta(basis)), dtype=float)
        return np.tensordot(W, vals, axes=1)
    if mode == "all-points":
        w_in = normalise_log_weights(st.log_w, axis=1)
        vals = np.asarray(g(st.theta(basis)), dtype=float)
        inner = np.einsum("nk,nk...->n...", w_in, vals)
        return np.tensordot(W, inner, axes=1)
    raise ValueError(f"unknown estimator mode {mode!r}")


@dataclass
class _StageLog:
    ess: list = field(default_factory=list)
    resampled: list = field(default_factory=list)
    acceptance: list = field(default_factory=list)
    log_z: list = field(default_factory=lambda: [0.0])


def _adapted_inactive(pop, projected, pair, settings):
    """Proposal for the coming stage from kappa = w_{t-1} l_t (u left out)."""
    st = pop.state
    if settings.inactive_proposal != "adaptive" or st.points.shape[-1] == 0:
        return None
    log_l, log_l_prev = pair
    log_w_prev = inner_log_weights(st.a, st.points, projected, pop.q, log_l_prev)
    log_kappa = log_w_prev - logsumexp(log_w_prev, axis=1, keepdims=True) + (log_l - log_l_prev)
    return adapt_inactive_proposal(st.points, log_kappa, st.u, projected, st.a, settings.proposal_family)


def run_active_smc(model, settings: SmcSettings, stream: RngStream, basis=None, gap_rule=None, restructure=None):
    """Shared stage loop for the fixed and adaptive AS-SMC samplers.

    ``restructure(t, pop, basis, projected)``, when given, runs at the top
    of each stage and returns ``(pop, basis, projected, info)``; it is how
    the adaptive sampler re-estimates the subspace and reprojects.
    """
    target = CountingTarget(model)
    pop, basis, projected = initial_population(target, settings, stream, basis, gap_rule)
    N = settings.n_particles
    log = _StageLog()
    extra = []
    for t in range(1, target.T + 1):
        if restructure is not None:
            pop, basis, projected, info = restructure(t, pop, basis, projected)
            extra.append(info)
        pair = target.log_l_pair(pop.state.theta(basis), t)
        q_new = _adapted_inactive(pop, projected, pair, settings)
        prev_log_omega = pop.log_omega
        pop, incr = assmc_reweight(pop, projected, basis, target, t, q_new, pair)
        log.log_z.append(log.log_z[-1] + float(logsumexp(prev_log_omega + incr) - logsumexp(prev_log_omega)))
        u = sample_rows(pop.state.log_w, stream.generator(t, "select"))
        pop.state.u = u
        log.ess.append(ess(pop.log_omega))
        if settings.should_resample(pop.log_omega):
            W = pop.weights
            walk = RandomWalk(adapt_active_proposal(pop))
            anc = resample(W, N, stream.generator(t, "resample"), settings.resample_scheme)
            pop = pop.take(anc)
            pop.log_omega = np.full(N, -math.log(N))
            rates = []
            for k in range(settings.n_moves):
                gens = (stream.generator(t, "move", k), stream.generator(t, "move-inner", k), stream.generator(t, "move-select", k))
                pop, acc = assmc_move(pop, walk, projected, basis, target, t, gens)
                rates.append(acc.mean())
            log.resampled.append(True)
            log.acceptance.append(float(np.mean(rates)) if rates else float("nan"))
        else:
            log.resampled.append(False)
            log.acceptance.append(float("nan"))
    return pop, basis, projected, target, log, extra


def _result(pop, basis, target, log, spectra=None, diagnostics=None) -> SmcResult:
    return SmcResult(
        log_z=np.asarray(log.log_z),
        posterior_mean=estimate_expectation(pop, basis, mode="single-point"),
        posterior_mean_all=estimate_expectation(pop, basis, mode="all-points"),
        ess=np.asarray(log.ess),
        resampled=np.asarray(log.resampled, dtype=bool),
        acceptance=np.asarray(log.acceptance),
        n_evals=target.n_evals,
        particles=pop.state.selected_theta(basis),
        log_weights=pop.log_omega.copy(),
        basis=basis,
        spectra=spectra,
        diagnostics=diagnostics,
    )


def run_assmc(model, settings: SmcSettings | None = None, rng=0, basis=None, gap_rule=None) -> SmcResult:
    """AS-SMC with the subspace fixed after estimation from prior draws.

    Parameters
    ----------
    model : TargetModel
    settings : SmcSettings
    rng : int or RngStream
    basis : SubspaceBasis, optional
        Use this basis instead of estimating one.  A basis with no inactive
        directions turns the sampler into standard SMC on theta.
    gap_rule : GapRule, optional
    """
    settings = settings or SmcSettings()
    stream = rng if isinstance(rng, RngStream) else RngStream(int(rng))
    pop, basis, _, target, log, _ = run_active_smc(model, settings, stream, basis, gap_rule)
    spectra = [basis.spectrum] if basis.spectrum is not None else None
    res = _result(pop, basis, target, log, spectra)
    res.diagnostics = {"population": pop}
    return res
