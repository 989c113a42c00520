"""Pseudo-marginal Metropolis-Hastings on the active variables.

The marginal likelihood of the active variables,

    l_a(a) = int p_i(i | a) l(A a + I i) di,

is replaced by an importance-sampling estimate built from ``N_i`` inactive
points.  Because the estimate is unbiased the chain still targets the
exact posterior of ``a``.

States are batched: every array carries a leading particle (or chain) axis
so the same step serves a single chain and a whole SMC population.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .model import ProjectedPrior, TargetModel, project_prior
from .smc_core import RandomWalk, RngStream, logsumexp, sample_rows
from .subspace import SubspaceBasis

__all__ = [
    "AsmhState",
    "AsmhChain",
    "inner_log_weights",
    "is_marginal_likelihood",
    "log_acceptance",
    "asmh_step",
    "run_asmh",
    "write_chain_csv",
]


@dataclass
class AsmhState:
    """Batch of active points, each with its cloud of inactive points.

    Attributes
    ----------
    a : (N, d_a) array
    points : (N, K, d_i) array
        Inactive points; K = N_i, or 1 when there are no inactive variables.
    log_w : (N, K) array
        Unnormalised inner log weights p_i l / q.
    u : (N,) int array
        Selected inactive point per particle.
    """

    a: np.ndarray
    points: np.ndarray
    log_w: np.ndarray
    u: np.ndarray

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def log_estimate(self) -> np.ndarray:
        """log of (1/K) sum_n exp(log_w)."""
        return logsumexp(self.log_w, axis=1) - math.log(self.log_w.shape[1])

    def take(self, idx) -> "AsmhState":
        return AsmhState(self.a[idx], self.points[idx], self.log_w[idx], self.u[idx])

    def where(self, mask, other: "AsmhState") -> "AsmhState":
        """Rows from ``other`` where mask is true, else from self."""
        return AsmhState(
            np.where(mask[:, None], other.a, self.a),
            np.where(mask[:, None, None], other.points, self.points),
            np.where(mask[:, None], other.log_w, self.log_w),
            np.where(mask, other.u, self.u),
        )

    def theta(self, basis: SubspaceBasis) -> np.ndarray:
        """All reconstructed points, shape (N, K, d)."""
        return basis.reconstruct(self.a[:, None, :], self.points)

    def selected_theta(self, basis: SubspaceBasis) -> np.ndarray:
        sel = self.points[np.arange(self.n), self.u]
        return basis.reconstruct(self.a, sel)


def inner_log_weights(a, points, projected: ProjectedPrior, q_i, log_l) -> np.ndarray:
    """log p_i(i|a) + log l - log q_i(i|a) for points of shape (N, K, d_i).

    When the proposal is the conditional prior itself the ratio is exactly
    one and only ``log_l`` is returned.
    """
    if q_i is None or q_i is projected.conditional_i or points.shape[-1] == 0:
        return np.array(log_l, dtype=float, copy=True)
    log_q = q_i.logpdf(points, a)
    if not np.all(np.isfinite(log_q)):
        raise FloatingPointError("inactive proposal density is zero or invalid at a drawn point")
    return (projected.conditional_i.logpdf(points, a) + log_l) - log_q


def is_marginal_likelihood(a, basis: SubspaceBasis, projected: ProjectedPrior, q_i, model, t: int, n_inner: int, rng):
    """Importance-sampling estimate of the stage-t marginal likelihood of a.

    Parameters
    ----------
    a : (N, d_a) array
    q_i : ConditionalGaussian or None
        Proposal for the inactive points; None means the conditional prior.
    n_inner : int
        Number of inactive points N_i (ignored when d_i = 0).

    Returns
    -------
    log_estimate : (N,) array
    points : (N, K, d_i) array
    log_w : (N, K) array
    """
    if n_inner < 1:
        raise ValueError("need at least one inner point")
    a = np.atleast_2d(np.asarray(a, dtype=float))
    q_i = projected.conditional_i if q_i is None else q_i
    K = n_inner if basis.d_i > 0 else 1
    points = q_i.sample(a, K, rng)
    log_l = model.log_l(basis.reconstruct(a[:, None, :], points), t)
    log_w = inner_log_weights(a, points, projected, q_i, log_l)
    return logsumexp(log_w, axis=1) - math.log(K), points, log_w


def log_acceptance(log_pa_prop, log_est_prop, log_pa_cur, log_est_cur, log_q_ratio=0.0):
    """log of p_a(a*) l(a*) q(a|a*) / (p_a(a) l(a) q(a*|a))."""
    return (log_pa_prop + log_est_prop) - (log_pa_cur + log_est_cur) + log_q_ratio


def asmh_step(
    state: AsmhState,
    proposal: RandomWalk,
    q_i,
    projected: ProjectedPrior,
    basis: SubspaceBasis,
    model,
    t: int,
    rng: np.random.Generator,
    rng_inner: np.random.Generator | None = None,
    rng_select: np.random.Generator | None = None,
):
    """One pseudo-marginal MH step for every row of ``state``.

    The proposal for ``a`` and the acceptance uniforms come from ``rng``;
    the fresh inactive points and the selected index may come from their
    own generators.  Rejected rows keep their whole tuple, including the
    stored estimate.

    Returns
    -------
    new_state : AsmhState
    accepted : (N,) bool array
    """
    rng_inner = rng if rng_inner is None else rng_inner
    rng_select = rng if rng_select is None else rng_select
    a_prop = proposal.propose(state.a, rng)
    n_inner = state.points.shape[1]
    log_est_prop, pts, log_w = is_marginal_likelihood(a_prop, basis, projected, q_i, model, t, n_inner, rng_inner)
    u_prop = sample_rows(log_w, rng_select)
    log_alpha = log_acceptance(
        projected.marginal_a.logpdf(a_prop),
        log_est_prop,
        projected.marginal_a.logpdf(state.a),
        state.log_estimate,
        proposal.log_ratio(state.a, a_prop),
    )
    finite_inputs = np.isfinite(state.log_estimate) & np.all(np.isfinite(a_prop), axis=1)
    if np.any(np.isnan(log_alpha) & finite_inputs):
        raise FloatingPointError("acceptance ratio is nan for finite inputs")
    accepted = np.log(rng.uniform(size=state.n)) < log_alpha
    new = AsmhState(a_prop, pts, log_w, u_prop)
    return state.where(accepted, new), accepted


@dataclass
class AsmhChain:
    a: np.ndarray
    theta: np.ndarray
    log_estimate: np.ndarray
    accepted: np.ndarray
    basis: SubspaceBasis

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted)) if self.accepted.size else float("nan")


def run_asmh(
    model: TargetModel,
    basis: SubspaceBasis,
    n_iter: int,
    n_inner: int = 10,
    rng=0,
    proposal_cov=None,
    t: int | None = None,
    q_i=None,
    a0=None,
) -> AsmhChain:
    """Run a single AS-MH chain targeting stage ``t`` (default: final stage).

    Parameters
    ----------
    proposal_cov : (d_a, d_a) array, optional
        Random-walk covariance; defaults to 2.38^2/d_a times the prior
        covariance of ``a``.
    a0 : (d_a,) array, optional
        Starting point; by default A^T theta with theta drawn from the prior.
    """
    if n_iter < 0:
        raise ValueError("n_iter must be nonnegative")
    stream = rng if isinstance(rng, RngStream) else RngStream(int(rng))
    gen = stream.generator("asmh")
    t = model.T if t is None else t
    projected = project_prior(model.prior, basis)
    if proposal_cov is None:
        proposal_cov = 2.38**2 / basis.d_a * projected.marginal_a.cov
    walk = RandomWalk(proposal_cov)
    if a0 is None:
        a0 = basis.to_active(model.prior.sample(gen, 1))
    a0 = np.asarray(a0, dtype=float).reshape(1, basis.d_a)
    _, pts, log_w = is_marginal_likelihood(a0, basis, projected, q_i, model, t, n_inner, gen)
    state = AsmhState(a0, pts, log_w, sample_rows(log_w, gen))

    a_out = np.empty((n_iter + 1, basis.d_a))
    th_out = np.empty((n_iter + 1, basis.d))
    est_out = np.empty(n_iter + 1)
    acc_out = np.zeros(n_iter, dtype=bool)
    a_out[0], th_out[0], est_out[0] = state.a[0], state.selected_theta(basis)[0], state.log_estimate[0]
    for k in range(n_iter):
        state, acc = asmh_step(state, walk, q_i, projected, basis, model, t, gen)
        acc_out[k] = acc[0]
        a_out[k + 1] = state.a[0]
        th_out[k + 1] = state.selected_theta(basis)[0]
        est_out[k + 1] = state.log_estimate[0]
    return AsmhChain(a_out, th_out, est_out, acc_out, basis)


def write_chain_csv(path, chain: AsmhChain) -> None:
    d_a, d = chain.a.shape[1], chain.theta.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration"] + [f"a{j}" for j in range(d_a)] + [f"theta{j}" for j in range(d)] + ["log_estimate", "accepted"])
        for k in range(chain.a.shape[0]):
            acc = int(chain.accepted[k - 1]) if k > 0 else 1
            w.writerow([k] + [repr(float(x)) for x in chain.a[k]] + [repr(float(x)) for x in chain.theta[k]] + [repr(float(chain.log_estimate[k])), acc])
