"""AS-SMC with the subspace re-estimated at every stage.

Before reweighting to stage t the basis is re-estimated from the current
weighted population, and every particle is re-expressed in the new basis
by a conditional importance step:

1. pick one inactive point u from the particle's inner weights,
2. rotate (a, i^u) into the new basis (theta is unchanged),
3. redraw the other N_i - 1 inactive points from the new conditional prior.

With the matching backward kernel this has importance weight one, so the
outer weights are untouched.  Transitions to or from an empty inactive
space fall out of the same steps (a single inner slot of width zero).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .asmh import AsmhState
from .assmc import ActivePopulation, _result, assmc_reweight, canonical_basis, run_active_smc
from .model import project_prior
from .smc_core import RngStream, SmcResult, SmcSettings, ess, normalise_log_weights, sample_rows
from .subspace import GapRule, SubspaceBasis, estimate_basis

__all__ = [
    "ReprojectionRecord",
    "reestimate_basis",
    "reproject",
    "handle_no_inactive",
    "adaptive_reweight",
    "run_adaptive_assmc",
]


@dataclass
class ReprojectionRecord:
    stage: int
    direction: str
    d_a_old: int
    d_a_new: int
    log_omega_before: np.ndarray
    log_omega_after: np.ndarray
    ess_before: float
    ess_after: float
    reconstruction_error: float


def reestimate_basis(pop: ActivePopulation, basis: SubspaceBasis, model, t: int, rule: GapRule | None = None) -> SubspaceBasis:
    """Subspace from the doubly weighted score outer product at stage t.

    Every inactive point contributes with weight omega^m w^{n,m}; the score
    is that of l_{1:t} at the reconstructed theta.
    """
    st = pop.state
    theta = st.theta(basis).reshape(-1, basis.d)
    w = (pop.weights[:, None] * normalise_log_weights(st.log_w, axis=1)).ravel()
    w = w / w.sum()
    new = canonical_basis(estimate_basis(model.score(theta, t), w, rule or GapRule()))
    if new.d_i > 0 and basis.d_i > 0:
        new = new.aligned_to(basis)
    return new


def reproject(pop: ActivePopulation, old: SubspaceBasis, new: SubspaceBasis, kappa, n_inner: int, rng_select, rng_refill):
    """Re-express every particle in the ``new`` basis.

    ``kappa`` is the conditional proposal (in the new basis) for the
    N_i - 1 refreshed points.  Inner weights are left as placeholders
    (zeros); the following reweight recomputes them against ``kappa``.

    Returns
    -------
    population : ActivePopulation
    theta_carried : (N, d) array
        The carried point before the change.
    error : float
        Largest absolute change of the carried point's theta.
    """
    st = pop.state
    N = st.n
    u = sample_rows(st.log_w, rng_select)
    theta_u = old.reconstruct(st.a, st.points[np.arange(N), u])
    a_new = new.to_active(theta_u)
    i_u = new.to_inactive(theta_u)
    K = n_inner if new.d_i > 0 else 1
    u_new = np.where(u < K, u, 0)
    fresh = kappa.sample(a_new, K - 1, rng_refill)
    points = np.empty((N, K, new.d_i))
    slot = np.arange(K)[None, :] != u_new[:, None]
    points[slot] = fresh.reshape(N * (K - 1), new.d_i)
    points[np.arange(N), u_new] = i_u
    state = AsmhState(a_new, points, np.zeros((N, K)), u_new.astype(np.intp))
    error = float(np.max(np.abs(new.reconstruct(a_new, i_u) - theta_u), initial=0.0))
    return ActivePopulation(state, pop.log_omega, kappa), theta_u, error


def transition_kind(old: SubspaceBasis, new: SubspaceBasis) -> str:
    if old.d_i == 0 and new.d_i == 0:
        return "zero-zero"
    if new.d_i == 0:
        return "to-zero"
    if old.d_i == 0:
        return "from-zero"
    return "general"


def handle_no_inactive(pop: ActivePopulation, old: SubspaceBasis, new: SubspaceBasis, kappa, n_inner: int, rng_select, rng_refill):
    """Reprojection when the old or new basis has no inactive directions.

    * to-zero: the carried theta becomes the particle (a = theta); the next
      increment is l_t(theta)/l_{t-1}(theta) and moves are plain MH.
    * from-zero: theta is split into (a, i^u) and N_i - 1 points are drawn
      from ``kappa``, at weight one.
    * zero-zero: nothing changes; the stage is a standard SMC stage.
    """
    kind = transition_kind(old, new)
    if kind == "general":
        raise ValueError("both bases have inactive directions; use reproject")
    if kind == "zero-zero":
        return pop, kind
    out, _, _ = reproject(pop, old, new, kappa, n_inner, rng_select, rng_refill)
    return out, kind


def adaptive_reweight(pop: ActivePopulation, projected, basis, model, t: int, q_new=None, pair=None):
    """Reweight after reprojection.

    Numerator inner weights use (l_{1:t}, q_t), denominator weights use
    (l_{1:t-1}, kappa), where kappa is the population's current proposal.
    This is the fixed-subspace reweight applied in the new basis.
    """
    return assmc_reweight(pop, projected, basis, model, t, q_new, pair)


def run_adaptive_assmc(
    model,
    settings: SmcSettings | None = None,
    rng=0,
    gap_rule: GapRule | None = None,
    freeze_basis: bool = False,
) -> SmcResult:
    """Adaptive AS-SMC.

    Parameters
    ----------
    freeze_basis : bool
        Skip re-estimation and reprojection; the run is then identical to
        :func:`activesmc.assmc.run_assmc` with the same seed.

    Returns
    -------
    SmcResult
        ``spectra`` holds the spectrum used at every stage (stage 0 is the
        prior estimate) and ``diagnostics["reprojections"]`` the
        per-stage :class:`ReprojectionRecord` list.
    """
    settings = settings or SmcSettings()
    stream = rng if isinstance(rng, RngStream) else RngStream(int(rng))
    rule = gap_rule or GapRule()
    bases = []

    def restructure(t, pop, basis, projected):
        if not bases:
            bases.append(basis)
        new = reestimate_basis(pop, basis, model, t, rule)
        new_projected = project_prior(model.prior, new)
        before = pop.log_omega.copy()
        ess_before = ess(before)
        kind = transition_kind(basis, new)
        gens = (stream.generator(t, "reproject-select"), stream.generator(t, "reproject-refill"))
        out, theta_u, err = reproject(pop, basis, new, new_projected.conditional_i, settings.n_inner, *gens)
        rec = ReprojectionRecord(t, kind, basis.d_a, new.d_a, before, out.log_omega.copy(), ess_before, ess(out.log_omega), err)
        bases.append(new)
        return out, new, new_projected, rec

    pop, basis, _, target, log, records = run_active_smc(
        model, settings, stream, None, rule, None if freeze_basis else restructure
    )
    if not bases:
        bases.append(basis)
    spectra = [b.spectrum for b in bases]
    return _result(pop, basis, target, log, spectra, {"reprojections": records, "bases": bases, "population": pop})
