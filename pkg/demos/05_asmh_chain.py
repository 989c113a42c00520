"""AS-MH is a pseudo-marginal chain: noisy likelihood, exact target.

On the plane model the likelihood is constant along the inactive space, so
the inner importance estimate is exact and AS-MH makes the same accept or
reject decisions as Metropolis-Hastings on the exact marginal.  The chain's
mean of 1'theta is compared with the conjugate posterior.
"""

import numpy as np

from activesmc import estimate_basis, make_model, plane_posterior_moments
from activesmc.asmh import run_asmh
from activesmc.smc_core import RngStream

toy = make_model("plane", RngStream(0).generator("data"), d=3, n_obs=10)
model = toy.target()
basis = estimate_basis(toy.score(toy.prior.sample(RngStream(5).generator("draws"), 500)))
print(f"active dimension {basis.d_a}, direction {np.round(basis.active[:, 0], 4)}")

pilot = run_asmh(model, basis, 5000, n_inner=10, rng=RngStream(5, ("pilot",)))
var_a = float(np.var(pilot.a[1000:, 0]))
chain = run_asmh(model, basis, 50_000, n_inner=10, rng=5, proposal_cov=np.array([[2.38**2 * var_a]]), a0=pilot.a[-1])
s = chain.theta[5000:].sum(axis=1)
means = s[: len(s) // 50 * 50].reshape(50, -1).mean(axis=1)
mean, _ = plane_posterior_moments(toy)
print(f"acceptance rate {chain.acceptance_rate:.2f}")
print(f"1'theta: chain {s.mean():.5f} +- {means.std(ddof=1) / np.sqrt(50):.5f} (batch means), exact {mean.sum():.5f}")
