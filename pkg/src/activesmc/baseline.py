"""Standard tempered SMC sampler on theta.

Reweight by the stage increment of the likelihood, resample when the ESS
drops, then apply random-walk Metropolis moves whose covariance is
(2.38^2/d) times the weighted particle covariance.
"""

from __future__ import annotations

import math

import numpy as np

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
)

__all__ = ["run_standard_smc"]


def run_standard_smc(model, settings: SmcSettings | None = None, rng=0) -> SmcResult:
    """Run the standard SMC sampler.

    Parameters
    ----------
    model : TargetModel
    settings : SmcSettings
        ``n_particles`` is the number of theta particles; inner-point
        settings are ignored.
    rng : int or RngStream

    Returns
    -------
    SmcResult
    """
    settings = settings or SmcSettings()
    stream = rng if isinstance(rng, RngStream) else RngStream(int(rng))
    target = CountingTarget(model)
    prior = target.prior
    N = settings.n_particles
    theta = prior.sample(stream.generator("init"), N)
    log_omega = np.full(N, -math.log(N))
    log_l = np.zeros(N)
    log_z = [0.0]
    ess_trace, resampled, acceptance = [], [], []
    for t in range(1, target.T + 1):
        log_l, log_l_prev = target.log_l_pair(theta, t)
        incr = log_l - log_l_prev
        incr = np.where(np.isnan(incr), -np.inf, incr)
        log_z.append(log_z[-1] + float(logsumexp(log_omega + incr) - logsumexp(log_omega)))
        log_omega = log_omega + incr
        ess_trace.append(ess(log_omega))
        if not settings.should_resample(log_omega):
            resampled.append(False)
            acceptance.append(float("nan"))
            continue
        W = normalise_log_weights(log_omega)
        walk = RandomWalk(adapt_rw_covariance(theta, W))
        anc = resample(W, N, stream.generator(t, "resample"), settings.resample_scheme)
        theta, log_l = theta[anc], log_l[anc]
        log_omega = np.full(N, -math.log(N))
        rates = []
        for k in range(settings.n_moves):
            gen = stream.generator(t, "move", k)
            prop = walk.propose(theta, gen)
            log_l_prop = target.log_l(prop, t)
            log_alpha = (prior.logpdf(prop) + log_l_prop) - (prior.logpdf(theta) + log_l) + walk.log_ratio(theta, prop)
            acc = np.log(gen.uniform(size=N)) < log_alpha
            theta = np.where(acc[:, None], prop, theta)
            log_l = np.where(acc, log_l_prop, log_l)
            rates.append(acc.mean())
        resampled.append(True)
        acceptance.append(float(np.mean(rates)) if rates else float("nan"))
    W = normalise_log_weights(log_omega)
    mean = np.tensordot(W, theta, axes=1)
    return SmcResult(
        log_z=np.asarray(log_z),
        posterior_mean=mean,
        posterior_mean_all=mean.copy(),
        ess=np.asarray(ess_trace),
        resampled=np.asarray(resampled, dtype=bool),
        acceptance=np.asarray(acceptance),
        n_evals=target.n_evals,
        particles=theta,
        log_weights=log_omega,
    )
