"""Target models consumed by the samplers.

A :class:`TargetModel` bundles a Gaussian prior with a likelihood that is
split into factors ``l = l_1 * ... * l_T`` (annealing or data tempering).
Stage ``t`` targets ``p(theta) l_{1:t}(theta)``.  Everything is evaluated in
log space and vectorised over leading axes of ``theta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import gammaln

from .subspace import SubspaceBasis

__all__ = [
    "GaussianPrior",
    "ConditionalGaussian",
    "ProjectedPrior",
    "project_prior",
    "AnnealedLikelihood",
    "DataTemperedLikelihood",
    "TargetModel",
]

_LOG2PI = math.log(2.0 * math.pi)


class GaussianPrior:
    """Multivariate normal N(mean, cov).

    ``cov`` may be a scalar, in which case the prior is isotropic and a
    cheaper density path is used.
    """

    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float)).copy()
        d = self.mean.shape[0]
        if np.ndim(cov) == 0:
            var = float(cov)
            if not var > 0:
                raise ValueError("prior variance must be positive")
            self.isotropic_var: float | None = var
            self.cov = var * np.eye(d)
            self.chol = math.sqrt(var) * np.eye(d)
            self._logdet = d * math.log(var)
        else:
            cov = np.asarray(cov, dtype=float)
            if cov.shape != (d, d):
                raise ValueError("covariance shape does not match mean")
            if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-10 * max(1.0, np.abs(cov).max(initial=0.0)):
                raise ValueError("covariance must be symmetric")
            self.isotropic_var = None
            self.cov = 0.5 * (cov + cov.T)
            try:
                self.chol = np.linalg.cholesky(self.cov) if d else np.zeros((0, 0))
            except np.linalg.LinAlgError:
                raise ValueError("covariance must be positive definite") from None
            self._logdet = 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    def logpdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        diff = x - self.mean
        if self.isotropic_var is not None:
            quad = np.sum(diff * diff, axis=-1) / self.isotropic_var
        elif self.d == 0:
            quad = np.zeros(x.shape[:-1])
        else:
            flat = diff.reshape(-1, self.d)
            z = solve_triangular(self.chol, flat.T, lower=True)
            quad = np.sum(z * z, axis=0).reshape(x.shape[:-1])
        return -0.5 * (self.d * _LOG2PI + self._logdet + quad)

    def sample(self, rng: np.random.Generator, size: int | tuple = ()) -> np.ndarray:
        shape = (size,) if np.ndim(size) == 0 and size != () else tuple(size)
        z = rng.standard_normal(shape + (self.d,))
        return self.mean + z @ self.chol.T


class ConditionalGaussian:
    """Affine Gaussian (or multivariate t) family x | c.

    ``mean(c) = offset + c @ gain.T`` with scale factor ``chol``.  Parameters
    are either shared (``offset`` of shape (k,), ``chol`` (k, k)) or given
    per particle (leading axis N).  Arrays of points follow the layout
    ``x[particle, point, :]`` and conditioning values ``c[particle, :]``.
    """

    def __init__(self, offset, chol, gain=None, family: str = "gaussian", df: float = 5.0):
        if family not in ("gaussian", "student-t"):
            raise ValueError(f"unknown proposal family {family!r}")
        self.offset = np.asarray(offset, dtype=float)
        self.chol = np.asarray(chol, dtype=float)
        self.gain = None if gain is None else np.asarray(gain, dtype=float)
        self.family = family
        self.df = float(df)
        self.k = self.offset.shape[-1]
        self.per_particle = self.offset.ndim == 2 or self.chol.ndim == 3
        if self.k:
            self._chol_inv = np.linalg.inv(self.chol)
            diag = np.diagonal(self.chol, axis1=-2, axis2=-1)
            if np.any(diag <= 0):
                raise ValueError("scale factor must have a positive diagonal")
            self._logdet = 2.0 * np.sum(np.log(diag), axis=-1)
        else:
            self._chol_inv = self.chol
            self._logdet = np.zeros(self.chol.shape[:-2])

    def mean(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        m = self.offset if self.offset.ndim == 2 else np.broadcast_to(self.offset, c.shape[:-1] + (self.k,))
        if self.gain is not None and self.gain.size:
            m = m + c @ self.gain.T
        return m

    def take(self, idx) -> "ConditionalGaussian":
        """Restrict per-particle parameters to the rows ``idx``."""
        if not self.per_particle:
            return self
        off = self.offset[idx] if self.offset.ndim == 2 else self.offset
        chol = self.chol[idx] if self.chol.ndim == 3 else self.chol
        return ConditionalGaussian(off, chol, self.gain, self.family, self.df)

    def sample(self, c, n: int, rng: np.random.Generator) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        N = c.shape[0]
        if self.k == 0:
            return np.zeros((N, n, 0))
        z = rng.standard_normal((N, n, self.k))
        if self.chol.ndim == 3:
            z = np.einsum("nij,npj->npi", self.chol, z)
        else:
            z = z @ self.chol.T
        if self.family == "student-t":
            g = rng.chisquare(self.df, size=(N, n))
            z = z / np.sqrt(g / self.df)[..., None]
        return self.mean(c)[:, None, :] + z

    def logpdf(self, x, c) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.k == 0:
            return np.zeros(x.shape[:-1])
        diff = x - self.mean(c)[:, None, :]
        if self._chol_inv.ndim == 3:
            z = np.einsum("nij,npj->npi", self._chol_inv, diff)
            logdet = self._logdet[:, None]
        else:
            z = diff @ self._chol_inv.T
            logdet = self._logdet
        quad = np.sum(z * z, axis=-1)
        k = self.k
        if self.family == "gaussian":
            return -0.5 * (k * _LOG2PI + logdet + quad)
        nu = self.df
        return (
            gammaln(0.5 * (nu + k))
            - gammaln(0.5 * nu)
            - 0.5 * k * math.log(nu * math.pi)
            - 0.5 * logdet
            - 0.5 * (nu + k) * np.log1p(quad / nu)
        )


@dataclass(frozen=True)
class ProjectedPrior:
    """Prior re-expressed in a basis: marginal of a and conditional of i | a."""

    basis: SubspaceBasis
    marginal_a: GaussianPrior
    conditional_i: ConditionalGaussian

    def log_joint(self, a, i) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        i = np.asarray(i, dtype=float)
        return self.marginal_a.logpdf(a) + self.conditional_i.logpdf(i[:, None, :], a)[:, 0]


def project_prior(prior: GaussianPrior, basis: SubspaceBasis) -> ProjectedPrior:
    """Exact Gaussian marginal/conditional of the prior in a new basis."""
    if basis.d != prior.d:
        raise ValueError(f"basis dimension {basis.d} != prior dimension {prior.d}")
    A, I = basis.active, basis.inactive
    d_a, d_i = basis.d_a, basis.d_i
    if prior.isotropic_var is not None:
        var = prior.isotropic_var
        marginal = GaussianPrior(prior.mean @ A, var)
        conditional = ConditionalGaussian(prior.mean @ I, math.sqrt(var) * np.eye(d_i))
        return ProjectedPrior(basis, marginal, conditional)
    B = basis.matrix
    m = prior.mean @ B
    S = B.T @ prior.cov @ B
    S = 0.5 * (S + S.T)
    S_aa, S_ai, S_ii = S[:d_a, :d_a], S[:d_a, d_a:], S[d_a:, d_a:]
    marginal = GaussianPrior(m[:d_a], S_aa)
    if d_i == 0:
        return ProjectedPrior(basis, marginal, ConditionalGaussian(np.zeros(0), np.zeros((0, 0))))
    fac = cho_factor(S_aa, lower=True)
    gain = cho_solve(fac, S_ai).T  # S_ia S_aa^{-1}
    cond_cov = S_ii - gain @ S_ai
    cond_cov = 0.5 * (cond_cov + cond_cov.T)
    conditional = ConditionalGaussian(m[d_a:] - gain @ m[:d_a], np.linalg.cholesky(cond_cov), gain)
    return ProjectedPrior(basis, marginal, conditional)


class AnnealedLikelihood:
    """Factors l_s = l^(eta_s - eta_{s-1}) for 0 = eta_0 < ... < eta_T = 1."""

    kind = "annealed"

    def __init__(self, loglik: Callable, score: Callable, temperatures):
        eta = np.asarray(temperatures, dtype=float)
        if eta.ndim != 1 or len(eta) < 1:
            raise ValueError("temperatures must be a 1-D sequence")
        if eta[0] != 0.0 or eta[-1] != 1.0:
            raise ValueError("temperatures must start at 0 and end at 1")
        if np.any(np.diff(eta) <= 0):
            raise ValueError("temperatures must be strictly increasing")
        self.loglik = loglik
        self._score = score
        self.temperatures = eta

    @property
    def T(self) -> int:
        return len(self.temperatures) - 1

    def _check(self, t):
        if not 0 <= t <= self.T:
            raise ValueError(f"stage {t} outside 0..{self.T}")

    def log_l(self, theta, t: int) -> np.ndarray:
        self._check(t)
        theta = np.asarray(theta, dtype=float)
        if t == 0:
            return np.zeros(theta.shape[:-1])
        return self.temperatures[t] * self.loglik(theta)

    def log_l_pair(self, theta, t: int):
        """(log l_{1:t}, log l_{1:t-1}) from a single likelihood evaluation."""
        self._check(t)
        if t == 0:
            raise ValueError("no previous stage for t=0")
        L = self.loglik(np.asarray(theta, dtype=float))
        prev = np.zeros_like(L) if t == 1 else self.temperatures[t - 1] * L
        return self.temperatures[t] * L, prev

    def score(self, theta, t: int | None = None) -> np.ndarray:
        g = self._score(np.asarray(theta, dtype=float))
        if t is None:
            return g
        self._check(t)
        return self.temperatures[t] * g


class DataTemperedLikelihood:
    """Factors l_s given directly by ``block_loglik(theta, s)``, s = 1..T.

    ``n_blocks = 0`` gives a flat likelihood, i.e. sampling the prior.
    """

    kind = "data-tempered"

    def __init__(self, block_loglik: Callable, block_score: Callable, n_blocks: int):
        if n_blocks < 0:
            raise ValueError("number of blocks must be nonnegative")
        self.block_loglik = block_loglik
        self.block_score = block_score
        self._T = int(n_blocks)

    @property
    def T(self) -> int:
        return self._T

    def _check(self, t):
        if not 0 <= t <= self.T:
            raise ValueError(f"stage {t} outside 0..{self.T}")

    def loglik(self, theta) -> np.ndarray:
        return self.log_l(theta, self.T)

    def log_l(self, theta, t: int) -> np.ndarray:
        self._check(t)
        theta = np.asarray(theta, dtype=float)
        out = np.zeros(theta.shape[:-1])
        for s in range(1, t + 1):
            out = out + self.block_loglik(theta, s)
        return out

    def log_l_pair(self, theta, t: int):
        self._check(t)
        if t == 0:
            raise ValueError("no previous stage for t=0")
        prev = self.log_l(theta, t - 1)
        return prev + self.block_loglik(np.asarray(theta, dtype=float), t), prev

    def score(self, theta, t: int | None = None) -> np.ndarray:
        t = self.T if t is None else t
        self._check(t)
        theta = np.asarray(theta, dtype=float)
        out = np.zeros(theta.shape)
        for s in range(1, t + 1):
            out = out + self.block_score(theta, s)
        return out


class TargetModel:
    """Gaussian prior plus a factorised likelihood.

    Parameters
    ----------
    prior : GaussianPrior
    factors : AnnealedLikelihood or DataTemperedLikelihood
    name : str, optional
    """

    def __init__(self, prior: GaussianPrior, factors, name: str = "model"):
        if not isinstance(prior, GaussianPrior):
            raise TypeError("only Gaussian priors are supported")
        self.prior = prior
        self.factors = factors
        self.name = name

    @property
    def d(self) -> int:
        return self.prior.d

    @property
    def T(self) -> int:
        return self.factors.T

    def log_prior(self, theta) -> np.ndarray:
        return self.prior.logpdf(theta)

    def sample_prior(self, rng, size) -> np.ndarray:
        return self.prior.sample(rng, size)

    def loglik(self, theta) -> np.ndarray:
        return self.factors.loglik(np.asarray(theta, dtype=float))

    def log_l(self, theta, t: int) -> np.ndarray:
        return self.factors.log_l(theta, t)

    def log_l_pair(self, theta, t: int):
        return self.factors.log_l_pair(theta, t)

    def score(self, theta, t: int | None = None) -> np.ndarray:
        return self.factors.score(theta, t)
