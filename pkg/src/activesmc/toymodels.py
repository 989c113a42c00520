"""Toy models with analytic scores.

* plane: y ~ N(sum(theta), 1), likelihood flat off the ones direction.
* banana: y ~ N(sum(theta) + b * sum(theta[:k]**2), 1), a curved ridge.
* Gauss-Cauchy: separable per-coordinate Gaussian times Cauchy factors,
  whose prior and posterior active subspaces point along different axes.

All use the isotropic prior N(0, prior_var * I).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import AnnealedLikelihood, GaussianPrior, TargetModel

__all__ = [
    "PlaneModel",
    "BananaModel",
    "GaussCauchyModel",
    "plane_log_evidence",
    "plane_posterior_moments",
    "gausscauchy_score",
    "make_model",
]

_LOG2PI = math.log(2.0 * math.pi)


def _ridge_loglik(mu, data):
    """sum_k log N(y_k; mu, 1) written via the sample mean for stability."""
    n = data.shape[0]
    ybar = data.mean() if n else 0.0
    ss = float(np.sum((data - ybar) ** 2))
    return -0.5 * (n * _LOG2PI + ss + n * (mu - ybar) ** 2)


class _ToyModel:
    """Shared plumbing: prior, and conversion to an annealed TargetModel."""

    name = "toy"
    d: int
    prior_var: float

    @property
    def prior(self) -> GaussianPrior:
        return GaussianPrior(np.zeros(self.d), self.prior_var)

    def target(self, temperatures=(0.0, 1.0)) -> TargetModel:
        return TargetModel(self.prior, AnnealedLikelihood(self.loglik, self.score, temperatures), self.name)


@dataclass
class BananaModel(_ToyModel):
    """Banana model; the first ``k`` coordinates carry the curvature term."""

    d: int
    k: int
    b: float
    data: np.ndarray
    prior_var: float = 5000.0
    name: str = field(default="banana", init=False)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float).ravel()
        if not 0 <= self.k <= self.d:
            raise ValueError("need 0 <= k <= d")

    @classmethod
    def synthetic(cls, rng, d: int = 25, k: int = 3, b: float = 1e-3, n_obs: int = 100):
        return cls(d, k, b, rng.standard_normal(n_obs))

    def mean_response(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return np.sum(theta, axis=-1) + self.b * np.sum(theta[..., : self.k] ** 2, axis=-1)

    def loglik(self, theta) -> np.ndarray:
        return _ridge_loglik(self.mean_response(theta), self.data)

    def score(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        n = self.data.shape[0]
        r = np.sum(self.data) - n * self.mean_response(theta)
        direction = np.ones(theta.shape)
        direction[..., : self.k] += 2.0 * self.b * theta[..., : self.k]
        return r[..., None] * direction


class PlaneModel(BananaModel):
    """Plane model: the banana model with zero curvature."""

    def __init__(self, d: int, data, prior_var: float = 5000.0):
        super().__init__(d, 0, 0.0, data, prior_var)
        self.name = "plane"

    @classmethod
    def synthetic(cls, rng, d: int = 25, n_obs: int = 100):
        return cls(d, rng.standard_normal(n_obs))


@dataclass
class GaussCauchyModel(_ToyModel):
    """l(theta) prop. to prod_j exp(-(theta_j/sigma_j)^2) / (1 + (theta_j/gamma_j)^2)."""

    sigma: np.ndarray = field(default_factory=lambda: np.array([10.0, 50.0]))
    gamma: np.ndarray = field(default_factory=lambda: np.array([1e12, 0.1]))
    prior_var: float = 5000.0
    name: str = field(default="gauss-cauchy", init=False)

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=float)
        if self.sigma.shape != self.gamma.shape:
            raise ValueError("sigma and gamma must have the same length")

    @property
    def d(self) -> int:
        return self.sigma.shape[0]

    def loglik_terms(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return -((theta / self.sigma) ** 2) - np.log1p((theta / self.gamma) ** 2)

    def loglik(self, theta) -> np.ndarray:
        return np.sum(self.loglik_terms(theta), axis=-1)

    def score(self, theta) -> np.ndarray:
        return gausscauchy_score(theta, self.sigma, self.gamma)


def gausscauchy_score(theta, sigma=(10.0, 50.0), gamma=(1e12, 0.1)) -> np.ndarray:
    """Componentwise -2 theta_j (1/sigma_j^2 + 1/(theta_j^2 + gamma_j^2))."""
    theta = np.asarray(theta, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    return -2.0 * theta * (1.0 / sigma**2 + 1.0 / (theta**2 + gamma**2))


def plane_log_evidence(model: BananaModel) -> float:
    """Exact log marginal likelihood of the plane model.

    y ~ N(0, I + c J) with c = d * prior_var and J the all-ones matrix, using
    det(I + cJ) = 1 + nc and (I + cJ)^{-1} = I - c J / (1 + nc).
    """
    if model.b != 0.0 and model.k > 0:
        raise ValueError("closed form only holds for the plane model")
    y = model.data
    n = y.shape[0]
    c = model.d * model.prior_var
    quad = float(y @ y) - c * float(np.sum(y)) ** 2 / (1.0 + n * c)
    return -0.5 * (n * _LOG2PI + math.log1p(n * c) + quad)


def plane_posterior_moments(model: BananaModel):
    """Exact posterior mean and covariance of theta under the plane model."""
    if model.b != 0.0 and model.k > 0:
        raise ValueError("closed form only holds for the plane model")
    d, v = model.d, model.prior_var
    n = model.data.shape[0]
    denom = 1.0 + n * d * v
    mean = np.full(d, np.sum(model.data) * v / denom)
    cov = v * np.eye(d) - (n * v * v / denom) * np.ones((d, d))
    return mean, cov


def make_model(name: str, rng=None, **params):
    """Build a toy model by name (``plane``, ``banana``, ``gauss-cauchy``)."""
    rng = np.random.default_rng(0) if rng is None else rng
    if name == "plane":
        d = params.pop("d", 25)
        n_obs = params.pop("n_obs", 100)
        prior_var = params.pop("prior_var", 5000.0)
        data = params.pop("data", None)
        data = rng.standard_normal(n_obs) if data is None else data
        model = PlaneModel(d, data, prior_var)
    elif name == "banana":
        d = params.pop("d", 25)
        k = params.pop("k", 3)
        b = params.pop("b", 1e-3)
        n_obs = params.pop("n_obs", 100)
        prior_var = params.pop("prior_var", 5000.0)
        data = params.pop("data", None)
        data = rng.standard_normal(n_obs) if data is None else data
        model = BananaModel(d, k, b, data, prior_var)
    elif name == "gauss-cauchy":
        model = GaussCauchyModel(
            np.asarray(params.pop("sigma", (10.0, 50.0))),
            np.asarray(params.pop("gamma", (1e12, 0.1))),
            params.pop("prior_var", 5000.0),
        )
    else:
        raise ValueError(f"unknown model {name!r}")
    if params:
        raise ValueError(f"unknown parameters for {name}: {sorted(params)}")
    return model
