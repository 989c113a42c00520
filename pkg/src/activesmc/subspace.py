"""Active subspace estimation.

The active subspace of a likelihood is read off the eigendecomposition of
the (weighted) average outer product of its score,

    C = sum_m w_m g_m g_m^T,    g_m = grad log l(theta_m),

with the leading eigenvectors spanning the directions the likelihood
informs.  Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "GradientSample",
    "Spectrum",
    "GapRule",
    "SubspaceBasis",
    "estimate_as_matrix",
    "jacobi_eigh",
    "eigendecompose",
    "split_basis",
    "estimate_basis",
    "write_spectrum_csv",
]

# ratio guard for the largest-gap rule
_GAP_EPS = 1e-300
# eigenvalues below this fraction of the largest are treated as exact zeros
_NULL_FLOOR = 1e-10


@dataclass(frozen=True)
class GradientSample:
    point: np.ndarray
    gradient: np.ndarray
    weight: float

    def __post_init__(self):
        if np.shape(self.point) != np.shape(self.gradient):
            raise ValueError("gradient and point must have the same length")
        if not self.weight >= 0:
            raise ValueError("weight must be nonnegative")


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues (descending) with the matching orthonormal eigenvectors
    stored column-wise."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def d(self) -> int:
        return len(self.eigenvalues)

    def explained_fraction(self) -> np.ndarray:
        lam = np.clip(self.eigenvalues, 0.0, None)
        total = lam.sum()
        if total <= 0:
            return np.full(self.d, 1.0 / self.d)
        return lam / total


@dataclass(frozen=True)
class GapRule:
    """How to choose the active dimension from a spectrum.

    ``kind`` is one of ``"largest-gap"``, ``"explained-variance"`` or
    ``"fixed"``.
    """

    kind: str = "largest-gap"
    fraction: float = 0.9
    d_a: int | None = None
    threshold: float = 2.0

    def __post_init__(self):
        if self.kind not in ("largest-gap", "explained-variance", "fixed"):
            raise ValueError(f"unknown gap rule {self.kind!r}")
        if self.kind == "fixed" and self.d_a is None:
            raise ValueError("fixed gap rule needs d_a")
        if self.kind == "explained-variance" and not 0 < self.fraction <= 1:
            raise ValueError("explained-variance fraction must lie in (0, 1]")

    @classmethod
    def largest_gap(cls, threshold: float = 2.0) -> "GapRule":
        return cls("largest-gap", threshold=threshold)

    @classmethod
    def explained_variance(cls, fraction: float = 0.9) -> "GapRule":
        return cls("explained-variance", fraction=fraction)

    @classmethod
    def fixed(cls, d_a: int) -> "GapRule":
        return cls("fixed", d_a=int(d_a))


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal split of R^d into active columns ``active`` (d x d_a) and
    inactive columns ``inactive`` (d x d_i), so theta = A a + I i."""

    active: np.ndarray
    inactive: np.ndarray
    spectrum: Spectrum | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.active.ndim != 2 or self.inactive.ndim != 2:
            raise ValueError("basis matrices must be 2-D")
        if self.active.shape[0] != self.inactive.shape[0]:
            raise ValueError("active and inactive blocks have different row counts")
        if self.active.shape[1] < 1:
            raise ValueError("the active subspace must have dimension >= 1")
        if self.active.shape[1] + self.inactive.shape[1] != self.active.shape[0]:
            raise ValueError("d_a + d_i must equal d")

    @property
    def d(self) -> int:
        return self.active.shape[0]

    @property
    def d_a(self) -> int:
        return self.active.shape[1]

    @property
    def d_i(self) -> int:
        return self.inactive.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        return np.hstack([self.active, self.inactive])

    @classmethod
    def identity(cls, d: int) -> "SubspaceBasis":
        """All directions active: a = theta."""
        return cls(np.eye(d), np.zeros((d, 0)))

    def to_active(self, theta: np.ndarray) -> np.ndarray:
        return theta @ self.active

    def to_inactive(self, theta: np.ndarray) -> np.ndarray:
        return theta @ self.inactive

    def reconstruct(self, a: np.ndarray, i: np.ndarray) -> np.ndarray:
        """theta = A a + I i, broadcasting over leading axes."""
        return a @ self.active.T + i @ self.inactive.T

    def aligned_to(self, previous: "SubspaceBasis") -> "SubspaceBasis":
        """Flip column signs so each column has a nonnegative inner product
        with the corresponding column of ``previous`` (where one exists)."""
        A, I = self.active.copy(), self.inactive.copy()
        for new, old in ((A, previous.active), (I, previous.inactive)):
            k = min(new.shape[1], old.shape[1])
            if k:
                flip = np.einsum("ij,ij->j", new[:, :k], old[:, :k]) < 0
                new[:, :k][:, flip] *= -1.0
        return SubspaceBasis(A, I, self.spectrum)


def _as_arrays(samples, weights):
    if isinstance(samples, Sequence) and samples and isinstance(samples[0], GradientSample):
        grads = np.array([s.gradient for s in samples], dtype=float)
        weights = np.array([s.weight for s in samples], dtype=float)
        return grads, weights
    grads = np.atleast_2d(np.asarray(samples, dtype=float))
    if weights is None:
        weights = np.full(grads.shape[0], 1.0 / max(grads.shape[0], 1))
    return grads, np.asarray(weights, dtype=float).ravel()


def estimate_as_matrix(samples, weights=None) -> np.ndarray:
    """Weighted gradient outer-product matrix ``sum_m w_m g_m g_m^T``.

    Parameters
    ----------
    samples : sequence of GradientSample, or array of shape (M, d)
        Score vectors.  When an array is given, ``weights`` defaults to
        equal weights 1/M.
    weights : array of shape (M,), optional
        Normalised weights (must sum to one).
    """
    grads, w = _as_arrays(samples, weights)
    if grads.size == 0 or grads.shape[0] == 0:
        raise ValueError("need at least one gradient sample")
    if w.shape[0] != grads.shape[0]:
        raise ValueError("weights and gradients have different lengths")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if abs(w.sum() - 1.0) > 1e-8:
        raise ValueError(f"weights must sum to one (got {w.sum()!r})")
    bad = np.flatnonzero(~np.all(np.isfinite(grads), axis=1))
    if bad.size:
        raise ValueError(f"non-finite gradient at sample index {int(bad[0])}")
    C = (grads * w[:, None]).T @ grads
    return 0.5 * (C + C.T)


def jacobi_eigh(matrix, tol: float = 1e-12, max_sweeps: int = 100):
    """Cyclic Jacobi eigenvalue iteration for a real symmetric matrix.

    Returns the (unsorted) eigenvalues and the matrix of eigenvectors.
    Iterates until the off-diagonal Frobenius norm falls below
    ``tol * ||matrix||_F``.
    """
    a = np.array(matrix, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a)
    if n == 0 or scale == 0.0:
        return np.diag(a).copy(), v
    target = tol * scale
    upper = np.triu(np.ones((n, n), dtype=bool), 1)
    for _ in range(max_sweeps):
        # off-diagonal norm taken directly; subtracting the diagonal from
        # the full norm cancels catastrophically when one eigenvalue dominates
        if math.sqrt(2.0) * np.linalg.norm(a[upper]) < target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    a[p, q] = a[q, p] = 0.0
                    continue
                diff = a[q, q] - a[p, p]
                if abs(apq) < 1e-18 * abs(diff):
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise RuntimeError("Jacobi iteration did not converge")
    return np.diag(a).copy(), v


def eigendecompose(matrix, symmetry_tol: float = 1e-10) -> Spectrum:
    """Deterministic symmetric eigendecomposition.

    Eigenvalues are sorted descending (stable, ties keep index order) and
    each eigenvector is signed so its first non-negligible entry is positive.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    asym = np.max(np.abs(m - m.T)) if m.size else 0.0
    if asym > symmetry_tol * max(1.0, np.max(np.abs(m), initial=0.0)):
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3g})")
    vals, vecs = jacobi_eigh(0.5 * (m + m.T))
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    for j in range(vecs.shape[1]):
        col = vecs[:, j]
        big = np.flatnonzero(np.abs(col) > 1e-12 * np.max(np.abs(col)))
        if big.size and col[big[0]] < 0:
            vecs[:, j] = -col
    return Spectrum(vals, vecs)


def _active_dimension(eigenvalues: np.ndarray, rule: GapRule) -> int:
    d = len(eigenvalues)
    if rule.kind == "fixed":
        if not 1 <= rule.d_a <= d:
            raise ValueError(f"fixed d_a={rule.d_a} outside [1, {d}]")
        return rule.d_a
    lam_max = eigenvalues[0] if d else 0.0
    if d == 1 or lam_max <= 0:
        return d
    lam = np.where(eigenvalues > _NULL_FLOOR * lam_max, eigenvalues, 0.0)
    if rule.kind == "explained-variance":
        frac = np.cumsum(lam) / lam.sum()
        return int(min(np.searchsorted(frac, rule.fraction - 1e-12) + 1, d))
    with np.errstate(over="ignore", divide="ignore"):
        ratios = lam[:-1] / (lam[1:] + _GAP_EPS)
    j = int(np.argmax(ratios))
    if ratios[j] < rule.threshold:
        return d
    return j + 1


def split_basis(spectrum: Spectrum, rule: GapRule | None = None) -> SubspaceBasis:
    """Split the eigenvectors into active (top d_a) and inactive columns."""
    rule = rule or GapRule()
    d_a = _active_dimension(np.asarray(spectrum.eigenvalues), rule)
    V = spectrum.eigenvectors
    return SubspaceBasis(V[:, :d_a].copy(), V[:, d_a:].copy(), spectrum)


def estimate_basis(gradients, weights=None, rule: GapRule | None = None) -> SubspaceBasis:
    return split_basis(eigendecompose(estimate_as_matrix(gradients, weights)), rule)


def write_spectrum_csv(path, spectrum: Spectrum) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "eigenvalue"])
        for j, lam in enumerate(spectrum.eigenvalues):
            writer.writerow([j, repr(float(lam))])
