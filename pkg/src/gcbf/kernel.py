"""Squared-exponential kernel with analytic query-point derivatives.

k(xi, xj) = sf2 * exp(-1/2 (xi - xj)^T L^-2 (xi - xj)) + [i == j] * sy2

with per-axis length scales l (L = diag(l)), signal variance sf2 and
observation-noise variance sy2. The Kronecker noise term models noisy
observations of a noise-free latent function: it belongs on the training
Gram diagonal only and is never added to cross-covariance vectors or to
the prior variance at a query point.

Derivatives are taken with respect to the query point xq of the smooth
part only:

    grad k(xi, xq)  =  k * L^-2 (xi - xq)
    hess k(xi, xq)  =  k * (L^-2 d d^T L^-2 - L^-2),   d = xi - xq

All functions here are pure and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Hyperparameters",
    "kernel_eval",
    "kernel_grad",
    "kernel_hess",
    "cross_covariance",
    "cross_grad_matrix",
    "gram_matrix",
    "GRAM_JITTER",
]

# Added to the Gram diagonal when sy2 < GRAM_JITTER so the factorization
# stays well conditioned (near-noise-free datasets are otherwise fragile).
GRAM_JITTER = 1e-8


@dataclass
class Hyperparameters:
    """SE-kernel parameter set: per-axis length scales, sf2, sy2."""

    length_scales: np.ndarray
    signal_variance: float
    noise_variance: float

    def __post_init__(self):
        self.length_scales = np.atleast_1d(np.asarray(self.length_scales, dtype=float))
        self.signal_variance = float(self.signal_variance)
        self.noise_variance = float(self.noise_variance)
        if self.length_scales.ndim != 1 or self.length_scales.size == 0:
            raise ValueError("length_scales must be a non-empty vector")
        if not np.all(self.length_scales > 0.0):
            raise ValueError("every length scale must be strictly positive")
        if not self.signal_variance > 0.0:
            raise ValueError("signal_variance must be strictly positive")
        if self.noise_variance < 0.0:
            raise ValueError("noise_variance must be non-negative")

    @property
    def dim(self) -> int:
        return self.length_scales.size

    @property
    def inv_sq_lengths(self) -> np.ndarray:
        """Diagonal of L^-2."""
        return self.length_scales ** -2.0

    @property
    def effective_noise(self) -> float:
        """Gram-diagonal noise including the conditioning jitter."""
        sy2 = self.noise_variance
        return sy2 if sy2 >= GRAM_JITTER else sy2 + GRAM_JITTER


def _check_dim(x: np.ndarray, theta: Hyperparameters, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (theta.dim,):
        raise ValueError(
            f"{name} has shape {x.shape}, expected ({theta.dim},) to match length_scales"
        )
    return x


def kernel_eval(xi, xj, theta: Hyperparameters, same_index: bool = False) -> float:
    """SE kernel value; adds sy2 only when both arguments are the same datum."""
    xi = _check_dim(xi, theta, "xi")
    xj = _check_dim(xj, theta, "xj")
    d = xi - xj
    val = theta.signal_variance * np.exp(-0.5 * float(d @ (theta.inv_sq_lengths * d)))
    if same_index:
        val += theta.noise_variance
    return float(val)


def kernel_grad(xi, xq, theta: Hyperparameters) -> np.ndarray:
    """Gradient of k(xi, .) at the query point xq (noise term excluded)."""
    xi = _check_dim(xi, theta, "xi")
    xq = _check_dim(xq, theta, "xq")
    d = xi - xq
    k = kernel_eval(xi, xq, theta, same_index=False)
    return k * theta.inv_sq_lengths * d


def kernel_hess(xi, xq, theta: Hyperparameters) -> np.ndarray:
    """Hessian of k(xi, .) at xq: k * (L^-2 d d^T L^-2 - L^-2), symmetric."""
    xi = _check_dim(xi, theta, "xi")
    xq = _check_dim(xq, theta, "xq")
    d = xi - xq
    k = kernel_eval(xi, xq, theta, same_index=False)
    w = theta.inv_sq_lengths * d
    return k * (np.outer(w, w) - np.diag(theta.inv_sq_lengths))


def cross_covariance(X: np.ndarray, xq, theta: Hyperparameters) -> np.ndarray:
    """Vector k(xq) of kernel values between each row of X and xq, no noise."""
    X = np.asarray(X, dtype=float)
    xq = _check_dim(xq, theta, "xq")
    if X.ndim != 2 or X.shape[1] != theta.dim:
        raise ValueError(f"X has shape {X.shape}, expected (N, {theta.dim})")
    d = X - xq
    sq = d * d @ theta.inv_sq_lengths
    return theta.signal_variance * np.exp(-0.5 * sq)


def cross_grad_matrix(X: np.ndarray, xq, theta: Hyperparameters) -> np.ndarray:
    """N x n Jacobian of k(.) at xq; row i is kernel_grad(X[i], xq)."""
    X = np.asarray(X, dtype=float)
    xq = _check_dim(xq, theta, "xq")
    k = cross_covariance(X, xq, theta)
    return k[:, None] * (X - xq) * theta.inv_sq_lengths


def gram_matrix(X: np.ndarray, theta: Hyperparameters) -> np.ndarray:
    """Training Gram matrix with sy2 (plus jitter if needed) on the diagonal."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != theta.dim:
        raise ValueError(f"X has shape {X.shape}, expected (N, {theta.dim})")
    sq = _pairwise_scaled_sq_dists(X, theta)
    K = theta.signal_variance * np.exp(-0.5 * sq)
    K[np.diag_indices_from(K)] += theta.effective_noise
    return K


def _pairwise_scaled_sq_dists(X: np.ndarray, theta: Hyperparameters) -> np.ndarray:
    """(xi - xj)^T L^-2 (xi - xj) for all pairs, clipped at zero."""
    Z = X * np.sqrt(theta.inv_sq_lengths)
    nrm = np.sum(Z * Z, axis=1)
    sq = nrm[:, None] + nrm[None, :] - 2.0 * (Z @ Z.T)
    np.maximum(sq, 0.0, out=sq)
    # exact zeros on the diagonal keep gram symmetry bitwise
    np.fill_diagonal(sq, 0.0)
    return sq
