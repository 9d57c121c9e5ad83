"""Safety function built from the GP posterior: h = w_mu * mu - w_var * sigma^2.

The posterior mean is the belief in safety, the posterior variance its
uncertainty; subtracting the (weighted) variance makes unexplored regions
unsafe by default. Everything needed by the QP filter is analytic:

    value      h(x)   = w_mu mu(x) - w_var sigma^2(x)
    gradient   dmu    = J^T beta,          dvar = -2 J^T K^-1 k(x)
    hessian    H_mu   = sum_i beta_i d2k_i(x)
               H_var  = -2 J^T K^-1 J - 2 sum_i b_i d2k_i(x),  b = K^-1 k(x)

with J the N x n matrix of kernel gradients at x.

For a Gaussian-distributed query x ~ N(mu, Sigma) the exact first two
moments of the predictive distribution replace the pointwise posterior
(moment matching):

    mean       q^T beta,
               q_i = sf2 |Sigma L^-2 + I|^(-1/2)
                     exp(-1/2 (x_i - mu)^T (Sigma + L^2)^-1 (x_i - mu))
    variance   sf2 - tr(K^-1 V) + beta^T V beta - (beta^T q)^2
               v_ij = k(x_i, mu) k(x_j, mu) / |2 Sigma L^-2 + I|^(1/2)
                      * exp((z_ij - mu)^T T (z_ij - mu))
               z_ij = (x_i + x_j)/2,  T = (Sigma + L^2/2)^-1 Sigma L^-2

The variance is the law-of-total-variance target Var[mu(x)] + E[sigma^2(x)];
with Sigma = 0 every noisy quantity collapses exactly to its deterministic
counterpart. Derivatives with respect to mu follow from

    dq_i/dmu  = q_i R^-1 (x_i - mu),          R = Sigma + L^2
    dv_ij/dmu = v_ij S (z_ij - mu),           S = (Sigma + L^2/2)^-1

and differentiating once more gives the Hessians (Gaussian-bump identities,
finite-difference verified in the test suite).

All evaluations are pure functions over a model snapshot and can run
concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gp import CorruptModelError, GpModel
from .kernel import cross_covariance, cross_grad_matrix

__all__ = [
    "GcbfWeights",
    "GaussianState",
    "SafetyEvaluation",
    "evaluate",
    "noisy_mean",
    "noisy_variance",
    "noisy_evaluate",
    "grid_evaluate",
    "grid_to_csv",
]


@dataclass
class GcbfWeights:
    """Relative weighting of safety belief vs uncertainty."""

    mean_weight: float = 1.0
    variance_weight: float = 1.0

    def __post_init__(self):
        self.mean_weight = float(self.mean_weight)
        self.variance_weight = float(self.variance_weight)
        if self.variance_weight < 0.0:
            raise ValueError("variance_weight must be non-negative")


@dataclass
class GaussianState:
    """Query state distribution N(mean, covariance)."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.covariance = np.asarray(self.covariance, dtype=float)
        n = self.mean.size
        if self.covariance.shape != (n, n):
            raise ValueError("covariance shape must match the mean dimension")
        if np.max(np.abs(self.covariance - self.covariance.T)) > 1e-10:
            raise ValueError("covariance must be symmetric")
        self.covariance = 0.5 * (self.covariance + self.covariance.T)
        if n and float(np.min(np.linalg.eigvalsh(self.covariance))) < -1e-12:
            raise ValueError("covariance must be positive semidefinite")

    @property
    def dim(self) -> int:
        return self.mean.size

    def marginal(self, dims) -> "GaussianState":
        """Marginal distribution over a subset of coordinates."""
        dims = np.asarray(dims, dtype=int)
        return GaussianState(self.mean[dims], self.covariance[np.ix_(dims, dims)])


@dataclass
class SafetyEvaluation:
    """h value with gradient and Hessian at one query."""

    value: float
    gradient: np.ndarray
    hessian: np.ndarray

    def __post_init__(self):
        self.value = float(self.value)
        self.gradient = np.asarray(self.gradient, dtype=float)
        self.hessian = np.asarray(self.hessian, dtype=float)
        n = self.gradient.size
        if self.hessian.shape != (n, n):
            raise ValueError("hessian shape must match the gradient dimension")
        if n and np.max(np.abs(self.hessian - self.hessian.T)) > 1e-10:
            raise ValueError("hessian must be symmetric")

    def embed(self, dims, total_dim: int) -> "SafetyEvaluation":
        """Lift into a larger state space; h depends only on `dims` there."""
        dims = np.asarray(dims, dtype=int)
        grad = np.zeros(total_dim)
        grad[dims] = self.gradient
        hess = np.zeros((total_dim, total_dim))
        hess[np.ix_(dims, dims)] = self.hessian
        return SafetyEvaluation(self.value, grad, hess)


def evaluate(model: GpModel, weights: GcbfWeights, xq) -> SafetyEvaluation:
    """Deterministic h, gradient and Hessian at a noise-free query point."""
    model._require_data()
    xq = np.asarray(xq, dtype=float)
    theta = model.theta
    X = model.dataset.inputs
    beta = model.beta

    k = cross_covariance(X, xq, theta)
    b = model.gram_inverse @ k
    J = cross_grad_matrix(X, xq, theta)  # (N, n)

    mu = float(k @ beta)
    var = theta.signal_variance - float(k @ b)
    grad_mu = J.T @ beta
    grad_var = -2.0 * (J.T @ b)

    inv_sq = theta.inv_sq_lengths
    D = X - xq
    hess_mu = _weighted_hess(D, k, beta, inv_sq)
    hess_var = -2.0 * (J.T @ (model.gram_inverse @ J)) - 2.0 * _weighted_hess(D, k, b, inv_sq)

    wm, wv = weights.mean_weight, weights.variance_weight
    return SafetyEvaluation(
        value=wm * mu - wv * var,
        gradient=wm * grad_mu - wv * grad_var,
        hessian=_symmetrize(wm * hess_mu - wv * hess_var),
    )


def _weighted_hess(D, k, c, inv_sq):
    """sum_i c_i * kernel_hess(x_i, xq) given D = X - xq and k(xq)."""
    w = c * k
    scaled = D * inv_sq
    return scaled.T @ (w[:, None] * scaled) - float(np.sum(w)) * np.diag(inv_sq)


def _symmetrize(M):
    return 0.5 * (M + M.T)


# -- moment matching under a Gaussian query state ---------------------------


def _check_q_state(model: GpModel, q_state: GaussianState) -> None:
    model._require_data()
    if q_state.dim != model.theta.dim:
        raise ValueError(
            f"query dimension {q_state.dim} does not match model dimension {model.theta.dim}"
        )


def _expected_cross_cov(model: GpModel, q_state: GaussianState):
    """q vector, its Jacobian scaffold R^-1 (x_i - mu), and coefficient."""
    theta = model.theta
    mu, Sigma = q_state.mean, q_state.covariance
    L2 = np.diag(theta.length_scales ** 2)
    A = Sigma * theta.inv_sq_lengths[None, :] + np.eye(theta.dim)  # Sigma L^-2 + I
    det = float(np.linalg.det(A))
    if det <= 0.0:
        raise ValueError("Sigma L^-2 + I must have positive determinant")
    R = Sigma + L2
    try:
        Rinv = np.linalg.inv(R)
    except np.linalg.LinAlgError as exc:  # cannot occur for valid inputs
        raise ValueError("Sigma + L^2 is not invertible") from exc
    D = model.dataset.inputs - mu
    quad = np.einsum("ia,ab,ib->i", D, Rinv, D)
    q = theta.signal_variance * det ** -0.5 * np.exp(-0.5 * quad)
    return q, Rinv, D


def noisy_mean(model: GpModel, q_state: GaussianState) -> float:
    """Expected posterior mean under the query distribution: q^T beta."""
    _check_q_state(model, q_state)
    q, _, _ = _expected_cross_cov(model, q_state)
    return float(q @ model.beta)


def _v_matrix(model: GpModel, q_state: GaussianState):
    """V matrix of expected kernel products, plus S = (Sigma + L^2/2)^-1."""
    theta = model.theta
    mu, Sigma = q_state.mean, q_state.covariance
    X = model.dataset.inputs
    k_mu = cross_covariance(X, mu, theta)
    A2 = 2.0 * Sigma * theta.inv_sq_lengths[None, :] + np.eye(theta.dim)
    det2 = float(np.linalg.det(A2))
    half_L2 = np.diag(0.5 * theta.length_scales ** 2)
    S = np.linalg.inv(Sigma + half_L2)
    T = S @ (Sigma * theta.inv_sq_lengths[None, :])
    D = X - mu  # (N, n)
    # Zt[i, j] = z_ij - mu = (d_i + d_j)/2; bitwise symmetric in (i, j)
    Zt = 0.5 * (D[:, None, :] + D[None, :, :])
    quad = np.einsum("ija,ab,ijb->ij", Zt, T, Zt)
    V = np.outer(k_mu, k_mu) * (det2 ** -0.5) * np.exp(quad)
    return V, S, Zt


def noisy_variance(model: GpModel, q_state: GaussianState) -> float:
    """Moment-matched predictive variance Var[mu(x)] + E[sigma^2(x)]."""
    _check_q_state(model, q_state)
    q, _, _ = _expected_cross_cov(model, q_state)
    V, _, _ = _v_matrix(model, q_state)
    beta = model.beta
    qb = float(q @ beta)
    var = (
        model.theta.signal_variance
        - float(np.sum(model.gram_inverse * V))
        + float(beta @ V @ beta)
        - qb * qb
    )
    if var < -1e-8:
        raise CorruptModelError(f"noisy variance {var:.3e} below -1e-8")
    return max(var, 0.0)


def noisy_evaluate(model: GpModel, weights: GcbfWeights, q_state: GaussianState) -> SafetyEvaluation:
    """h with gradient and Hessian w.r.t. the query mean, under moment matching."""
    _check_q_state(model, q_state)
    theta = model.theta
    beta = model.beta
    Kinv = model.gram_inverse

    q, Rinv, D = _expected_cross_cov(model, q_state)
    V, S, Zt = _v_matrix(model, q_state)

    # mean block
    DR = D @ Rinv  # rows R^-1 (x_i - mu)
    Jq = q[:, None] * DR  # (N, n): dq_i/dmu
    mean_val = float(q @ beta)
    mean_grad = Jq.T @ beta
    wq = beta * q
    mean_hess = DR.T @ (wq[:, None] * DR) - float(np.sum(wq)) * Rinv

    # variance block
    W = np.outer(beta, beta) - Kinv
    M = W * V
    row = M.sum(axis=1)
    msum = float(row.sum())
    # sum_ij M_ij (z_ij - mu) = X~^T row with X~ = D (pair midpoints expand)
    first = S @ (D.T @ row)
    var_grad = first - 2.0 * mean_val * mean_grad
    qb = mean_val
    var_val = (
        theta.signal_variance
        - float(np.sum(Kinv * V))
        + float(beta @ V @ beta)
        - qb * qb
    )
    if var_val < -1e-8:
        raise CorruptModelError(f"noisy variance {var_val:.3e} below -1e-8")

    # sum_ij M_ij z~ z~^T = (sum_i row_i d_i d_i^T + D^T M D) / 2
    inner = 0.5 * (D.T @ (row[:, None] * D) + D.T @ (M @ D))
    var_hess = S @ inner @ S - msum * S
    var_hess -= 2.0 * (np.outer(mean_grad, mean_grad) + mean_val * mean_hess)

    wm, wv = weights.mean_weight, weights.variance_weight
    return SafetyEvaluation(
        value=wm * mean_val - wv * var_val,
        gradient=wm * mean_grad - wv * var_grad,
        hessian=_symmetrize(wm * mean_hess - wv * var_hess),
    )


# -- grid export -------------------------------------------------------------


def grid_evaluate(model: GpModel, weights: GcbfWeights, box, resolution: int):
    """Evaluate h, mu, sigma^2 over an axis-aligned 2D box.

    box is ((x_lo, x_hi), (y_lo, y_hi)); returns (xs, ys, H, MU, VAR) with
    H[i, j] the value at (xs[j], ys[i]) as produced by meshgrid indexing.
    """
    model._require_data()
    if model.theta.dim != 2:
        raise ValueError("grid evaluation expects a 2D model")
    (x_lo, x_hi), (y_lo, y_hi) = box
    if not (x_hi > x_lo and y_hi > y_lo):
        raise ValueError("degenerate box")
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    xs = np.linspace(x_lo, x_hi, resolution)
    ys = np.linspace(y_lo, y_hi, resolution)
    XX, YY = np.meshgrid(xs, ys)
    P = np.column_stack([XX.ravel(), YY.ravel()])

    theta = model.theta
    Z = model.dataset.inputs * np.sqrt(theta.inv_sq_lengths)
    Q = P * np.sqrt(theta.inv_sq_lengths)
    sq = (
        np.sum(Q * Q, axis=1)[:, None]
        + np.sum(Z * Z, axis=1)[None, :]
        - 2.0 * (Q @ Z.T)
    )
    K = theta.signal_variance * np.exp(-0.5 * np.maximum(sq, 0.0))
    mu = K @ model.beta
    var = theta.signal_variance - np.sum((K @ model.gram_inverse) * K, axis=1)
    np.maximum(var, 0.0, out=var)
    h = weights.mean_weight * mu - weights.variance_weight * var
    shape = XX.shape
    return xs, ys, h.reshape(shape), mu.reshape(shape), var.reshape(shape)


def grid_to_csv(path, xs, ys, H, MU, VAR) -> None:
    """Write (x, y, h_gp, mu, sigma2) rows for contour plotting, atomically."""
    import csv
    from pathlib import Path

    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "y", "h_gp", "mu", "sigma2"])
        for i, y in enumerate(ys):
            for j, x in enumerate(xs):
                writer.writerow(
                    [repr(float(x)), repr(float(y)), repr(float(H[i, j])),
                     repr(float(MU[i, j])), repr(float(VAR[i, j]))]
                )
    tmp.replace(path)
