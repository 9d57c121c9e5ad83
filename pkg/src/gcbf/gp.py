"""Online GP regression over gated safety samples.

Maintains the inverse Gram matrix K^-1 and the weight vector beta = K^-1 y
incrementally: appending a sample grows the inverse by one block-bordering
(Schur complement) step instead of refactorizing, so a single insert costs
O(N^2) against the O(N^3) of a rebuild.

New samples pass two gates before insertion: a minimum inter-sample
distance tau (tau = 0 disables gating) and the retention capacity. Both
keep the Gram matrix well conditioned and the synthesis cost bounded.

Concurrency contract (documented, not enforced): one writer, many readers.
Insertions and refits need exclusive access; mean/variance queries between
writes may run concurrently and should operate on `snapshot()` so they see
a consistent (inputs, gram_inverse, beta) triple.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .kernel import Hyperparameters, cross_covariance, gram_matrix, kernel_eval

__all__ = [
    "Dataset",
    "GpModel",
    "CorruptModelError",
    "log_marginal_likelihood",
    "lml_and_gradient",
    "fit_hyperparameters",
    "dataset_to_csv",
    "dataset_from_csv",
]

# Bordering pivot below this means the new point is numerically a duplicate.
MIN_PIVOT = 1e-12


class CorruptModelError(RuntimeError):
    """The maintained inverse no longer matches the data (numerical breakage)."""


@dataclass
class Dataset:
    """Gated collection of (state, safety sample) pairs."""

    inputs: np.ndarray  # (N, n)
    targets: np.ndarray  # (N,)
    capacity: int = 300
    tau: float = 0.0

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if self.inputs.ndim != 2:
            self.inputs = self.inputs.reshape(len(self.targets), -1)
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets must have equal length")
        if self.capacity <= 0:
            raise ValueError("capacity must be positive")
        if self.tau < 0.0:
            raise ValueError("tau must be non-negative")
        if len(self.inputs) > self.capacity:
            raise ValueError("dataset exceeds capacity")

    def __len__(self) -> int:
        return len(self.targets)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def min_distance_to(self, x: np.ndarray) -> float:
        """Euclidean distance from x to the nearest stored input (inf if empty)."""
        if len(self) == 0:
            return math.inf
        return float(np.min(np.linalg.norm(self.inputs - x, axis=1)))


class GpModel:
    """GP posterior over a Dataset with incrementally maintained inverse Gram."""

    def __init__(self, dataset: Dataset, theta: Hyperparameters):
        if len(dataset) and dataset.dim != theta.dim:
            raise ValueError("dataset dimension does not match hyperparameters")
        self.dataset = dataset
        self.theta = theta
        self._rebuild()

    @classmethod
    def empty(cls, theta: Hyperparameters, capacity: int = 300, tau: float = 0.0) -> "GpModel":
        ds = Dataset(
            inputs=np.empty((0, theta.dim)),
            targets=np.empty(0),
            capacity=capacity,
            tau=tau,
        )
        return cls(ds, theta)

    # -- maintenance ------------------------------------------------------

    def _rebuild(self) -> None:
        """Dense rebuild of gram_inverse and beta from the current dataset."""
        n = len(self.dataset)
        if n == 0:
            self.gram_inverse = np.empty((0, 0))
            self.beta = np.empty(0)
            return
        K = gram_matrix(self.dataset.inputs, self.theta)
        c, low = cho_factor(K, lower=True)
        self.gram_inverse = cho_solve((c, low), np.eye(n))
        self.beta = cho_solve((c, low), self.dataset.targets)

    def refit(self, theta: Hyperparameters) -> None:
        """Swap hyperparameters and rebuild the posterior (writer-side op)."""
        if theta.dim != self.theta.dim:
            raise ValueError("hyperparameter dimension cannot change")
        self.theta = theta
        self._rebuild()

    def try_add_sample(self, x, y: float) -> bool:
        """Insert (x, y) if it passes the tau gate and capacity; rank-1 update.

        Returns False (model untouched) when the point is closer than tau to
        a stored input, the dataset is full, or the bordering pivot signals a
        near-duplicate.
        """
        x = np.asarray(x, dtype=float)
        if x.shape != (self.theta.dim,):
            raise ValueError(f"sample has shape {x.shape}, expected ({self.theta.dim},)")
        ds = self.dataset
        if len(ds) >= ds.capacity:
            return False
        if ds.tau > 0.0 and ds.min_distance_to(x) < ds.tau:
            return False

        if len(ds) == 0:
            c = kernel_eval(x, x, self.theta, same_index=True) + _extra_jitter(self.theta)
            gram_inverse = np.array([[1.0 / c]])
            targets = np.array([float(y)])
            inputs = x[None, :].copy()
        else:
            k = cross_covariance(ds.inputs, x, self.theta)
            c = kernel_eval(x, x, self.theta, same_index=True) + _extra_jitter(self.theta)
            g = self.gram_inverse @ k
            pivot = c - float(k @ g)
            if pivot <= MIN_PIVOT:
                return False
            n = len(ds)
            gram_inverse = np.empty((n + 1, n + 1))
            gram_inverse[:n, :n] = self.gram_inverse + np.outer(g, g) / pivot
            gram_inverse[:n, n] = -g / pivot
            gram_inverse[n, :n] = -g / pivot
            gram_inverse[n, n] = 1.0 / pivot
            inputs = np.vstack([ds.inputs, x[None, :]])
            targets = np.append(ds.targets, float(y))

        self.dataset = Dataset(inputs, targets, capacity=ds.capacity, tau=ds.tau)
        self.gram_inverse = gram_inverse
        self.beta = gram_inverse @ targets
        return True

    def check_inverse(self, tol: float = 1e-8) -> float:
        """Max-abs deviation of gram_inverse @ K from identity; raises past tol."""
        n = len(self.dataset)
        if n == 0:
            return 0.0
        K = gram_matrix(self.dataset.inputs, self.theta)
        err = float(np.max(np.abs(self.gram_inverse @ K - np.eye(n))))
        if err > tol:
            raise CorruptModelError(f"inverse drift {err:.3e} exceeds {tol:.1e}")
        return err

    def snapshot(self) -> "GpModel":
        """Consistent read-only view for concurrent queries between writes."""
        snap = object.__new__(GpModel)
        snap.dataset = self.dataset
        snap.theta = self.theta
        snap.gram_inverse = self.gram_inverse
        snap.beta = self.beta
        return snap

    # -- queries ----------------------------------------------------------

    def posterior_mean(self, xq) -> float:
        """k(xq)^T beta."""
        self._require_data()
        k = cross_covariance(self.dataset.inputs, np.asarray(xq, dtype=float), self.theta)
        return float(k @ self.beta)

    def posterior_variance(self, xq) -> float:
        """Prior variance minus explained variance, clamped at round-off."""
        self._require_data()
        xq = np.asarray(xq, dtype=float)
        k = cross_covariance(self.dataset.inputs, xq, self.theta)
        var = self.theta.signal_variance - float(k @ (self.gram_inverse @ k))
        if var < -1e-10:
            raise CorruptModelError(f"posterior variance {var:.3e} below -1e-10")
        return max(var, 0.0)

    def _require_data(self) -> None:
        if len(self.dataset) == 0:
            raise ValueError("empty dataset: the GP posterior is undefined")


def _extra_jitter(theta: Hyperparameters) -> float:
    return theta.effective_noise - theta.noise_variance


# -- log marginal likelihood and hyperparameter fitting --------------------


def log_marginal_likelihood(model: GpModel) -> float:
    """-1/2 y^T K^-1 y - 1/2 log det K - N/2 log 2 pi."""
    model._require_data()
    lml, _ = _lml_cholesky(model.dataset.inputs, model.dataset.targets, model.theta)
    return lml


def _lml_cholesky(X, y, theta):
    K = gram_matrix(X, theta)
    c, low = cho_factor(K, lower=True)
    alpha = cho_solve((c, low), y)
    logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
    lml = -0.5 * float(y @ alpha) - 0.5 * logdet - 0.5 * len(y) * math.log(2.0 * math.pi)
    return lml, (c, low, alpha)


def lml_and_gradient(X, y, theta: Hyperparameters):
    """LML and its gradient w.r.t. (log l_1..l_n, log sf2, log sy2).

    d lml / d theta_j = 1/2 tr((alpha alpha^T - K^-1) dK/dtheta_j); the
    log-space gradient multiplies each entry by its parameter.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    lml, (c, low, alpha) = _lml_cholesky(X, y, theta)
    n = len(y)
    Kinv = cho_solve((c, low), np.eye(n))
    W = np.outer(alpha, alpha) - Kinv

    smooth = gram_matrix(X, theta).copy()
    smooth[np.diag_indices_from(smooth)] -= theta.effective_noise

    grad = np.empty(theta.dim + 2)
    for a in range(theta.dim):
        diff_sq = (X[:, a, None] - X[None, :, a]) ** 2
        # d K / d log l_a = smooth * diff_sq / l_a^2
        dK = smooth * diff_sq * theta.inv_sq_lengths[a]
        grad[a] = 0.5 * float(np.sum(W * dK))
    # d K / d log sf2 = smooth
    grad[theta.dim] = 0.5 * float(np.sum(W * smooth))
    # d K / d log sy2 = sy2 * I
    grad[theta.dim + 1] = 0.5 * theta.noise_variance * float(np.trace(W))
    return lml, grad


def _theta_from_log(log_params: np.ndarray, dim: int) -> Hyperparameters:
    return Hyperparameters(
        length_scales=np.exp(log_params[:dim]),
        signal_variance=float(np.exp(log_params[dim])),
        noise_variance=float(np.exp(log_params[dim + 1])),
    )


def _log_from_theta(theta: Hyperparameters) -> np.ndarray:
    sy2 = max(theta.noise_variance, 1e-10)
    return np.concatenate(
        [
            np.log(theta.length_scales),
            [math.log(theta.signal_variance), math.log(sy2)],
        ]
    )


def fit_hyperparameters(
    model: GpModel,
    iterations: int = 60,
    restarts: int = 5,
    seed: int = 0,
    step0: float = 0.25,
) -> Hyperparameters:
    """Maximize the LML by gradient ascent in log-parameter space.

    Backtracking line search: a step that fails to factorize or decreases
    the LML is rejected and the step size halved. `restarts` randomized
    initializations are tried in addition to the current hyperparameters;
    the best parameters found are returned and always score at least the
    initial LML.
    """
    if len(model.dataset) < 2:
        raise ValueError("fitting needs at least 2 samples")
    if iterations <= 0:
        raise ValueError("iterations must be positive")
    X, y = model.dataset.inputs, model.dataset.targets
    dim = model.theta.dim
    rng = np.random.default_rng(seed)

    base = _log_from_theta(model.theta)
    starts = [base]
    for _ in range(restarts):
        starts.append(base + rng.normal(0.0, 0.5, size=base.size))

    best_lp = base
    best_lml = -math.inf
    for lp0 in starts:
        lp, lml = _ascend(X, y, lp0, dim, iterations, step0)
        if lml > best_lml:
            best_lml, best_lp = lml, lp
    return _theta_from_log(best_lp, dim)


def _ascend(X, y, lp0, dim, iterations, step0):
    def objective(lp):
        return lml_and_gradient(X, y, _theta_from_log(lp, dim))

    try:
        lml, grad = objective(lp0)
    except (LinAlgError, np.linalg.LinAlgError):
        return lp0, -math.inf
    lp = lp0
    step = step0
    for _ in range(iterations):
        gnorm = float(np.linalg.norm(grad))
        if gnorm < 1e-10 or step < 1e-12:
            break
        cand = lp + step * grad / gnorm
        try:
            cand_lml, cand_grad = objective(cand)
        except (LinAlgError, np.linalg.LinAlgError):
            step *= 0.5
            continue
        if cand_lml > lml:
            lp, lml, grad = cand, cand_lml, cand_grad
            step *= 1.2
        else:
            step *= 0.5
    return lp, lml


# -- CSV interchange --------------------------------------------------------


def dataset_to_csv(dataset: Dataset, path) -> None:
    """One row per sample: n state columns then the target; header names axes."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"x{i}" for i in range(dataset.dim)] + ["y"])
        for xi, yi in zip(dataset.inputs, dataset.targets):
            writer.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])
    tmp.replace(path)


def dataset_from_csv(path, capacity: int = 300, tau: float = 0.0) -> Dataset:
    path = Path(path)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[-1] != "y":
            raise ValueError(f"{path}: expected header ending in 'y'")
        dim = len(header) - 1
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        return Dataset(np.empty((0, dim)), np.empty(0), capacity=capacity, tau=tau)
    arr = np.asarray(rows)
    return Dataset(arr[:, :dim], arr[:, dim], capacity=max(capacity, len(arr)), tau=tau)
