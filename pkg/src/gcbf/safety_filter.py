"""Lie-derivative assembly and the minimum-norm QP safety filter.

The barrier inequality for a control-affine system xdot = f(x) + g(x) u is

    rho = 1:   Lf h + Lg h u + alpha_gain * h              >= 0
    rho = 2:   Lf2 h + LgLf h u + k1 * Lf h + k0 * h       >= 0

with first and second Lie derivatives assembled from the barrier gradient
and Hessian:

    Lf h    = grad^T f
    Lf2 h   = f^T H f + grad^T (df/dx) f
    LgLf h  = f^T H g + grad^T (df/dx) g

Either inequality is one linear row a^T u >= b, and the rectifier

    u_rect = argmin 1/2 ||u - u_nom||^2  s.t.  a^T u >= b

has the closed-form KKT solution u_nom + max(0, b - a^T u_nom) a / ||a||^2.
Optional box bounds on u are handled by a small active-set iteration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .barrier import SafetyEvaluation

__all__ = [
    "AffineDynamics",
    "EcbfGains",
    "RectificationResult",
    "InfeasibleConstraintError",
    "double_integrator",
    "ecbf_gains_from_poles",
    "lie_derivatives_deg1",
    "lie_derivatives_deg2",
    "barrier_constraint",
    "rectify",
]


class InfeasibleConstraintError(RuntimeError):
    """No input can satisfy the barrier row (a = 0 with b > 0)."""


@dataclass
class AffineDynamics:
    """Control-affine dynamics f, g with the drift Jacobian for rho = 2."""

    drift: Callable[[np.ndarray], np.ndarray]
    control_matrix: Callable[[np.ndarray], np.ndarray]
    drift_jacobian: Callable[[np.ndarray], np.ndarray]
    relative_degree: int
    state_dim: int
    input_dim: int

    def __post_init__(self):
        if self.relative_degree not in (1, 2):
            raise ValueError("relative_degree must be 1 or 2")


def double_integrator(dim: int = 3) -> AffineDynamics:
    """x = [r, v], rdot = v, vdot = u; drift Jacobian [[0, I], [0, 0]]."""
    n = 2 * dim
    zero = np.zeros((dim, dim))
    eye = np.eye(dim)
    jac = np.block([[zero, eye], [zero, zero]])
    gmat = np.vstack([zero, eye])
    return AffineDynamics(
        drift=lambda x: np.concatenate([x[dim:], np.zeros(dim)]),
        control_matrix=lambda x: gmat,
        drift_jacobian=lambda x: jac,
        relative_degree=2,
        state_dim=n,
        input_dim=dim,
    )


@dataclass
class EcbfGains:
    """Gain pair for the rho = 2 barrier row plus the rho = 1 class-kappa slope."""

    k0: float
    k1: float
    alpha_gain: float = 1.0

    def __post_init__(self):
        self.k0 = float(self.k0)
        self.k1 = float(self.k1)
        self.alpha_gain = float(self.alpha_gain)
        # s^2 + k1 s + k0 Hurwitz iff both coefficients positive
        if not (self.k0 > 0.0 and self.k1 > 0.0):
            raise ValueError("k0 and k1 must be positive (Hurwitz polynomial)")
        if not self.alpha_gain > 0.0:
            raise ValueError("alpha_gain must be positive")


def ecbf_gains_from_poles(p1: float, p2: float, alpha_gain: float = 1.0) -> EcbfGains:
    """Place the barrier error dynamics poles: (s - p1)(s - p2) = s^2 + k1 s + k0."""
    if not (p1 < 0.0 and p2 < 0.0):
        raise ValueError("poles must be strictly negative")
    return EcbfGains(k0=p1 * p2, k1=-(p1 + p2), alpha_gain=alpha_gain)


def _check_state(dyn: AffineDynamics, evalr: SafetyEvaluation, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (dyn.state_dim,):
        raise ValueError(f"state has shape {x.shape}, expected ({dyn.state_dim},)")
    if evalr.gradient.shape != (dyn.state_dim,):
        raise ValueError("evaluation gradient dimension does not match the dynamics")
    return x


def lie_derivatives_deg1(evalr: SafetyEvaluation, dyn: AffineDynamics, x):
    """(Lf h, Lg h) for a relative-degree-1 barrier."""
    x = _check_state(dyn, evalr, x)
    f = dyn.drift(x)
    g = dyn.control_matrix(x)
    lf = float(evalr.gradient @ f)
    lg = evalr.gradient @ g
    return lf, lg


def lie_derivatives_deg2(evalr: SafetyEvaluation, dyn: AffineDynamics, x):
    """(Lf h, Lf2 h, LgLf h) for a relative-degree-2 barrier."""
    x = _check_state(dyn, evalr, x)
    f = dyn.drift(x)
    g = dyn.control_matrix(x)
    jac = dyn.drift_jacobian(x)
    grad, hess = evalr.gradient, evalr.hessian
    lf = float(grad @ f)
    lf2 = float(f @ hess @ f + grad @ jac @ f)
    lglf = f @ hess @ g + grad @ (jac @ g)
    return lf, lf2, lglf


def barrier_constraint(evalr: SafetyEvaluation, dyn: AffineDynamics, x, gains: EcbfGains):
    """Assemble the single QP row (a, b) meaning a^T u >= b."""
    if dyn.relative_degree == 1:
        lf, lg = lie_derivatives_deg1(evalr, dyn, x)
        return np.asarray(lg, dtype=float), -(lf + gains.alpha_gain * evalr.value)
    lf, lf2, lglf = lie_derivatives_deg2(evalr, dyn, x)
    rhs = -(lf2 + gains.k0 * evalr.value + gains.k1 * lf)
    return np.asarray(lglf, dtype=float), rhs


@dataclass
class RectificationResult:
    """Rectified input plus diagnostics of the single barrier row."""

    u_rect: np.ndarray
    constraint_active: bool
    margin: float  # slack a^T u_nom - b at the nominal input
    lhs_row: np.ndarray
    rhs: float


def rectify(u_nom, a, b: float, lower=None, upper=None) -> RectificationResult:
    """Minimum-norm projection of u_nom onto {u : a^T u >= b} (and box bounds).

    Without bounds the exact KKT solution is closed form. Raises
    InfeasibleConstraintError when a = 0 with b > 0 (no input helps).
    """
    u_nom = np.asarray(u_nom, dtype=float)
    a = np.asarray(a, dtype=float)
    if a.shape != u_nom.shape:
        raise ValueError("constraint row and nominal input dimensions differ")
    b = float(b)
    margin = float(a @ u_nom - b)
    a_sq = float(a @ a)

    # rows below the denormal floor behave as zero (division would overflow)
    if a_sq <= 1e-24:
        if b > 0.0:
            raise InfeasibleConstraintError("zero constraint row with positive bound")
        return RectificationResult(u_nom.copy(), False, margin, a, b)

    if lower is None and upper is None:
        if margin >= 0.0:
            return RectificationResult(u_nom.copy(), False, margin, a, b)
        u = u_nom + ((b - float(a @ u_nom)) / a_sq) * a
        return RectificationResult(u, True, margin, a, b)

    lo = np.full_like(u_nom, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    hi = np.full_like(u_nom, np.inf) if upper is None else np.asarray(upper, dtype=float)
    u = _active_set_box(u_nom, a, b, lo, hi)
    active = margin < 0.0
    return RectificationResult(u, active, margin, a, b)


def _active_set_box(u_nom, a, b, lo, hi, tol: float = 1e-10):
    """Active-set solve of min 1/2||u - u_nom||^2 s.t. a^T u >= b, lo <= u <= hi.

    Stacks all rows as G u >= h and iterates: solve the equality-constrained
    KKT system on the working set, add the most violated row, drop rows with
    negative multipliers.
    """
    m = u_nom.size
    rows = [a]
    rhs = [b]
    for i in range(m):
        if np.isfinite(lo[i]):
            e = np.zeros(m)
            e[i] = 1.0
            rows.append(e)
            rhs.append(lo[i])
        if np.isfinite(hi[i]):
            e = np.zeros(m)
            e[i] = -1.0
            rows.append(e)
            rhs.append(-hi[i])
    G = np.vstack(rows)
    h = np.asarray(rhs)

    active: list[int] = []
    for _ in range(8 * len(h) + 8):
        if active:
            Ga = G[active]
            M = Ga @ Ga.T
            lam = np.linalg.lstsq(M, h[active] - Ga @ u_nom, rcond=None)[0]
            u = u_nom + Ga.T @ lam
            neg = np.where(lam < -tol)[0]
            if neg.size:
                active.pop(int(neg[np.argmin(lam[neg])]))
                continue
        else:
            u = u_nom.copy()
        viol = h - G @ u
        worst = int(np.argmax(viol))
        if viol[worst] <= tol:
            return u
        if worst in active:
            raise InfeasibleConstraintError("box-bounded barrier row is infeasible")
        active.append(worst)
    raise InfeasibleConstraintError("active-set iteration did not converge")
