"""Deterministic double-integrator plant, setpoint inversion and samplers.

The plant is the positional abstraction of a quadrotor: x = [r, rdot] in
R^6 with u = rddot_des. Integration is the exact zero-order hold

    r+ = r + v dt + u dt^2 / 2,    v+ = v + u dt.

The rectified acceleration maps to attitude setpoints via the small-angle
inversion (yaw fixed at zero unless overridden):

    roll   = (u1 sin psi - u2 cos psi) / g
    pitch  = (u1 cos psi + u2 sin psi) / g
    thrust = m (u3 + g)

Safety samples come either from an obstacle world (noisy product of signed
squared-distance margins) or from uniform random maps; measurement noise
injects a Gaussian position error and reports the known covariance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .barrier import GaussianState
from .gp import Dataset

__all__ = [
    "PlantState",
    "Setpoints",
    "Obstacle",
    "ObstacleWorld",
    "NoiseModel",
    "SmallAngleWarning",
    "step",
    "to_setpoints",
    "sample_safety_obstacles",
    "sample_safety_uniform",
    "measure_position",
]

SMALL_ANGLE_LIMIT = 0.5  # rad; beyond this the inversion of the dynamics is suspect


class SmallAngleWarning(UserWarning):
    """Setpoint angles left the small-angle validity region."""


@dataclass
class PlantState:
    position: np.ndarray
    velocity: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        if self.position.shape != (3,) or self.velocity.shape != (3,):
            raise ValueError("position and velocity must be 3-vectors")
        if not (np.all(np.isfinite(self.position)) and np.all(np.isfinite(self.velocity))):
            raise ValueError("plant state must be finite")
        if self.time < 0.0:
            raise ValueError("time must be non-negative")

    @property
    def state(self) -> np.ndarray:
        """Stacked [r, v] used by the barrier and filter."""
        return np.concatenate([self.position, self.velocity])


@dataclass
class Setpoints:
    roll: float
    pitch: float
    thrust: float
    yaw: float = 0.0


@dataclass
class Obstacle:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if self.center.shape != (2,):
            raise ValueError("obstacle center must be a 2-vector")
        self.radius = float(self.radius)
        if self.radius <= 0.0:
            raise ValueError("obstacle radius must be positive")

    def margin(self, r_xy: np.ndarray) -> float:
        """Signed squared-distance margin d = ||r - p||^2 - R^2."""
        d = np.asarray(r_xy, dtype=float) - self.center
        return float(d @ d - self.radius ** 2)


@dataclass
class ObstacleWorld:
    obstacles: list
    sample_noise_std: float = 0.0

    def __post_init__(self):
        self.obstacles = [
            o if isinstance(o, Obstacle) else Obstacle(**o) for o in self.obstacles
        ]
        self.sample_noise_std = float(self.sample_noise_std)
        if self.sample_noise_std < 0.0:
            raise ValueError("sample_noise_std must be non-negative")


@dataclass
class NoiseModel:
    position_cov: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    seed: int = 0

    def __post_init__(self):
        self.position_cov = np.asarray(self.position_cov, dtype=float)
        if self.position_cov.shape == (3,):
            self.position_cov = np.diag(self.position_cov)
        if self.position_cov.shape != (3, 3):
            raise ValueError("position_cov must be 3x3 (or a 3-vector of variances)")
        sym = 0.5 * (self.position_cov + self.position_cov.T)
        if np.min(np.linalg.eigvalsh(sym)) < -1e-12:
            raise ValueError("position_cov must be positive semidefinite")
        self.position_cov = sym

    def make_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def step(state: PlantState, u, dt: float) -> PlantState:
    """Exact ZOH integration of the double integrator over one tick."""
    u = np.asarray(u, dtype=float)
    if u.shape != (3,):
        raise ValueError("input must be a 3-vector")
    if not np.all(np.isfinite(u)):
        raise ValueError("input must be finite")
    if not (0.0 < dt <= 0.1):
        raise ValueError("dt must lie in (0, 0.1]")
    r = state.position + state.velocity * dt + 0.5 * u * dt * dt
    v = state.velocity + u * dt
    return PlantState(r, v, state.time + dt)


def to_setpoints(u_rect, psi: float = 0.0, mass: float = 0.033, gravity: float = 9.81) -> Setpoints:
    """Invert the positional dynamics into roll/pitch/thrust setpoints."""
    u = np.asarray(u_rect, dtype=float)
    if u.shape != (3,) or not np.all(np.isfinite(u)):
        raise ValueError("u_rect must be a finite 3-vector")
    if not (mass > 0.0 and gravity > 0.0):
        raise ValueError("mass and gravity must be positive")
    roll = (u[0] * np.sin(psi) - u[1] * np.cos(psi)) / gravity
    pitch = (u[0] * np.cos(psi) + u[1] * np.sin(psi)) / gravity
    thrust = mass * (u[2] + gravity)
    if abs(roll) > SMALL_ANGLE_LIMIT or abs(pitch) > SMALL_ANGLE_LIMIT:
        warnings.warn(
            f"setpoint angles (roll={roll:.3f}, pitch={pitch:.3f}) exceed "
            f"{SMALL_ANGLE_LIMIT} rad",
            SmallAngleWarning,
            stacklevel=2,
        )
    return Setpoints(float(roll), float(pitch), float(thrust), float(psi))


def sample_safety_obstacles(world: ObstacleWorld, r_xy, rng: np.random.Generator) -> float:
    """Noisy product of signed squared-distance margins at a lateral position."""
    r_xy = np.asarray(r_xy, dtype=float)
    y = 1.0
    for obs in world.obstacles:
        y *= obs.margin(r_xy)
    if world.sample_noise_std > 0.0:
        y += world.sample_noise_std * rng.standard_normal()
    return float(y)


def sample_safety_uniform(domain, n: int, lo: float, hi: float, rng: np.random.Generator) -> Dataset:
    """Uniform random safety map: n points over a 2D box, targets U(lo, hi)."""
    (x_lo, x_hi), (y_lo, y_hi) = domain
    if not (x_hi > x_lo and y_hi > y_lo):
        raise ValueError("degenerate domain box")
    if not lo < hi:
        raise ValueError("lo must be below hi")
    if n <= 0:
        raise ValueError("n must be positive")
    inputs = rng.uniform([x_lo, y_lo], [x_hi, y_hi], size=(n, 2))
    targets = rng.uniform(lo, hi, size=n)
    return Dataset(inputs, targets, capacity=max(n, 300), tau=0.0)


def measure_position(state: PlantState, noise: NoiseModel, rng: np.random.Generator) -> GaussianState:
    """Noisy position read with exact velocity; covariance fills the position block."""
    cov6 = np.zeros((6, 6))
    cov6[:3, :3] = noise.position_cov
    if np.any(noise.position_cov):
        w, vecs = np.linalg.eigh(noise.position_cov)
        root = vecs * np.sqrt(np.clip(w, 0.0, None))
        r_meas = state.position + root @ rng.standard_normal(3)
    else:
        r_meas = state.position.copy()
    mean = np.concatenate([r_meas, state.velocity])
    return GaussianState(mean, cov6)
