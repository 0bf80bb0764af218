"""Ground-truth trajectories from known potentials.

A unit-mass particle obeys ``x'' = -grad(phi)(x) - gamma * x' + noise``.  The
deterministic part is integrated with classical fixed-step RK4; noise is added
to the velocity after each step as ``noise_std * sqrt(dt) * N(0, I)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UnstableStep
from .market_data import Trajectory


@dataclass(frozen=True)
class QuadraticWell:
    """``phi(x) = 0.5 (x - c)^T A (x - c)`` with ``A`` symmetric positive definite."""

    center: np.ndarray
    curvature: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        a = np.atleast_2d(np.asarray(self.curvature, dtype=float))
        if a.shape != (c.size, c.size):
            raise ValueError(f"curvature must be {c.size}x{c.size}, got {a.shape}")
        if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max())):
            raise ValueError("curvature matrix must be symmetric")
        if np.linalg.eigvalsh(a).min() <= 0:
            raise ValueError("curvature matrix must be positive definite")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "curvature", a)

    @property
    def dim(self) -> int:
        return self.center.size

    def max_frequency(self) -> float:
        return float(np.sqrt(np.linalg.eigvalsh(self.curvature).max()))

    def value(self, x):
        d = np.asarray(x, dtype=float) - self.center
        return 0.5 * np.einsum("...i,ij,...j->...", d, self.curvature, d)

    def gradient(self, x):
        d = np.asarray(x, dtype=float) - self.center
        return d @ self.curvature.T


@dataclass(frozen=True)
class DoubleWell:
    """1-D ``phi(x) = depth * (((x - center) / half_width)**2 - 1)**2``.

    Minima sit at ``center +- half_width``; the barrier height is ``depth``.
    """

    depth: float = 1.0
    half_width: float = 1.0
    center: float = 0.0

    def __post_init__(self):
        if not (self.depth > 0 and self.half_width > 0):
            raise ValueError("depth and half_width must be positive")

    @property
    def dim(self) -> int:
        return 1

    def max_frequency(self) -> float:
        # curvature at the minima is 8 * depth / half_width**2
        return float(np.sqrt(8.0 * self.depth) / self.half_width)

    def value(self, x):
        u = (np.asarray(x, dtype=float)[..., 0] - self.center) / self.half_width
        return self.depth * (u**2 - 1.0) ** 2

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        u = (x - self.center) / self.half_width
        return 4.0 * self.depth * u * (u**2 - 1.0) / self.half_width


@dataclass(frozen=True)
class SynthSpec:
    potential: QuadraticWell | DoubleWell
    x0: np.ndarray
    v0: np.ndarray | None = None
    gamma: float = 0.0
    noise_std: float = 0.0
    dt: float = 0.01
    steps: int = 500
    assets: tuple[str, ...] | None = None
    t0: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        m = self.potential.dim
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        v0 = np.zeros(m) if self.v0 is None else np.atleast_1d(np.asarray(self.v0, dtype=float))
        if x0.shape != (m,) or v0.shape != (m,):
            raise ValueError(f"x0 and v0 must have {m} entries")
        if self.gamma < 0 or self.noise_std < 0:
            raise ValueError("gamma and noise_std must be non-negative")
        if self.steps < 3:
            raise ValueError("steps must be at least 3")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        assets = self.assets or tuple(f"x{i + 1}" for i in range(m))
        if len(assets) != m:
            raise ValueError(f"{len(assets)} asset labels for dimension {m}")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "v0", v0)
        object.__setattr__(self, "assets", tuple(assets))

    def check_step(self) -> None:
        if self.dt * self.potential.max_frequency() >= 0.1:
            raise UnstableStep(
                f"dt * sqrt(max curvature) = {self.dt * self.potential.max_frequency():.4g} >= 0.1"
            )


def analytic_gradient(spec: SynthSpec, x) -> np.ndarray:
    """Exact gradient of ``spec.potential`` at ``x``."""
    return spec.potential.gradient(x)


def potential_energy(spec: SynthSpec, x) -> np.ndarray:
    return spec.potential.value(x)


def _rk4_step(spec: SynthSpec, x, v):
    grad = spec.potential.gradient
    g = spec.gamma
    h = spec.dt

    def acc(xx, vv):
        return -grad(xx) - g * vv

    k1x, k1v = v, acc(x, v)
    k2x, k2v = v + 0.5 * h * k1v, acc(x + 0.5 * h * k1x, v + 0.5 * h * k1v)
    k3x, k3v = v + 0.5 * h * k2v, acc(x + 0.5 * h * k2x, v + 0.5 * h * k2v)
    k4x, k4v = v + h * k3v, acc(x + h * k3x, v + h * k3v)
    x_new = x + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
    v_new = v + (h / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
    return x_new, v_new


def integrate(spec: SynthSpec, seed: int | None = 0):
    """Positions and velocities, each ``steps x M``; row 0 is the initial state."""
    spec.check_step()
    rng = np.random.default_rng(seed)
    m = spec.potential.dim
    xs = np.empty((spec.steps, m))
    vs = np.empty((spec.steps, m))
    x, v = spec.x0.copy(), spec.v0.copy()
    xs[0], vs[0] = x, v
    kick = spec.noise_std * np.sqrt(spec.dt)
    for n in range(1, spec.steps):
        x, v = _rk4_step(spec, x, v)
        if kick > 0:
            v = v + kick * rng.standard_normal(m)
        xs[n], vs[n] = x, v
    return xs, vs


def total_energy(spec: SynthSpec, xs, vs) -> np.ndarray:
    return 0.5 * np.sum(np.asarray(vs) ** 2, axis=-1) + spec.potential.value(xs)


def simulate(spec: SynthSpec, seed: int | None = 0) -> Trajectory:
    xs, _ = integrate(spec, seed)
    times = spec.t0 + np.arange(spec.steps) * spec.dt
    return Trajectory(xs, spec.dt, spec.assets, times)


def drifting_well(
    start_center,
    velocity,
    curvature,
    *,
    x0=None,
    gamma: float = 2.0,
    noise_std: float = 0.0,
    dt: float = 0.01,
    steps: int = 1000,
    seed: int | None = 0,
    assets=None,
) -> tuple[Trajectory, np.ndarray]:
    """Quadratic well whose center moves at constant ``velocity``.

    Returns the trajectory and the true center at every step.
    """
    c0 = np.atleast_1d(np.asarray(start_center, dtype=float))
    vel = np.atleast_1d(np.asarray(velocity, dtype=float))
    well = QuadraticWell(c0, curvature)
    spec = SynthSpec(well, c0 if x0 is None else x0, None, gamma, noise_std, dt, steps, assets)
    spec.check_step()
    rng = np.random.default_rng(seed)
    m = well.dim
    a = well.curvature
    xs = np.empty((steps, m))
    centers = c0 + np.outer(np.arange(steps) * dt, vel)
    x, v = spec.x0.copy(), np.zeros(m)
    xs[0] = x
    kick = noise_std * np.sqrt(dt)

    def acc(t, xx, vv):
        return -(xx - (c0 + vel * t)) @ a.T - gamma * vv

    for n in range(1, steps):
        t = (n - 1) * dt
        k1x, k1v = v, acc(t, x, v)
        k2x, k2v = v + 0.5 * dt * k1v, acc(t + 0.5 * dt, x + 0.5 * dt * k1x, v + 0.5 * dt * k1v)
        k3x, k3v = v + 0.5 * dt * k2v, acc(t + 0.5 * dt, x + 0.5 * dt * k2x, v + 0.5 * dt * k2v)
        k4x, k4v = v + dt * k3v, acc(t + dt, x + dt * k3x, v + dt * k3v)
        x = x + (dt / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
        v = v + (dt / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
        if kick > 0:
            v = v + kick * rng.standard_normal(m)
        xs[n] = x
    times = np.arange(steps) * dt
    return Trajectory(xs, dt, spec.assets, times), centers
