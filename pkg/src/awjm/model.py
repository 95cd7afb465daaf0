"""Forward model for the abrasive waterjet milling surface evolution.

The surface depth Z (positive means material removed) evolves as

    dZ/dt = E(x) exp(a Z) / (1 + |grad Z|^2)^(k/2)

with Z = 0 on the boundary. Space is discretized with central differences and
time with explicit Euler; the whole time history is kept so that the adjoint
sweep can replay it backwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from awjm import _kernels


class BlowUpError(FloatingPointError):
    """Raised when the explicit recursion produces a non-finite state."""

    def __init__(self, step: int):
        super().__init__(f"non-finite surface state at time step {step}")
        self.step = step


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    x_max: float
    n: int

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"grid needs at least 3 nodes, got {self.n}")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")

    @classmethod
    def symmetric(cls, half_width: float, n: int) -> "Grid1D":
        return cls(-half_width, half_width, n)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights."""
        w = np.full(self.n, self.dx)
        w[0] = w[-1] = 0.5 * self.dx
        return w

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "n": self.n}


@dataclass(frozen=True)
class TimeScheme:
    t_end: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1 or not self.t_end > 0:
            raise ValueError("time scheme needs t_end > 0 and n_steps >= 1")

    @classmethod
    def from_dt(cls, t_end: float, dt: float) -> "TimeScheme":
        """Scheme whose step is the largest dt' <= dt dividing t_end evenly."""
        if not dt > 0:
            raise ValueError("dt must be positive")
        return cls(t_end, int(math.ceil(t_end / dt - 1e-9)))

    @classmethod
    def parabolic(cls, grid: Grid1D, t_end: float = 1.0) -> "TimeScheme":
        """The dt = dx^2/4 preset."""
        return cls.from_dt(t_end, grid.dx**2 / 4.0)

    @property
    def dt(self) -> float:
        return self.t_end / self.n_steps

    def to_dict(self) -> dict:
        return {"t_end": self.t_end, "n_steps": self.n_steps, "dt": self.dt}


@dataclass
class ModelParams:
    """Control vector u = {a, k, E}."""

    a: float
    k: float
    e: np.ndarray

    def __post_init__(self):
        self.a = float(self.a)
        self.k = float(self.k)
        self.e = np.asarray(self.e, dtype=float)
        if self.e.ndim != 1:
            raise ValueError("etch rate must be a 1D array")

    def validate(self, grid: Grid1D | None = None, strict: bool = True):
        if grid is not None and self.e.shape[0] != grid.n:
            raise ValueError(
                f"etch rate has {self.e.shape[0]} nodes, grid has {grid.n}"
            )
        if not (np.isfinite(self.a) and np.isfinite(self.k) and np.all(np.isfinite(self.e))):
            raise ValueError("non-finite model parameter")
        if strict and (self.a < 0 or self.k < 0 or np.any(self.e < 0)):
            raise ValueError("a, k and E must be nonnegative")

    def to_vector(self) -> np.ndarray:
        return np.concatenate(([self.a, self.k], self.e))

    @classmethod
    def from_vector(cls, v) -> "ModelParams":
        v = np.asarray(v, dtype=float)
        return cls(v[0], v[1], v[2:].copy())

    def copy(self, **changes) -> "ModelParams":
        out = replace(self, **changes)
        if "e" not in changes:
            out.e = self.e.copy()
        return out


@dataclass
class Trajectory:
    states: np.ndarray
    scheme: TimeScheme
    grid: Grid1D

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


@dataclass
class Trajectory2D:
    final: np.ndarray
    scheme: TimeScheme
    snapshots: list = field(default_factory=list)


def _check_profile(z, grid: Grid1D, name="z") -> np.ndarray:
    z = np.ascontiguousarray(z, dtype=float)
    if z.shape != (grid.n,):
        raise ValueError(f"{name} has shape {z.shape}, expected ({grid.n},)")
    if not np.all(np.isfinite(z)):
        raise ValueError(f"{name} contains non-finite values")
    return z


def rhs(z, params: ModelParams, grid: Grid1D) -> np.ndarray:
    """Right-hand side F(z) of the semi-discrete system.

    Interior nodes use the central slope; boundary entries are returned as 0.
    """
    z = _check_profile(z, grid)
    params.validate(grid, strict=False)
    out = np.empty(grid.n)
    return _kernels.rhs_1d(z, params.e, params.a, params.k, grid.dx, out)


def forward(params: ModelParams, grid: Grid1D, scheme: TimeScheme, z0=None) -> Trajectory:
    """Integrate with explicit Euler and keep every time level.

    Raises
    ------
    BlowUpError
        If any state becomes non-finite; ``err.step`` is the offending level.
    """
    z0 = np.zeros(grid.n) if z0 is None else _check_profile(z0, grid, "z0")
    if z0[0] != 0.0 or z0[-1] != 0.0:
        raise ValueError("initial profile must vanish on the boundary")
    params.validate(grid, strict=False)
    states = np.empty((scheme.n_steps + 1, grid.n))
    bad = _kernels.forward_1d(
        z0, params.e, params.a, params.k, grid.dx, scheme.dt, scheme.n_steps, states
    )
    if bad >= 0:
        raise BlowUpError(bad)
    return Trajectory(states, scheme, grid)


def final_profile(params: ModelParams, grid: Grid1D, scheme: TimeScheme, z0=None) -> np.ndarray:
    return forward(params, grid, scheme, z0).final.copy()


@dataclass(frozen=True)
class Grid2D:
    x: Grid1D
    y: Grid1D


def _rhs_2d(z, e, a, k, dx, dy):
    f = np.zeros_like(z)
    zx = (z[2:, 1:-1] - z[:-2, 1:-1]) / (2 * dx)
    zy = (z[1:-1, 2:] - z[1:-1, :-2]) / (2 * dy)
    inner = z[1:-1, 1:-1]
    f[1:-1, 1:-1] = e[1:-1, 1:-1] * np.exp(a * inner - 0.5 * k * np.log1p(zx**2 + zy**2))
    return f


def forward2d(a: float, k: float, e, grid: Grid2D, scheme: TimeScheme, z0=None,
              snapshot_every: int = 0) -> Trajectory2D:
    """Forward-only 2D solve on a tensor-product grid (axis 0 is x)."""
    e = np.asarray(e, dtype=float)
    shape = (grid.x.n, grid.y.n)
    if e.shape != shape:
        raise ValueError(f"etch rate has shape {e.shape}, expected {shape}")
    z = np.zeros(shape) if z0 is None else np.array(z0, dtype=float)
    if z.shape != shape:
        raise ValueError("z0 shape mismatch")
    dt = scheme.dt
    snaps = []
    for m in range(scheme.n_steps):
        z = z + dt * _rhs_2d(z, e, a, k, grid.x.dx, grid.y.dx)
        if not np.all(np.isfinite(z)):
            raise BlowUpError(m + 1)
        if snapshot_every and (m + 1) % snapshot_every == 0:
            snaps.append((m + 1, z.copy()))
    return Trajectory2D(z, scheme, snaps)
