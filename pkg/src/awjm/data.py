"""Synthetic trench measurements: etch-rate presets, noise, measurement sets."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from awjm import _kernels
from awjm.model import BlowUpError, Grid1D, ModelParams, TimeScheme, final_profile


class NoiseMode(str, enum.Enum):
    POST_HOC = "posthoc"
    DYNAMIC = "dynamic"


class Combine(str, enum.Enum):
    SINGLE = "single"
    INDEPENDENT = "independent"
    SUPERPOSED = "superposed"


@dataclass(frozen=True)
class NoiseSpec:
    level_percent: float = 0.0
    mode: NoiseMode = NoiseMode.POST_HOC
    seed: int = 0

    def __post_init__(self):
        if not self.level_percent >= 0:
            raise ValueError(f"noise level must be >= 0, got {self.level_percent}")
        object.__setattr__(self, "mode", NoiseMode(self.mode))

    def to_dict(self) -> dict:
        return {"level_percent": self.level_percent, "mode": self.mode.value, "seed": self.seed}


@dataclass
class MeasurementSet:
    profiles: list
    combine: Combine = Combine.SINGLE
    seeds: list = field(default_factory=list)
    noise: NoiseSpec | None = None

    def __post_init__(self):
        self.combine = Combine(self.combine)
        self.profiles = [np.asarray(p, dtype=float) for p in self.profiles]
        if not self.profiles:
            raise ValueError("measurement set is empty")
        n = self.profiles[0].shape
        if any(p.shape != n for p in self.profiles):
            raise ValueError("all profiles must share one grid")
        count = len(self.profiles)
        if self.combine is Combine.SINGLE and count != 1:
            raise ValueError(f"single combine mode needs exactly 1 profile, got {count}")
        if self.combine is not Combine.SINGLE and count < 2:
            raise ValueError(f"{self.combine.value} combine mode needs >= 2 profiles")

    @classmethod
    def single(cls, profile) -> "MeasurementSet":
        return cls([profile], Combine.SINGLE)

    @property
    def n_nodes(self) -> int:
        return self.profiles[0].shape[0]

    def mean_profile(self) -> np.ndarray:
        return np.mean(self.profiles, axis=0)


ETCH_PRESETS = ("gaussian", "gapped", "zero")


def etch_preset(name: str, grid: Grid1D, amplitude: float = 0.1, width: float | None = None) -> np.ndarray:
    """Named etch-rate profiles.

    ``gaussian`` is ``amplitude * exp(-x^2 / width^2)``; ``gapped`` multiplies
    it by a mask with two narrow symmetric notches on the flanks of the bump.
    ``width`` defaults to a quarter of the domain half-width.
    """
    x = grid.x
    center = 0.5 * (grid.x_min + grid.x_max)
    half = 0.5 * (grid.x_max - grid.x_min)
    sigma = 0.25 * half if width is None else width
    bump = amplitude * np.exp(-(((x - center) / sigma) ** 2))
    if name == "zero":
        return np.zeros(grid.n)
    if name == "gaussian":
        return bump
    if name == "gapped":
        x_gap, w_gap = 1.2 * sigma, 0.25 * sigma
        mask = 1.0 - 0.95 * (
            np.exp(-(((x - center - x_gap) / w_gap) ** 2))
            + np.exp(-(((x - center + x_gap) / w_gap) ** 2))
        )
        return bump * mask
    raise ValueError(f"unknown etch preset {name!r}; choose from {ETCH_PRESETS}")


def generate_clean(params: ModelParams, grid: Grid1D, scheme: TimeScheme) -> np.ndarray:
    """Noise-free trench profile Z(., T) starting from a flat surface."""
    return final_profile(params, grid, scheme)


def _rng(seed: int, index: int = 0) -> np.random.Generator:
    # One independent stream per (seed, realization) pair.
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(index)])))


def add_noise(z_clean, spec: NoiseSpec, params: ModelParams | None = None,
              grid: Grid1D | None = None, scheme: TimeScheme | None = None,
              index: int = 0) -> np.ndarray:
    """Return a noisy copy of ``z_clean``.

    Post-hoc noise has standard deviation ``level/100 * max|z_clean|`` on
    interior nodes. Dynamic noise reruns the time stepping with
    ``lambda * eps`` added to the right-hand side, ``lambda = level/100 * max(E)``;
    it needs ``params``, ``grid`` and ``scheme``.
    """
    z_clean = np.asarray(z_clean, dtype=float)
    if spec.level_percent == 0:
        return z_clean.copy()
    rng = _rng(spec.seed, index)
    scale = spec.level_percent / 100.0
    if spec.mode is NoiseMode.POST_HOC:
        eps = rng.standard_normal(z_clean.shape[0])
        out = z_clean + scale * np.max(np.abs(z_clean)) * eps
        out[0] = z_clean[0]
        out[-1] = z_clean[-1]
        return out
    if params is None or grid is None or scheme is None:
        raise ValueError("dynamic noise needs params, grid and scheme")
    eps = rng.standard_normal((scheme.n_steps, grid.n))
    lam = scale * float(np.max(params.e))
    out = np.empty(grid.n)
    bad = _kernels.forward_noisy_1d(
        np.zeros(grid.n), params.e, params.a, params.k, grid.dx, scheme.dt,
        scheme.n_steps, lam, eps, out,
    )
    if bad >= 0:
        raise BlowUpError(bad)
    return out


def make_measurement_set(params: ModelParams, grid: Grid1D, scheme: TimeScheme,
                         spec: NoiseSpec, count: int = 1,
                         combine: Combine | str = Combine.SINGLE,
                         z_clean=None) -> MeasurementSet:
    """``count`` noisy realizations of the same trench.

    Realization ``i`` draws from the stream keyed by ``(spec.seed, i)``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    combine = Combine(combine)
    # Fail before running the solver.
    if (combine is Combine.SINGLE) != (count == 1):
        raise ValueError(f"combine mode {combine.value!r} incompatible with count={count}")
    if z_clean is None and (spec.mode is NoiseMode.POST_HOC or spec.level_percent == 0):
        z_clean = generate_clean(params, grid, scheme)
    profiles = [add_noise(z_clean, spec, params, grid, scheme, index=i) for i in range(count)]
    return MeasurementSet(profiles, combine, seeds=[(spec.seed, i) for i in range(count)], noise=spec)
