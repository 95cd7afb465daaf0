"""Cost functionals: data misfit plus Tikhonov regularization.

Variants
--------
``background``
    misfit + alpha * ||u - u_b||^2 over the active controls, where the E part
    is integrated with the trapezoidal rule and a, k enter with unit weight.
``grad_e``
    misfit + alpha * ||dE/dx||^2 with forward differences on each interval.
``multi_independent`` / ``multi_superposed``
    the gradient-regularized cost on several measurements; the first averages
    the per-measurement misfits with weights 1/N, the second fits the mean
    profile.

The misfit combination always follows ``MeasurementSet.combine``; the two
``multi_*`` variants additionally insist that it matches.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from awjm.data import Combine, MeasurementSet
from awjm.model import Grid1D, ModelParams, TimeScheme, forward

CONTROLS = ("a", "k", "e")


class Variant(str, enum.Enum):
    BACKGROUND = "background"
    GRAD_E = "grad_e"
    MULTI_INDEPENDENT = "multi_independent"
    MULTI_SUPERPOSED = "multi_superposed"


@dataclass
class CostSpec:
    variant: Variant = Variant.GRAD_E
    alpha: float = 0.0
    u_b: ModelParams | None = None
    active: frozenset = field(default_factory=lambda: frozenset({"e"}))

    def __post_init__(self):
        self.variant = Variant(self.variant)
        self.active = frozenset(self.active)
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not self.active <= set(CONTROLS):
            raise ValueError(f"unknown controls {sorted(self.active - set(CONTROLS))}")
        if self.variant is Variant.BACKGROUND and self.u_b is None:
            raise ValueError("background Tikhonov cost needs u_b")

    @property
    def uses_background(self) -> bool:
        return self.variant is Variant.BACKGROUND

    def with_alpha(self, alpha: float) -> "CostSpec":
        return CostSpec(self.variant, alpha, self.u_b, self.active)

    def mask(self, n: int) -> np.ndarray:
        """Boolean mask over the packed vector [a, k, E_0..E_{n-1}]."""
        m = np.zeros(n + 2, dtype=bool)
        m[0] = "a" in self.active
        m[1] = "k" in self.active
        m[2:] = "e" in self.active
        return m

    def to_dict(self) -> dict:
        out = {"variant": self.variant.value, "alpha": self.alpha, "active": sorted(self.active)}
        if self.u_b is not None:
            out["u_b"] = {"a": self.u_b.a, "k": self.u_b.k}
        return out


@dataclass(frozen=True)
class CostBreakdown:
    misfit: float
    regularization: float

    @property
    def total(self) -> float:
        return self.misfit + self.regularization


def misfit_l2(z, z_exp, grid: Grid1D) -> float:
    """Trapezoidal integral of (z - z_exp)^2."""
    z = np.asarray(z, dtype=float)
    z_exp = np.asarray(z_exp, dtype=float)
    if z.shape != (grid.n,) or z_exp.shape != (grid.n,):
        raise ValueError(f"profiles must have shape ({grid.n},), got {z.shape} and {z_exp.shape}")
    r = z - z_exp
    return float(grid.weights @ (r * r))


def check_consistent(meas: MeasurementSet, spec: CostSpec, grid: Grid1D):
    if meas.n_nodes != grid.n:
        raise ValueError(f"measurements have {meas.n_nodes} nodes, grid has {grid.n}")
    needs = {
        Variant.MULTI_INDEPENDENT: Combine.INDEPENDENT,
        Variant.MULTI_SUPERPOSED: Combine.SUPERPOSED,
    }.get(spec.variant)
    if needs is not None and meas.combine is not needs:
        raise ValueError(
            f"cost variant {spec.variant.value!r} needs {needs.value!r} measurements, "
            f"got {meas.combine.value!r}"
        )


def data_misfit(z, meas: MeasurementSet, grid: Grid1D) -> tuple[float, np.ndarray]:
    """Misfit value and its derivative with respect to the final state."""
    w = grid.weights
    zbar = meas.mean_profile()
    if meas.combine is Combine.SUPERPOSED:
        value = misfit_l2(z, zbar, grid)
    else:
        value = sum(misfit_l2(z, d, grid) for d in meas.profiles) / len(meas.profiles)
    # Both combinations share the derivative 2 w (z - mean).
    return value, 2.0 * w * (z - zbar)


def regularization(params: ModelParams, spec: CostSpec, grid: Grid1D) -> tuple[float, np.ndarray]:
    """Regularization value and its gradient over the packed vector."""
    grad = np.zeros(grid.n + 2)
    if spec.alpha == 0:
        return 0.0, grad
    alpha = spec.alpha
    if spec.uses_background:
        ub = spec.u_b
        value = 0.0
        if "a" in spec.active:
            value += (params.a - ub.a) ** 2
            grad[0] = 2 * alpha * (params.a - ub.a)
        if "k" in spec.active:
            value += (params.k - ub.k) ** 2
            grad[1] = 2 * alpha * (params.k - ub.k)
        if "e" in spec.active:
            de = params.e - ub.e
            w = grid.weights
            value += float(w @ (de * de))
            grad[2:] = 2 * alpha * w * de
        return alpha * value, grad
    d = np.diff(params.e)
    value = alpha * float(d @ d) / grid.dx
    if "e" in spec.active:
        g = np.zeros(grid.n)
        g[:-1] -= d
        g[1:] += d
        grad[2:] = 2 * alpha / grid.dx * g
    return value, grad


def evaluate(params: ModelParams, meas: MeasurementSet, spec: CostSpec,
             grid: Grid1D, scheme: TimeScheme) -> CostBreakdown:
    check_consistent(meas, spec, grid)
    z = forward(params, grid, scheme).final
    mis, _ = data_misfit(z, meas, grid)
    reg, _ = regularization(params, spec, grid)
    return CostBreakdown(mis, reg)
