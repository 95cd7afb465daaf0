"""Exact gradient of the discrete cost by a reverse sweep over the trajectory."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from awjm import _kernels
from awjm.cost import (
    CostBreakdown,
    CostSpec,
    check_consistent,
    data_misfit,
    evaluate,
    regularization,
)
from awjm.data import MeasurementSet
from awjm.model import Grid1D, ModelParams, TimeScheme, forward


@dataclass
class AdjointState:
    p0: np.ndarray
    grad_a: float
    grad_k: float
    grad_e: np.ndarray


def adjoint_sweep(params: ModelParams, traj, seed) -> AdjointState:
    """Propagate the terminal cotangent ``seed`` back to t = 0."""
    seed = np.ascontiguousarray(seed, dtype=float)
    ga, gk, ge, p0 = _kernels.adjoint_1d(
        traj.states, params.e, params.a, params.k, traj.grid.dx, traj.scheme.dt, seed
    )
    return AdjointState(p0, ga, gk, ge)


def gradient(params: ModelParams, meas: MeasurementSet, spec: CostSpec,
             grid: Grid1D, scheme: TimeScheme) -> tuple[CostBreakdown, np.ndarray]:
    """Cost breakdown and dJ/du packed as [a, k, E_0, ..., E_{n-1}].

    Entries for inactive controls are zero.
    """
    check_consistent(meas, spec, grid)
    traj = forward(params, grid, scheme)
    mis, seed = data_misfit(traj.final, meas, grid)
    reg, reg_grad = regularization(params, spec, grid)
    adj = adjoint_sweep(params, traj, seed)
    grad = np.concatenate(([adj.grad_a, adj.grad_k], adj.grad_e)) + reg_grad
    grad[~spec.mask(grid.n)] = 0.0
    return CostBreakdown(mis, reg), grad


def step_jvp(z, params: ModelParams, grid: Grid1D, scheme: TimeScheme, dz) -> np.ndarray:
    """Jacobian of one Euler step with respect to the state, applied to dz."""
    z = np.ascontiguousarray(z, dtype=float)
    dz = np.ascontiguousarray(dz, dtype=float)
    return dz + scheme.dt * _kernels.step_jvp_1d(z, params.e, params.a, params.k, grid.dx, dz)


def step_vjp(z, params: ModelParams, grid: Grid1D, scheme: TimeScheme, w) -> np.ndarray:
    """Transposed Jacobian of one Euler step applied to w."""
    z = np.ascontiguousarray(z, dtype=float)
    w = np.ascontiguousarray(w, dtype=float)
    scratch = np.zeros(grid.n)
    jt, _, _ = _kernels.step_vjp_1d(z, params.e, params.a, params.k, grid.dx, scheme.dt * w, scratch)
    return w + jt


def _parse_component(c, n: int) -> int:
    if isinstance(c, (int, np.integer)):
        idx = int(c)
    elif c == "a":
        idx = 0
    elif c == "k":
        idx = 1
    elif isinstance(c, str) and c.startswith("e"):
        idx = 2 + int(c[1:].lstrip(":[").rstrip("]"))
    else:
        raise ValueError(f"bad component {c!r}")
    if not 0 <= idx < n + 2:
        raise ValueError(f"component {c!r} out of range")
    return idx


def component_name(idx: int) -> str:
    return {0: "a", 1: "k"}.get(idx, f"e{idx - 2}")


@dataclass
class FDRow:
    component: str
    adjoint: float
    fd: float
    rel_error: float


@dataclass
class FDReport:
    rows: list
    h: float

    @property
    def max_rel_error(self) -> float:
        return max((r.rel_error for r in self.rows), default=0.0)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["component", "adjoint", "fd", "rel_error"])
            for r in self.rows:
                out.writerow([r.component, repr(float(r.adjoint)), repr(float(r.fd)), repr(float(r.rel_error))])


def relative_error(adj: float, fd: float, floor: float) -> float:
    denom = max(abs(adj), abs(fd), floor)
    if denom == 0.0:
        return 0.0
    return abs(adj - fd) / denom


def central_difference(fun, x, i: int, step: float) -> float:
    """(f(x + step e_i) - f(x - step e_i)) / (2 step)."""
    up = np.array(x, dtype=float)
    um = up.copy()
    up[i] += step
    um[i] -= step
    return (fun(up) - fun(um)) / (2 * step)


def fd_check(params: ModelParams, meas: MeasurementSet, spec: CostSpec, grid: Grid1D,
             scheme: TimeScheme, h: float = 1e-6, components=None,
             floor_rel: float = 1e-4) -> FDReport:
    """Compare the adjoint gradient with central differences of the total cost.

    The step for component i is ``h * max(|u_i|, 1)``. Relative errors are
    taken against ``max(|adjoint|, |fd|, floor_rel * max|adjoint|)`` so that
    components many orders below the largest one, where the difference
    quotient is limited by roundoff in the cost, do not dominate.
    Inactive components are reported with a zero finite difference.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    _, grad = gradient(params, meas, spec, grid, scheme)
    u0 = params.to_vector()
    n = grid.n
    mask = spec.mask(n)
    idx = range(n + 2) if components is None else [_parse_component(c, n) for c in components]

    def total(v):
        return evaluate(ModelParams.from_vector(v), meas, spec, grid, scheme).total

    floor = floor_rel * float(np.max(np.abs(grad))) if grad.size else 0.0
    rows = []
    for i in idx:
        if not mask[i]:
            fd = 0.0
        else:
            fd = central_difference(total, u0, i, h * max(abs(u0[i]), 1.0))
        rows.append(FDRow(component_name(i), float(grad[i]), float(fd),
                         float(relative_error(grad[i], fd, floor))))
    return FDReport(rows, h)
