"""L-curve selection of the Tikhonov coefficient."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from awjm.cost import CostSpec
from awjm.data import MeasurementSet
from awjm.model import Grid1D, ModelParams, TimeScheme
from awjm.optimize import OptConfig, StopReason, minimize

log = logging.getLogger(__name__)


@dataclass
class LCurvePoint:
    alpha: float
    misfit_norm: float
    reg_norm: float
    solution: ModelParams | None = None
    error: str | None = None
    n_iters: int = 0
    converged: bool = True

    @property
    def ok(self) -> bool:
        return self.error is None


class Corner(NamedTuple):
    alpha: float
    index: int
    degenerate: bool


def lcurve_sweep(alphas, start: ModelParams, meas: MeasurementSet, spec: CostSpec,
                 grid: Grid1D, scheme: TimeScheme, cfg: OptConfig | None = None,
                 warm_start: bool = True) -> list[LCurvePoint]:
    """Solve the regularized problem once per alpha.

    Records the residual norm sqrt(misfit) and the seminorm sqrt(reg/alpha)
    at each optimum. With ``warm_start`` the alphas are visited from largest
    to smallest and each run starts from the previous optimum, so the smooth
    solutions seed the rougher ones. A failed run is recorded and the sweep
    continues from the last good solution. Points come back in increasing
    alpha order.
    """
    alphas = [float(a) for a in alphas]
    if any(a <= 0 for a in alphas):
        raise ValueError("alphas must be strictly positive")
    if any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("alphas must be sorted increasingly")
    points = []
    current = start
    for alpha in (reversed(alphas) if warm_start else alphas):
        x0 = current if warm_start else start
        try:
            sol, trace = minimize(x0, meas, spec.with_alpha(alpha), grid, scheme, cfg)
        except (FloatingPointError, ValueError) as exc:
            log.warning("alpha=%g failed: %s", alpha, exc)
            points.append(LCurvePoint(alpha, np.nan, np.nan, error=str(exc)))
            continue
        last = trace.records[-1]
        points.append(LCurvePoint(
            alpha, float(np.sqrt(last.misfit)), float(np.sqrt(last.reg / alpha)), sol,
            n_iters=trace.n_iters, converged=trace.stop_reason is not StopReason.MAX_ITERS,
        ))
        if warm_start:
            current = sol
    points.sort(key=lambda p: p.alpha)
    return points


def _curvature(t, x, y):
    """Signed curvature of (x(t), y(t)) at interior samples, three-point stencils."""
    h1 = t[1:-1] - t[:-2]
    h2 = t[2:] - t[1:-1]

    def d1(f):
        return (-h2 / (h1 * (h1 + h2)) * f[:-2] + (h2 - h1) / (h1 * h2) * f[1:-1]
                + h1 / (h2 * (h1 + h2)) * f[2:])

    def d2(f):
        return 2 * (f[:-2] / (h1 * (h1 + h2)) - f[1:-1] / (h1 * h2) + f[2:] / (h2 * (h1 + h2)))

    xp, yp, xpp, ypp = d1(x), d1(y), d2(x), d2(y)
    speed = np.hypot(xp, yp)
    with np.errstate(invalid="ignore", divide="ignore"):
        kappa = (xp * ypp - xpp * yp) / speed**3
    return np.where(speed > 0, kappa, 0.0)


def lcurve_corner(points, rtol: float = 1e-8) -> Corner:
    """Maximum-curvature point of the (log residual, log seminorm) curve.

    Curvature is taken with respect to log10(alpha). Ties go to the larger
    alpha. If the curve is numerically straight the median alpha is returned
    with ``degenerate=True``.

    Runs that stopped on the iteration cap are not optima and are left out,
    unless fewer than five converged points remain.
    """
    pts = [p for p in points if p.ok and p.misfit_norm > 0 and p.reg_norm > 0]
    conv = [p for p in pts if p.converged]
    if len(conv) >= 5:
        pts = conv
    elif len(conv) < len(pts):
        log.warning("only %d converged L-curve points; using unconverged ones too", len(conv))
    if len(pts) < 5:
        raise ValueError(f"L-curve corner needs at least 5 valid points, got {len(pts)}")
    pts.sort(key=lambda p: p.alpha)
    t = np.log10([p.alpha for p in pts])
    x = np.log10([p.misfit_norm for p in pts])
    y = np.log10([p.reg_norm for p in pts])
    kappa = _curvature(t, x, y)
    extent = max(np.ptp(x), np.ptp(y))
    if extent == 0 or np.max(kappa) <= rtol / extent:
        log.warning("L-curve is degenerate; falling back to the median alpha")
        mid = len(pts) // 2
        return Corner(pts[mid].alpha, points.index(pts[mid]), True)
    best = np.flatnonzero(kappa >= kappa.max() * (1 - 1e-12))[-1] + 1
    return Corner(pts[best].alpha, points.index(pts[best]), False)


def write_lcurve_csv(points, path):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["alpha", "misfit", "regnorm"])
        for p in points:
            out.writerow([repr(float(v)) for v in (p.alpha, p.misfit_norm, p.reg_norm)])
