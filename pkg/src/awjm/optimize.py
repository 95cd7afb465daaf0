"""Limited-memory BFGS with simple lower bounds.

Iterates are kept feasible by projection. Components sitting on their bound
with a gradient pointing outwards are frozen for the current direction and
masked out of the curvature pairs.
"""

from __future__ import annotations

import csv
import enum
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from awjm.adjoint import gradient
from awjm.cost import CostBreakdown, CostSpec
from awjm.data import MeasurementSet
from awjm.model import BlowUpError, Grid1D, ModelParams, TimeScheme

log = logging.getLogger(__name__)

ARMIJO_C1 = 1e-4
WOLFE_C2 = 0.9
MAX_HALVINGS = 40


class LineSearch(str, enum.Enum):
    ARMIJO = "armijo"
    STRONG_WOLFE = "strong_wolfe"


class StopReason(str, enum.Enum):
    GRAD_TOL = "grad_tol"
    COST_TOL = "cost_tol"
    MAX_ITERS = "max_iters"
    LINE_SEARCH_FAIL = "line_search_fail"


class NonFiniteCostError(FloatingPointError):
    pass


@dataclass
class OptConfig:
    memory_m: int = 10
    max_iters: int = 200
    grad_tol: float | None = None
    grad_rtol: float | None = None
    cost_tol: float = 1e-12
    lower_bound: float = 0.0
    line_search: LineSearch = LineSearch.ARMIJO

    def __post_init__(self):
        self.line_search = LineSearch(self.line_search)
        if self.memory_m < 1:
            raise ValueError("memory_m must be >= 1")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        for name in ("grad_tol", "grad_rtol", "cost_tol"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return {
            "memory_m": self.memory_m, "max_iters": self.max_iters,
            "grad_tol": self.grad_tol, "grad_rtol": self.grad_rtol,
            "cost_tol": self.cost_tol, "lower_bound": self.lower_bound,
            "line_search": self.line_search.value,
        }


@dataclass
class IterRecord:
    iter: int
    misfit: float
    reg: float
    total: float
    gradnorm: float
    step: float
    nfev: int


@dataclass
class OptTrace:
    records: list = field(default_factory=list)
    stop_reason: StopReason | None = None
    x: np.ndarray | None = None
    nfev: int = 0
    history: list = field(default_factory=list)

    @property
    def n_iters(self) -> int:
        return max(len(self.records) - 1, 0)

    @property
    def costs(self) -> np.ndarray:
        return np.array([r.total for r in self.records])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["iter", "misfit", "reg", "total", "gradnorm", "step"])
            for r in self.records:
                out.writerow([r.iter] + [repr(float(v)) for v in (r.misfit, r.reg, r.total, r.gradnorm, r.step)])


def two_loop(g, s_hist, y_hist) -> np.ndarray:
    """Apply the L-BFGS inverse-Hessian approximation to g.

    Pairs are ordered oldest first. The initial matrix is gamma * I with
    gamma = s'y / y'y from the newest pair.
    """
    q = np.array(g, dtype=float)
    if not s_hist:
        return q
    rhos = [1.0 / float(y @ s) for s, y in zip(s_hist, y_hist)]
    alphas = []
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rhos)):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    s, y = s_hist[-1], y_hist[-1]
    r = (float(s @ y) / float(y @ y)) * q
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rhos), reversed(alphas)):
        b = rho * float(y @ r)
        r += (a - b) * s
    return r


def _projected_grad(x, g, lb):
    pg = g.copy()
    pg[(x <= lb) & (g > 0)] = 0.0
    return pg


def lbfgs(fun: Callable, x0, cfg: OptConfig, lower=None, info: Callable | None = None):
    """Minimize ``fun`` where ``fun(x)`` returns ``(f, g)``.

    ``info(x)`` may return ``(misfit, reg)`` for the trace; otherwise the
    total is reported as misfit. Returns ``(x, OptTrace)``.
    """
    x = np.array(x0, dtype=float)
    lb = np.full(x.shape, -np.inf) if lower is None else np.broadcast_to(np.asarray(lower, float), x.shape)
    x = np.maximum(x, lb)
    trace = OptTrace()

    def call(xx):
        trace.nfev += 1
        try:
            f, g = fun(xx)
        except BlowUpError:
            return np.inf, None
        return float(f), np.asarray(g, dtype=float)

    def record(it, f, g, step):
        mis, reg = info(x) if info is not None else (f, 0.0)
        trace.records.append(IterRecord(it, mis, reg, f, float(np.linalg.norm(g)), step, trace.nfev))

    f, g = call(x)
    if not np.isfinite(f):
        raise NonFiniteCostError("cost is not finite at the starting point")
    pg = _projected_grad(x, g, lb)
    g0norm = float(np.linalg.norm(pg))
    gtol = cfg.grad_tol if cfg.grad_tol is not None else 1e-8 * (1.0 + g0norm)
    if cfg.grad_rtol is not None:
        gtol = max(gtol, cfg.grad_rtol * g0norm)
    record(0, f, pg, 0.0)
    trace.history.append(x.copy())
    s_hist: deque = deque(maxlen=cfg.memory_m)
    y_hist: deque = deque(maxlen=cfg.memory_m)

    it = 0
    while True:
        if np.linalg.norm(pg) <= gtol:
            trace.stop_reason = StopReason.GRAD_TOL
            break
        if it >= cfg.max_iters:
            trace.stop_reason = StopReason.MAX_ITERS
            break
        held = (x <= lb) & (g > 0)
        d = -two_loop(pg, list(s_hist), list(y_hist))
        d[held] = 0.0
        if float(d @ pg) >= 0.0:
            s_hist.clear()
            y_hist.clear()
            d = -pg
        if not s_hist:
            # No curvature yet: cap the first move at 10% of the iterate scale.
            scale = 0.1 * max(float(np.max(np.abs(x))), 1e-2)
            d *= min(1.0, scale / float(np.max(np.abs(d))))

        x_new, f_new, g_new, rho = _line_search(call, x, f, g, d, lb, cfg.line_search)
        if x_new is None:
            trace.stop_reason = StopReason.LINE_SEARCH_FAIL
            log.warning("line search failed at iteration %d", it)
            break
        it += 1
        s = x_new - x
        y = g_new - g
        active = x_new <= lb
        s[active] = 0.0
        y[active] = 0.0
        sy = float(s @ y)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            s_hist.append(s)
            y_hist.append(y)
        f_old = f
        x, f, g = x_new, f_new, g_new
        pg = _projected_grad(x, g, lb)
        record(it, f, pg, rho)
        trace.history.append(x.copy())
        if abs(f_old - f) <= cfg.cost_tol * max(abs(f_old), abs(f), 1e-300):
            trace.stop_reason = StopReason.COST_TOL
            break
    trace.x = x
    return x, trace


def _line_search(call, x, f, g, d, lb, kind):
    rho_max = np.inf
    neg = d < 0
    if np.any(neg & np.isfinite(lb)):
        rho_max = float(np.min((x[neg] - lb[neg]) / -d[neg]))
    if kind is LineSearch.STRONG_WOLFE and rho_max >= 1.0:
        out = _strong_wolfe(call, x, f, g, d, min(rho_max, 10.0))
        if out[0] is not None:
            return out
    return _armijo(call, x, f, g, d, lb)


def _armijo(call, x, f, g, d, lb):
    rho = 1.0
    for _ in range(MAX_HALVINGS + 1):
        xt = np.maximum(x + rho * d, lb)
        ft, gt = call(xt)
        if np.isfinite(ft) and ft <= f + ARMIJO_C1 * float(g @ (xt - x)) and ft < f:
            return xt, ft, gt, rho
        rho *= 0.5
    return None, None, None, None


def _strong_wolfe(call, x, f, g, d, rho_max):
    dphi0 = float(g @ d)
    lo, hi = 0.0, None
    f_lo = f
    rho = 1.0
    for _ in range(MAX_HALVINGS):
        xt = x + rho * d
        ft, gt = call(xt)
        if not np.isfinite(ft) or ft > f + ARMIJO_C1 * rho * dphi0 or ft >= f_lo:
            hi = rho
        else:
            dphi = float(gt @ d)
            if abs(dphi) <= -WOLFE_C2 * dphi0:
                return xt, ft, gt, rho
            if dphi > 0:
                hi = rho
            else:
                lo, f_lo = rho, ft
                best = (xt, ft, gt, rho)
        if hi is None:
            rho = min(2.0 * rho, rho_max)
            if rho == lo:
                return best
        else:
            rho = 0.5 * (lo + hi)
    return None, None, None, None


def minimize(start: ModelParams, meas: MeasurementSet, spec: CostSpec, grid: Grid1D,
             scheme: TimeScheme, cfg: OptConfig | None = None) -> tuple[ModelParams, OptTrace]:
    """Identify the active controls of ``start`` by minimizing the cost."""
    cfg = cfg or OptConfig()
    start.validate(grid)
    full = start.to_vector()
    mask = spec.mask(grid.n)
    last: dict = {}

    def unpack(xa):
        v = full.copy()
        v[mask] = xa
        return ModelParams.from_vector(v)

    def fun(xa):
        br, g = gradient(unpack(xa), meas, spec, grid, scheme)
        last[xa.tobytes()] = br
        if len(last) > 64:
            last.pop(next(iter(last)))
        return br.total, g[mask]

    def info(xa):
        br: CostBreakdown = last[xa.tobytes()]
        return br.misfit, br.regularization

    x, trace = lbfgs(fun, full[mask], cfg, lower=cfg.lower_bound, info=info)
    log.info("minimize: %s after %d iterations (%d evaluations)",
             trace.stop_reason.value, trace.n_iters, trace.nfev)
    return unpack(x), trace
