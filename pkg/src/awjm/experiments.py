"""Named experiment presets and the studies that run them.

Every preset carries a version number. Bump it whenever a field changes so
that manifests written by older runs stay interpretable.
"""

from __future__ import annotations

import csv
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.stats import spearmanr

from awjm.cost import CostSpec
from awjm.data import Combine, NoiseSpec, etch_preset, generate_clean, make_measurement_set
from awjm.io import write_json
from awjm.model import Grid1D, ModelParams, TimeScheme, final_profile
from awjm.optimize import OptConfig, minimize
from awjm.regularization import lcurve_corner, lcurve_sweep

log = logging.getLogger(__name__)

# (label, combine mode, number of measurements)
MISFIT_CASES = {
    "single": (Combine.SINGLE, 1),
    "2-independent": (Combine.INDEPENDENT, 2),
    "2-superposed": (Combine.SUPERPOSED, 2),
    "3-independent": (Combine.INDEPENDENT, 3),
    "3-superposed": (Combine.SUPERPOSED, 3),
}
TABLE1_LEVELS = (1.0, 2.0, 5.0, 10.0, 15.0, 20.0, 30.0, 40.0)


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    version: int
    half_width: float
    n: int
    dt_rule: str                 # "parabolic" (dx^2/4) or "hyperbolic" (dx/4)
    a: float
    k: float
    etch: str
    etch_amplitude: float = 0.1
    etch_width: float | None = None
    noise_levels: tuple = (0.0,)
    noise_mode: str = "posthoc"
    cases: tuple = ("single",)
    variant: str = "grad_e"
    alpha: float = 1e-6
    alpha_policy: str = "fixed"  # or "lcurve"
    alphas: tuple = ()
    active: tuple = ("e",)
    background: tuple | None = None
    starts: tuple = ("good",)
    seeds: int = 1
    base_seed: int = 0
    max_iters: int = 200
    grad_tol: float | None = None
    grad_rtol: float | None = None
    t_end: float = 1.0

    def __post_init__(self):
        if self.seeds < 1:
            raise ValueError("replication count must be >= 1")
        if self.dt_rule not in ("parabolic", "hyperbolic"):
            raise ValueError(f"unknown dt rule {self.dt_rule!r}")
        if self.alpha_policy not in ("fixed", "lcurve"):
            raise ValueError(f"unknown alpha policy {self.alpha_policy!r}")
        unknown = set(self.cases) - set(MISFIT_CASES)
        if unknown:
            raise ValueError(f"unknown misfit cases {sorted(unknown)}")

    @property
    def grid(self) -> Grid1D:
        return Grid1D.symmetric(self.half_width, self.n)

    @property
    def scheme(self) -> TimeScheme:
        g = self.grid
        if self.dt_rule == "parabolic":
            return TimeScheme.parabolic(g, self.t_end)
        return TimeScheme.from_dt(self.t_end, g.dx / 4)

    def truth(self) -> ModelParams:
        g = self.grid
        return ModelParams(self.a, self.k, etch_preset(self.etch, g, self.etch_amplitude, self.etch_width))

    def start(self, kind: str) -> ModelParams:
        """Initial guess.

        ``good`` halves the true etch rate and adds a small constant, ``poor``
        is a constant 0.05, ``zero`` is E = 0, ``background`` puts (a, k) at
        the background values with the true E, and ``perturbed`` scales all
        three controls away from the truth.
        """
        t = self.truth()
        if kind == "truth":
            return t
        if kind == "good":
            return t.copy(e=0.5 * t.e + 0.02 * self.etch_amplitude / 0.1)
        if kind == "poor":
            return t.copy(e=np.full(self.n, 0.5 * self.etch_amplitude))
        if kind == "zero":
            return t.copy(e=np.zeros(self.n))
        if kind == "background":
            if self.background is None:
                raise ValueError(f"preset {self.name!r} has no background (a, k)")
            return t.copy(a=self.background[0], k=self.background[1])
        if kind == "perturbed":
            return ModelParams(1.15 * t.a, 0.85 * t.k, 0.8 * t.e)
        raise ValueError(f"unknown start {kind!r}")

    def cost_spec(self, alpha: float | None = None) -> CostSpec:
        ub = None
        if self.variant == "background":
            a_b, k_b = self.background
            ub = ModelParams(a_b, k_b, self.truth().e)
        return CostSpec(self.variant, self.alpha if alpha is None else alpha, ub, frozenset(self.active))

    def opt_config(self, **changes) -> OptConfig:
        cfg = OptConfig(max_iters=self.max_iters, grad_tol=self.grad_tol, grad_rtol=self.grad_rtol)
        return replace(cfg, **changes) if changes else cfg

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    p.name: p
    for p in [
        ExperimentPreset("tiny", 1, 1.0, 20, "hyperbolic", 2.0, 3.0, "gaussian",
                         noise_levels=(2.0,), alpha=1e-4, active=("a", "k", "e"),
                         starts=("perturbed",), max_iters=100),
        ExperimentPreset("paper-3.2", 1, 1.0, 200, "parabolic", 2.0, 3.0, "gaussian"),
        ExperimentPreset("paper-3.2-ak", 1, 1.0, 200, "parabolic", 2.0, 3.0, "gaussian",
                         noise_levels=(10.0, 30.0), variant="background", alpha=0.1,
                         alphas=(1e-3, 1e-2, 1e-1, 1.0, 1e1), active=("a", "k"),
                         background=(1.0, 1.5), starts=("background",), seeds=5, max_iters=100),
        ExperimentPreset("paper-3.2-e", 1, 1.0, 200, "parabolic", 2.0, 3.0, "gaussian",
                         alpha=1e-6, starts=("good", "poor"), max_iters=100, grad_rtol=1e-4),
        ExperimentPreset("paper-3.3", 1, 0.55, 228, "hyperbolic", 0.5, 3.0, "gapped",
                         etch_width=0.275, noise_levels=(1.0,), alpha=1e-5, starts=("zero",),
                         max_iters=300),
        ExperimentPreset("paper-3.3-lcurve", 1, 0.55, 228, "hyperbolic", 0.5, 3.0, "gapped",
                         etch_width=0.275, noise_levels=(1.0,), alpha=1e-5, alpha_policy="lcurve",
                         alphas=tuple(float(a) for a in np.logspace(-8, -2, 13)), starts=("zero",),
                         base_seed=1, max_iters=2000),
        ExperimentPreset("paper-table1", 1, 0.55, 228, "hyperbolic", 0.5, 3.0, "gapped",
                         etch_width=0.275, noise_levels=TABLE1_LEVELS, cases=tuple(MISFIT_CASES),
                         alpha=1e-5, starts=("zero",), seeds=5, max_iters=300),
    ]
}


def get_preset(name: str) -> ExperimentPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None


def relative_l2(z, ref, grid: Grid1D) -> float:
    """Trapezoidal ||z - ref|| / ||ref||."""
    w = grid.weights
    d = np.asarray(z) - np.asarray(ref)
    return float(np.sqrt(w @ (d * d) / (w @ (np.asarray(ref) ** 2))))


def _map(fn, jobs, workers: int):
    # Results come back in job order whatever the schedule.
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


# ---------------------------------------------------------------- a/k study

@dataclass
class AKCell:
    noise: float
    alpha: float
    seed: int
    a: float = np.nan
    k: float = np.nan
    n_iters: int = 0
    stop: str | None = None
    path: list = field(default_factory=list)
    rel_error: float = np.nan
    error: str | None = None


def _ak_job(job):
    preset, noise, alpha, seed = job
    cell = AKCell(noise, alpha, seed)
    grid, scheme, truth = preset.grid, preset.scheme, preset.truth()
    try:
        meas = make_measurement_set(truth, grid, scheme, NoiseSpec(noise, preset.noise_mode, seed))
        sol, trace = minimize(preset.start("background"), meas, preset.cost_spec(alpha), grid, scheme,
                              preset.opt_config())
    except (FloatingPointError, ValueError) as exc:
        cell.error = str(exc)
        return cell
    cell.a, cell.k = sol.a, sol.k
    cell.n_iters = trace.n_iters
    cell.stop = trace.stop_reason.value
    cell.path = [(float(h[0]), float(h[1])) for h in trace.history]
    return cell


def run_ak_study(preset: ExperimentPreset, noise_levels=None, alphas=None, seeds=None,
                 workers: int = 1) -> list[AKCell]:
    """Identify (a, k) with E held at the truth, one run per (noise, alpha, seed).

    ``rel_error`` of a cell is the larger of the relative errors in a and k.
    """
    levels = preset.noise_levels if noise_levels is None else noise_levels
    alphas = (preset.alphas or (preset.alpha,)) if alphas is None else alphas
    seeds = range(preset.base_seed, preset.base_seed + preset.seeds) if seeds is None else seeds
    jobs = [(preset, float(n), float(al), int(s)) for n in levels for al in alphas for s in seeds]
    cells = _map(_ak_job, jobs, workers)
    for c in cells:
        if c.error is None:
            c.rel_error = max(abs(c.a - preset.a) / preset.a, abs(c.k - preset.k) / preset.k)
            log.info("noise %g alpha %g seed %d -> a=%.5f k=%.5f (%.2e) in %d its",
                     c.noise, c.alpha, c.seed, c.a, c.k, c.rel_error, c.n_iters)
    return cells


# ---------------------------------------------------------------- E study

@dataclass
class ERun:
    start: str
    noise: float
    seed: int
    solution: ModelParams | None = None
    trace: object = None
    e_error: float = np.nan
    trench_error: float = np.nan
    data_error: float = np.nan
    error: str | None = None


def run_e_study(preset: ExperimentPreset, starts=None, noise: float | None = None,
                seed: int | None = None, alpha: float | None = None, cfg: OptConfig | None = None) -> list[ERun]:
    """Identify E with (a, k) fixed, once per starting guess.

    ``e_error`` compares E with the truth, ``trench_error`` compares the
    reconstructed trench with the clean profile and ``data_error`` compares
    it with the (noisy) measurement that was fitted. All three are relative
    L2 norms.
    """
    grid, scheme, truth = preset.grid, preset.scheme, preset.truth()
    noise = preset.noise_levels[0] if noise is None else noise
    seed = preset.base_seed if seed is None else seed
    cfg = cfg or preset.opt_config()
    z_clean = generate_clean(truth, grid, scheme)
    meas = make_measurement_set(truth, grid, scheme, NoiseSpec(noise, preset.noise_mode, seed), z_clean=z_clean)
    runs = []
    for kind in starts or preset.starts:
        run = ERun(kind, noise, seed)
        try:
            sol, trace = minimize(preset.start(kind), meas, preset.cost_spec(alpha), grid, scheme, cfg)
            z = final_profile(sol, grid, scheme)
        except (FloatingPointError, ValueError) as exc:
            run.error = str(exc)
            runs.append(run)
            continue
        run.solution, run.trace = sol, trace
        norm_e = np.linalg.norm(truth.e)
        run.e_error = float(np.linalg.norm(sol.e - truth.e) / norm_e) if norm_e > 0 else float(np.linalg.norm(sol.e))
        if np.any(z_clean):
            run.trench_error = relative_l2(z, z_clean, grid)
            run.data_error = relative_l2(z, meas.profiles[0], grid)
        else:
            run.trench_error = run.data_error = float(np.sqrt(grid.weights @ z**2))
        runs.append(run)
    return runs


# ---------------------------------------------------------------- L-curve

@dataclass
class LCurveStudy:
    points: list
    corner_alpha: float
    degenerate: bool
    trench_errors: list

    @property
    def best_alpha(self) -> float:
        i = int(np.nanargmin(self.trench_errors))
        return self.points[i].alpha


def run_lcurve(preset: ExperimentPreset, noise: float | None = None, seed: int | None = None,
               alphas=None, cfg: OptConfig | None = None, warm_start: bool = True) -> LCurveStudy:
    grid, scheme, truth = preset.grid, preset.scheme, preset.truth()
    noise = preset.noise_levels[0] if noise is None else noise
    seed = preset.base_seed if seed is None else seed
    z_clean = generate_clean(truth, grid, scheme)
    meas = make_measurement_set(truth, grid, scheme, NoiseSpec(noise, preset.noise_mode, seed), z_clean=z_clean)
    points = lcurve_sweep(alphas or preset.alphas, preset.start(preset.starts[0]), meas, preset.cost_spec(),
                          grid, scheme, cfg or preset.opt_config(), warm_start=warm_start)
    errors = []
    for p in points:
        errors.append(relative_l2(final_profile(p.solution, grid, scheme), z_clean, grid) if p.ok else np.nan)
    corner = lcurve_corner(points)
    return LCurveStudy(points, corner.alpha, corner.degenerate, errors)


# ---------------------------------------------------------------- sensitivity

@dataclass
class SensitivityReport:
    """Relative trench errors indexed by [case, noise level, replicate].

    Failed cells hold NaN and are listed in ``failures``.
    """

    cases: list
    levels: list
    seeds: list
    errors: np.ndarray
    iterations: np.ndarray
    failures: list = field(default_factory=list)
    preset: dict = field(default_factory=dict)

    @property
    def mean(self) -> np.ndarray:
        # cells where every replicate failed stay NaN
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return np.nanmean(self.errors, axis=2)

    @property
    def spread(self) -> np.ndarray:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return np.nanstd(self.errors, axis=2)

    def cell(self, case: str, level: float) -> np.ndarray:
        return self.errors[self.cases.index(case), self.levels.index(level)]

    def spearman(self) -> dict:
        out = {}
        for i, c in enumerate(self.cases):
            rho = spearmanr(self.levels, self.mean[i]).statistic
            out[c] = float(rho)
        return out

    def write_table_csv(self, path):
        """Rows are misfit cases, columns noise levels, entries mean errors."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trenches"] + [f"{lv:g}%" for lv in self.levels])
            for i, c in enumerate(self.cases):
                w.writerow([c] + ["failed" if np.isnan(v) else repr(float(v)) for v in self.mean[i]])

    def write_long_csv(self, path):
        rows = [(i, lv, s) for i in range(len(self.cases)) for lv in range(len(self.levels))
                for s in range(len(self.seeds))]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["case", "noise", "seed", "error", "iterations"])
            for i, j, s in rows:
                w.writerow([self.cases[i], repr(self.levels[j]), self.seeds[s],
                            repr(float(self.errors[i, j, s])), int(self.iterations[i, j, s])])

    def write_json(self, path):
        meta = {
            "preset": self.preset,
            "cases": self.cases,
            "levels": self.levels,
            "seeds": self.seeds,
            "metric": "relative L2 (trapezoid) between reconstructed and clean trench",
            "mean": self.mean,
            "spread": self.spread,
            "spearman": self.spearman(),
            "failures": self.failures,
        }
        write_json(path, meta)


def _sensitivity_job(job):
    preset, case, level, seed = job
    grid, scheme, truth = preset.grid, preset.scheme, preset.truth()
    combine, count = MISFIT_CASES[case]
    variant = "grad_e" if combine is Combine.SINGLE else f"multi_{combine.value}"
    spec = CostSpec(variant, preset.alpha, None, frozenset(preset.active))
    try:
        z_clean = generate_clean(truth, grid, scheme)
        meas = make_measurement_set(truth, grid, scheme, NoiseSpec(level, preset.noise_mode, seed),
                                    count, combine, z_clean=z_clean)
        sol, trace = minimize(preset.start(preset.starts[0]), meas, spec, grid, scheme, preset.opt_config())
        err = relative_l2(final_profile(sol, grid, scheme), z_clean, grid)
    except (FloatingPointError, ValueError) as exc:
        return np.nan, 0, str(exc)
    return err, trace.n_iters, None


def run_sensitivity(preset: ExperimentPreset, seeds: int | None = None, levels=None, cases=None,
                    workers: int = 1) -> SensitivityReport:
    """Reconstruction error for every (misfit case, noise level, replicate).

    Replicate ``r`` uses noise seed ``base_seed + r``; the measurement
    realizations within one cell come from streams ``(seed, 0..count-1)``, so
    the single-trench run shares its profile with the first realization of
    every multi-trench run at the same level and seed.
    """
    cases = list(cases or preset.cases)
    levels = [float(v) for v in (levels or preset.noise_levels)]
    seed_list = list(range(preset.base_seed, preset.base_seed + (seeds or preset.seeds)))
    jobs = [(preset, c, lv, s) for c in cases for lv in levels for s in seed_list]
    results = _map(_sensitivity_job, jobs, workers)
    shape = (len(cases), len(levels), len(seed_list))
    errors = np.array([r[0] for r in results], dtype=float).reshape(shape)
    iters = np.array([r[1] for r in results], dtype=int).reshape(shape)
    failures = [{"case": j[1], "noise": j[2], "seed": j[3], "error": r[2]}
                for j, r in zip(jobs, results) if r[2] is not None]
    return SensitivityReport(cases, levels, seed_list, errors, iters, failures, preset.to_dict())

