"""Command-line front end.

    awjm forward     --preset paper-3.2
    awjm generate    --preset paper-3.2 --noise 15 --count 2 --combine independent
    awjm identify    --preset paper-3.3 --alpha 1e-5
    awjm lcurve      --preset paper-3.3-lcurve
    awjm sensitivity --preset paper-table1 --seeds 5
    awjm fdcheck     --preset tiny

Exit status is 0 on success, 2 for configuration problems and 3 when the
numerics fail (blow-up, non-finite cost, gradient check above tolerance).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from awjm import __version__
from awjm.adjoint import fd_check
from awjm.cost import CostSpec
from awjm.data import Combine, MeasurementSet, NoiseSpec, make_measurement_set
from awjm.experiments import (
    PRESETS,
    ExperimentPreset,
    get_preset,
    relative_l2,
    run_lcurve,
    run_sensitivity,
)
from awjm.io import (
    grid_from_x,
    output_root,
    read_measurement_set,
    read_profile,
    write_etch,
    write_json,
    write_measurement_set,
    write_profile,
    write_snapshots,
)
from awjm.model import forward
from awjm.optimize import minimize
from awjm.regularization import write_lcurve_csv

log = logging.getLogger("awjm")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

COMMANDS = ("forward", "generate", "identify", "lcurve", "sensitivity", "fdcheck")
CUSTOM_BASE = "paper-3.2"

# CLI option -> preset field. The first group defines the model and the grid;
# overriding it on a named preset would silently change what the preset means.
MODEL_FIELDS = {"n": "n", "half_width": "half_width", "a": "a", "k": "k", "etch": "etch",
                "etch_amplitude": "etch_amplitude", "dt_rule": "dt_rule"}
RUN_FIELDS = {"alpha": "alpha", "max_iters": "max_iters", "noise_mode": "noise_mode",
              "seeds": "seeds", "grad_rtol": "grad_rtol"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    preset: str | None = None
    overrides: dict = field(default_factory=dict)
    out: str | None = None
    force: bool = False
    seed: int | None = None
    noise: float | None = None
    start: str | None = None
    measurements: str | None = None
    count: int = 1
    combine: str = "single"
    h: float = 1e-6
    tol: float = 1e-5
    workers: int = 1
    snapshot_every: int = 0

    def resolve(self) -> ExperimentPreset:
        """The preset with all overrides applied."""
        base = get_preset(self.preset or CUSTOM_BASE)
        changes = {}
        for key, value in self.overrides.items():
            if key in MODEL_FIELDS:
                name = MODEL_FIELDS[key]
                if self.preset is not None and getattr(base, name) != value:
                    raise ConfigError(
                        f"--{key.replace('_', '-')} {value} conflicts with preset {self.preset!r} "
                        f"({name}={getattr(base, name)}); drop the preset to build a custom setup"
                    )
                changes[name] = value
            elif key in RUN_FIELDS:
                changes[RUN_FIELDS[key]] = value
            else:
                raise ConfigError(f"unknown override {key!r}")
        if self.preset is None:
            changes["name"] = "custom"
        if self.seed is not None:
            changes["base_seed"] = self.seed
        if self.noise is not None:
            changes["noise_levels"] = (float(self.noise),)
        if self.start is not None:
            changes["starts"] = (self.start,)
        try:
            return replace(base, **changes)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def output_dir(self) -> Path:
        if self.out:
            return Path(self.out)
        return output_root() / f"{self.command}-{self.preset or 'custom'}"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", choices=sorted(PRESETS))
    common.add_argument("--config", help="JSON file with RunConfig keys")
    common.add_argument("--out", help="output directory (default: $AWJM_OUTPUT_ROOT/<command>-<preset>)")
    common.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--noise", type=float, help="noise level in percent")
    common.add_argument("--noise-mode", choices=["posthoc", "dynamic"])
    common.add_argument("--alpha", type=float)
    common.add_argument("--max-iters", type=int)
    common.add_argument("--grad-rtol", type=float)
    common.add_argument("--n", type=int, help="number of grid nodes")
    common.add_argument("--half-width", type=float)
    common.add_argument("--a", type=float)
    common.add_argument("--k", type=float)
    common.add_argument("--etch", choices=["gaussian", "gapped", "zero"])
    common.add_argument("--etch-amplitude", type=float)
    common.add_argument("--dt-rule", choices=["parabolic", "hyperbolic"])
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="awjm", description="Waterjet milling model identification.")
    parser.add_argument("--version", action="version", version=f"awjm {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("forward", parents=[common], help="solve the forward model")
    p.add_argument("--snapshot-every", type=int, default=0)
    p = sub.add_parser("generate", parents=[common], help="write a synthetic measurement set")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--combine", choices=[c.value for c in Combine], default="single")
    p = sub.add_parser("identify", parents=[common], help="identify the active controls")
    p.add_argument("--measurements", help="manifest.json, its directory, or a single x,z CSV")
    p.add_argument("--start", choices=["good", "poor", "zero", "background", "perturbed", "truth"])
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--combine", choices=[c.value for c in Combine], default="single")
    sub.add_parser("lcurve", parents=[common], help="L-curve sweep over alpha")
    p = sub.add_parser("sensitivity", parents=[common], help="noise sensitivity matrix")
    p.add_argument("--seeds", type=int, help="replications per cell")
    p.add_argument("--workers", type=int, default=1)
    p = sub.add_parser("fdcheck", parents=[common], help="adjoint versus finite differences")
    p.add_argument("--h", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-5)
    return parser


_OVERRIDE_KEYS = tuple(MODEL_FIELDS) + tuple(RUN_FIELDS)
_CONFIG_KEYS = ({f.name for f in fields(RunConfig)} - {"overrides"}) | set(_OVERRIDE_KEYS)


def _from_mapping(data: dict) -> RunConfig:
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    if data.get("command") not in COMMANDS:
        raise ConfigError(f"command must be one of {', '.join(COMMANDS)}")
    overrides = {k: data[k] for k in _OVERRIDE_KEYS if data.get(k) is not None}
    plain = {k: v for k, v in data.items() if k not in _OVERRIDE_KEYS and v is not None}
    return RunConfig(overrides=overrides, **plain)


def parse_config(argv) -> RunConfig:
    """Turn command-line arguments (optionally plus a JSON file) into a RunConfig."""
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.command is None:
        raise ConfigError(parser.format_usage().strip())
    given = {k: v for k, v in vars(ns).items()
             if k not in ("config", "verbose") and v is not None and v is not False}
    data = {}
    if ns.config:
        try:
            data = json.loads(Path(ns.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {ns.config}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        if "command" in data and data["command"] != ns.command:
            raise ConfigError(f"config is for {data['command']!r}, command line says {ns.command!r}")
        if "preset" in data and "preset" in given and data["preset"] != given["preset"]:
            raise ConfigError("config file and command line name different presets")
    data.update(given)
    cfg = _from_mapping(data)
    cfg.resolve()
    return cfg


def _prepare_out(cfg: RunConfig) -> Path:
    out = cfg.output_dir()
    if out.exists() and any(out.iterdir()) and not cfg.force:
        raise ConfigError(f"output directory {out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(cfg: RunConfig, preset: ExperimentPreset, outputs, extra=None) -> dict:
    m = {
        "awjm_version": __version__,
        "numpy_version": np.__version__,
        "command": cfg.command,
        "config": asdict(cfg),
        "preset": preset.to_dict(),
        "preset_version": preset.version,
        "seed": preset.base_seed,
        "outputs": sorted(str(o) for o in outputs),
    }
    if extra:
        m.update(extra)
    return m


def _measurements(cfg: RunConfig, preset: ExperimentPreset):
    grid, scheme = preset.grid, preset.scheme
    if cfg.measurements:
        path = Path(cfg.measurements)
        if not path.exists():
            raise ConfigError(f"measurement file {path} does not exist")
        if path.suffix == ".csv":
            x, z = read_profile(path)
            meas, mgrid = MeasurementSet.single(z), grid_from_x(x)
        else:
            meas, mgrid = read_measurement_set(path)
        if mgrid.n != grid.n or not np.isclose(mgrid.dx, grid.dx):
            raise ConfigError(f"measurements are on a {mgrid.n}-node grid, preset expects {grid.n}")
        return meas, None
    truth = preset.truth()
    noise = NoiseSpec(preset.noise_levels[0], preset.noise_mode, preset.base_seed)
    meas = make_measurement_set(truth, grid, scheme, noise, cfg.count, cfg.combine)
    return meas, truth


def cmd_forward(cfg, preset, out):
    grid = preset.grid
    traj = forward(preset.truth(), grid, preset.scheme)
    files = [write_profile(out / "profile.csv", grid.x, traj.final),
             write_etch(out / "etch.csv", grid.x, preset.truth().e)]
    if cfg.snapshot_every > 0:
        files += write_snapshots(out / "snapshots", grid, traj.states, cfg.snapshot_every)
    return files, {"max_depth": float(traj.final.max())}


def cmd_generate(cfg, preset, out):
    noise = NoiseSpec(preset.noise_levels[0], preset.noise_mode, preset.base_seed)
    meas = make_measurement_set(preset.truth(), preset.grid, preset.scheme, noise, cfg.count, cfg.combine)
    manifest = write_measurement_set(out / "measurements", meas, preset.grid)
    return [manifest] + [manifest.parent / f"profile_{i}.csv" for i in range(cfg.count)], {}


def cmd_identify(cfg, preset, out):
    grid, scheme = preset.grid, preset.scheme
    meas, truth = _measurements(cfg, preset)
    spec = preset.cost_spec()
    if meas.combine is not Combine.SINGLE and spec.variant.value == "grad_e":
        spec = CostSpec(f"multi_{meas.combine.value}", spec.alpha, spec.u_b, spec.active)
    sol, trace = minimize(preset.start(preset.starts[0]), meas, spec, grid, scheme, preset.opt_config())
    z = forward(sol, grid, scheme).final
    files = [out / "trace.csv", out / "params.json", out / "etch.csv", out / "profile.csv"]
    trace.write_csv(files[0])
    result = {"a": sol.a, "k": sol.k, "iterations": trace.n_iters, "stop_reason": trace.stop_reason.value,
              "misfit": trace.records[-1].misfit, "data_error": relative_l2(z, meas.mean_profile(), grid)}
    if truth is not None:
        z_clean = forward(truth, grid, scheme).final
        for name in ("a", "k"):
            if name in spec.active:
                t, v = getattr(truth, name), getattr(sol, name)
                result[f"{name}_rel_error"] = abs(v - t) / t if t else abs(v)
        if "e" in spec.active and np.any(truth.e):
            result["e_rel_error"] = float(np.linalg.norm(sol.e - truth.e) / np.linalg.norm(truth.e))
        if np.any(z_clean):
            result["trench_error"] = relative_l2(z, z_clean, grid)
    write_json(files[1], result)
    write_etch(files[2], grid.x, sol.e)
    write_profile(files[3], grid.x, z)
    print(json.dumps(result, indent=2))
    return files, {"result": result}


def cmd_lcurve(cfg, preset, out):
    study = run_lcurve(preset)
    write_lcurve_csv(study.points, out / "lcurve.csv")
    result = {"corner_alpha": study.corner_alpha, "degenerate": study.degenerate,
              "best_alpha": study.best_alpha,
              "trench_errors": dict(zip((p.alpha for p in study.points), study.trench_errors))}
    write_json(out / "corner.json", result)
    print(f"corner alpha = {study.corner_alpha:g}")
    return [out / "lcurve.csv", out / "corner.json"], {"result": result}


def cmd_sensitivity(cfg, preset, out):
    report = run_sensitivity(preset, workers=cfg.workers)
    files = [out / "table.csv", out / "long.csv", out / "report.json"]
    report.write_table_csv(files[0])
    report.write_long_csv(files[1])
    report.write_json(files[2])
    print(files[0].read_text(), end="")
    return files, {"failures": len(report.failures)}


def cmd_fdcheck(cfg, preset, out):
    grid, scheme = preset.grid, preset.scheme
    meas, _ = _measurements(cfg, preset)
    rep = fd_check(preset.start(preset.starts[0]), meas, preset.cost_spec(), grid, scheme, h=cfg.h)
    rep.write_csv(out / "fdcheck.csv")
    print(f"max relative error {rep.max_rel_error:.3e} over {len(rep.rows)} components")
    if rep.max_rel_error >= cfg.tol:
        log.error("gradient check failed: %.3e >= %.1e", rep.max_rel_error, cfg.tol)
        return [out / "fdcheck.csv"], {"max_rel_error": rep.max_rel_error, "failed": True}
    return [out / "fdcheck.csv"], {"max_rel_error": rep.max_rel_error}


HANDLERS = {"forward": cmd_forward, "generate": cmd_generate, "identify": cmd_identify,
            "lcurve": cmd_lcurve, "sensitivity": cmd_sensitivity, "fdcheck": cmd_fdcheck}


def run(cfg: RunConfig) -> int:
    try:
        preset = cfg.resolve()
        out = _prepare_out(cfg)
        files, extra = HANDLERS[cfg.command](cfg, preset, out)
    except ConfigError as exc:
        print(f"awjm: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as exc:
        print(f"awjm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"awjm: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_json(out / "manifest.json", _manifest(cfg, preset, files, extra))
    return EXIT_NUMERIC if extra.get("failed") else EXIT_OK


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if not argv:
        build_parser().print_usage(sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if "-v" in argv or "--verbose" in argv else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"awjm: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
