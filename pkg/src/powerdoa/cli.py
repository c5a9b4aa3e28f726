"""Command line interface.

Subcommands: ``simulate``, ``train``, ``select-order``, ``estimate``,
``crlb`` and ``benchmark``.  Config files are JSON or TOML; unknown keys are
rejected.  Exit codes: 0 success, 2 input/config error, 3 training did not
converge, 4 no signal or unidentifiable direction.
"""

import argparse
from dataclasses import dataclass, fields, MISSING
import json
import math
from pathlib import Path
import sys

import numpy as np

from . import io
from .crlb import SnrSpec, crlb_curve, equal_variance_lambda
from .estimator import DEFAULT_GRID_POINTS, estimate
from .exceptions import (
    InvalidInputError,
    ModelDegenerateError,
    NoSignalError,
    OrderSelectionError,
    PowerDoaError,
    UnidentifiableDirectionError,
)
from .scene import (
    DEFAULT_SIGMA2,
    ScenarioConfig,
    SIGNAL_POWER_SCALE,
    cardioid_array,
    generate_observation,
    generate_training_set,
    run_benchmark,
    uniform_angles,
)
from .training import SolverConfig, fit, select_order

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NOT_CONVERGED = 3
EXIT_NO_SIGNAL = 4


class ConfigError(InvalidInputError):
    code = "config_error"


# config -------------------------------------------------------------------

@dataclass
class ArraySection:
    n_mics: int = 8
    floor: float = 0.1
    sharpness: float = 25.5
    sigma2: float = DEFAULT_SIGMA2
    snr_db: float = 60.0


@dataclass
class ScenarioSection:
    signal_type: str = "wideband"
    duration_s: float = 1.0
    sample_rate: float = 48000.0
    n_train: int = 24
    n_validation: int = 24
    validation_offset_deg: float = 7.5
    noise_mode: str = "exact-chisq"


@dataclass
class SolverSection:
    max_iter: int = 500
    ftol: float = 1e-10
    gtol: float = 1e-8
    xtol: float = 1e-12
    init_jitter: float = 0.0
    seed: int = 0


@dataclass
class SimulateConfig:
    format_version: int = 1
    seed: int = 0
    out: str = "sim"
    array: ArraySection = None
    scenario: ScenarioSection = None
    validation_signals: list = None


@dataclass
class TrainConfig:
    training_csv: str = MISSING
    sidecar: str = MISSING
    format_version: int = 1
    order: int = 7
    orders: list = None
    out: str = "model.json"
    report: str = None
    solver: SolverSection = None


@dataclass
class BenchmarkConfig:
    format_version: int = 1
    seed: int = 0
    out: str = "benchmark"
    trials: int = 100
    order: int = 7
    model: str = None
    grid_points: int = DEFAULT_GRID_POINTS
    refine: bool = True
    train_snr_db: float = None
    signal_types: list = None
    array: ArraySection = None
    scenario: ScenarioSection = None
    solver: SolverSection = None


_SECTIONS = {"array": ArraySection, "scenario": ScenarioSection, "solver": SolverSection}


def _coerce(value, default, key):
    """Check a scalar config value against the type of its default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    return value


def parse_section(cls, raw, prefix=""):
    """Build dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a table/object")
    known = {f.name: f for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{prefix}{key}: unknown config key")
    values = {}
    for name, f in known.items():
        key = f"{prefix}{name}"
        if name in _SECTIONS:
            values[name] = parse_section(_SECTIONS[name], raw.get(name, {}), f"{key}.")
        elif name not in raw:
            if f.default is MISSING:
                raise ConfigError(f"{key}: required config key missing")
            values[name] = f.default
        elif f.default is None or f.default is MISSING:
            values[name] = raw[name]
        else:
            values[name] = _coerce(raw[name], f.default, key)
    return cls(**values)


def load_config(path, cls):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        try:
            raw = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: invalid TOML ({exc})") from None
    else:
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    cfg = parse_section(cls, raw)
    if cfg.format_version != 1:
        raise ConfigError(f"format_version: unsupported value {cfg.format_version!r}")
    return cfg, path.parent


def _positive(value, key, minimum=1):
    if value < minimum:
        raise ConfigError(f"{key}: must be >= {minimum}, got {value}")


def build_scene(array_cfg, scenario_cfg, seed):
    """Ground truth at its configured SNR plus the scenario."""
    _positive(array_cfg.n_mics, "array.n_mics")
    _positive(scenario_cfg.n_train, "scenario.n_train")
    _positive(scenario_cfg.n_validation, "scenario.n_validation")
    if array_cfg.sigma2 <= 0:
        raise ConfigError("array.sigma2: must be > 0")
    if scenario_cfg.signal_type not in SIGNAL_POWER_SCALE:
        raise ConfigError(f"scenario.signal_type: unknown value {scenario_cfg.signal_type!r}")
    try:
        scenario = ScenarioConfig(
            signal_type=scenario_cfg.signal_type,
            duration_s=scenario_cfg.duration_s,
            sample_rate=scenario_cfg.sample_rate,
            train_angles=uniform_angles(scenario_cfg.n_train),
            validation_angles=uniform_angles(
                scenario_cfg.n_validation, math.radians(scenario_cfg.validation_offset_deg)
            ),
            seed=seed,
            noise_mode=scenario_cfg.noise_mode,
        )
        truth = cardioid_array(
            n_mics=array_cfg.n_mics, floor=array_cfg.floor, sharpness=array_cfg.sharpness,
            sigma2=array_cfg.sigma2,
        ).at_snr(array_cfg.snr_db, scenario.frame_length)
    except InvalidInputError as exc:
        raise ConfigError(f"scenario: {exc}") from None
    return truth, scenario


def _solver(section):
    _positive(section.max_iter, "solver.max_iter")
    return SolverConfig(max_iter=section.max_iter, ftol=section.ftol, gtol=section.gtol,
                        xtol=section.xtol, init_jitter=section.init_jitter, seed=section.seed)


def _resolve(base, path):
    p = Path(path)
    return p if p.is_absolute() else base / p


def _emit(line):
    print(line, flush=True)


# commands -----------------------------------------------------------------

def cmd_simulate(args):
    cfg, base = load_config(args.config, SimulateConfig)
    seed = cfg.seed if args.seed is None else args.seed
    truth, scenario = build_scene(cfg.array, cfg.scenario, seed)
    signals = cfg.validation_signals or [scenario.signal_type]
    for s in signals:
        if s not in SIGNAL_POWER_SCALE:
            raise ConfigError(f"validation_signals: unknown signal type {s!r}")
    out = Path(args.out) if args.out else _resolve(base, cfg.out)
    data = generate_training_set(truth, scenario)
    io.write_training_set(out / "training.csv", out / "training.json", data)
    _emit(f"wrote {out / 'training.csv'} ({data.n_angles} angles x {data.n_mics} mics)")
    _emit(f"wrote {out / 'training.json'}")
    labels = []
    for s in signals:
        scfg = scenario.replace(signal_type=s)
        for i, psi in enumerate(scenario.validation_angles):
            name = f"{s}_{i:03d}.json"
            pv = generate_observation(truth, psi, scfg, (seed, 1, i))
            io.write_json(out / "validation" / name, io.power_vector_to_dict(pv))
            labels.append([name, s, io.fmt(io.deg(psi))])
    io.atomic_write_text(out / "validation" / "labels.csv",
                         io.csv_text(["file", "signal", "angle_deg"], labels))
    _emit(f"wrote {len(labels)} observations to {out / 'validation'}")
    return EXIT_OK


def _train_common(args, select):
    cfg, base = load_config(args.config, TrainConfig)
    data = io.read_training_set(_resolve(base, cfg.training_csv), _resolve(base, cfg.sidecar))
    solver = _solver(cfg.solver)
    out = Path(args.out) if args.out else _resolve(base, cfg.out)
    report_path = _resolve(base, cfg.report) if cfg.report else out.with_suffix(".report.json")
    if select:
        orders = cfg.orders if cfg.orders is not None else list(range(0, 12))
        if not isinstance(orders, list) or not orders or not all(isinstance(o, int) for o in orders):
            raise ConfigError("orders: expected a non-empty list of integers")
        try:
            best, scores, fits = select_order(data, orders, solver)
        except OrderSelectionError as exc:
            raise ConfigError(f"orders: {exc}") from None
        model, report = fits[best]
        io.write_json(out.with_suffix(".scores.json"), {
            "best_order": best,
            "bic": {str(k): v for k, v in sorted(scores.items())},
        })
        _emit(f"selected order {best}")
        for d, b in sorted(scores.items()):
            _emit(f"  order {d:2d}  bic {b!r}")
    else:
        order = cfg.order if args.order is None else args.order
        if isinstance(order, bool) or not isinstance(order, int) or order < 0:
            raise ConfigError(f"order: expected a non-negative integer, got {order!r}")
        model, report = fit(data, order, solver)
    io.write_model(out, model)
    io.write_json(report_path, io.jsonable(report.to_dict()))
    _emit(f"wrote {out} (order {model.order}, loss {report.loss!r}, converged {report.converged})")
    _emit(f"wrote {report_path}")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_train(args):
    return _train_common(args, select=False)


def cmd_select_order(args):
    return _train_common(args, select=True)


def _estimate_one(model, path, args):
    pv = io.read_power_vector(path)
    est = estimate(model, pv, grid_points=args.grid, refine=not args.no_refine,
                   no_signal_gate=not args.no_gate)
    return est.to_dict()


def cmd_estimate(args):
    model = io.read_model(args.model)
    target = Path(args.obs)
    if args.grid < 2:
        raise ConfigError("--grid: must be >= 2")
    if target.is_dir():
        files = sorted(p for p in target.iterdir() if p.suffix == ".json")
        lines, worst = [], EXIT_OK
        for p in files:
            row = {"file": p.name}
            try:
                row.update(_estimate_one(model, p, args))
            except (NoSignalError, UnidentifiableDirectionError, ModelDegenerateError) as exc:
                row.update({"error": exc.code, "message": str(exc)})
                worst = EXIT_NO_SIGNAL
            except InvalidInputError as exc:
                row.update({"error": exc.code, "message": str(exc)})
                worst = max(worst, EXIT_INPUT) if worst != EXIT_NO_SIGNAL else worst
            lines.append(json.dumps(row, allow_nan=False))
        text = "".join(line + "\n" for line in lines)
        code = worst
    else:
        try:
            text = io.dumps_json(_estimate_one(model, target, args))
            code = EXIT_OK
        except (NoSignalError, UnidentifiableDirectionError, ModelDegenerateError) as exc:
            text = io.dumps_json({"error": exc.code, "message": str(exc)})
            code = EXIT_NO_SIGNAL
    if args.out:
        io.atomic_write_text(args.out, text)
        _emit(f"wrote {args.out} ({len(files) if target.is_dir() else 1} observation(s))")
    else:
        sys.stdout.write(text)
    return code


def cmd_crlb(args):
    model = io.read_model(args.model)
    lam = equal_variance_lambda(model.noise) if args.lam is None else args.lam
    if args.snr_db is not None and args.alpha is not None:
        raise ConfigError("--alpha and --snr-db are mutually exclusive")
    try:
        if args.snr_db is not None:
            snr = SnrSpec.from_snr_db(args.snr_db, lam)
        else:
            snr = SnrSpec(alpha=model.alpha if args.alpha is None else args.alpha, lam=lam)
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None
    if args.grid < 2:
        raise ConfigError("--grid: must be >= 2")
    curve = crlb_curve(model, snr, args.grid)
    text = io.crlb_csv_text(curve)
    if args.out:
        io.atomic_write_text(args.out, text)
        _emit(f"wrote {args.out} ({args.grid} angles, SNR {snr.snr_db:.2f} dB, "
              f"{int(curve.degenerate_mask.sum())} degenerate)")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_benchmark(args):
    cfg, base = load_config(args.config, BenchmarkConfig)
    seed = cfg.seed if args.seed is None else args.seed
    _positive(cfg.trials, "trials")
    _positive(cfg.grid_points, "grid_points", minimum=2)
    truth, scenario = build_scene(cfg.array, cfg.scenario, seed)
    signals = cfg.signal_types or [scenario.signal_type]
    for s in signals:
        if s not in SIGNAL_POWER_SCALE:
            raise ConfigError(f"signal_types: unknown signal type {s!r}")
    out = Path(args.out) if args.out else _resolve(base, cfg.out)
    if cfg.model:
        model = io.read_model(_resolve(base, cfg.model))
    else:
        trainer = truth if cfg.train_snr_db is None else truth.at_snr(cfg.train_snr_db, scenario.frame_length)
        model, report = fit(generate_training_set(trainer, scenario), cfg.order, _solver(cfg.solver))
        if not report.converged:
            io.write_json(out / "fit_report.json", io.jsonable(report.to_dict()))
            _emit("training did not converge")
            return EXIT_NOT_CONVERGED
        io.write_model(out / "model.json", model)
    report = run_benchmark(truth, scenario, model, cfg.trials, signals, cfg.grid_points, cfg.refine)
    io.write_json(out / "report.json", io.jsonable(report.to_dict()))
    io.atomic_write_text(out / "trials.csv", io.benchmark_trials_csv_text(report))
    io.atomic_write_text(out / "summary.csv", io.benchmark_summary_csv_text(report))
    _emit(f"{'signal':<22}{'n_ok':>6}{'failed':>8}{'mean_deg':>12}{'rmse_deg':>12}")
    for s in report.summary:
        mean = "nan" if s["mean_error_deg"] is None else f"{s['mean_error_deg']:.4f}"
        rmse = "nan" if s["rmse_deg"] is None else f"{s['rmse_deg']:.4f}"
        _emit(f"{s['signal']:<22}{s['n_ok']:>6}{s['n_failed']:>8}{mean:>12}{rmse:>12}")
    _emit(f"wrote {out / 'report.json'}, {out / 'trials.csv'}, {out / 'summary.csv'}")
    return EXIT_OK


# entry point --------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="powerdoa", description=__doc__.split("\n")[0])
    parser.add_argument("--error-json", action="store_true",
                        help="print errors as a JSON object on stdout")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic training set and validation observations")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    for name, func, helptext in (
        ("train", cmd_train, "fit a directivity model of one order"),
        ("select-order", cmd_select_order, "fit candidate orders and keep the BIC minimiser"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config")
        p.add_argument("--out")
        if name == "train":
            p.add_argument("--order", type=int)
        else:
            p.set_defaults(order=None)
        p.set_defaults(func=func)

    p = sub.add_parser("estimate", help="estimate the DOA of one observation or a directory of them")
    p.add_argument("model")
    p.add_argument("obs")
    p.add_argument("--grid", type=int, default=DEFAULT_GRID_POINTS)
    p.add_argument("--no-refine", action="store_true")
    p.add_argument("--no-gate", action="store_true", help="disable the no-signal energy gate")
    p.add_argument("--out")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("crlb", help="write the CRLB curve of a model as CSV")
    p.add_argument("model")
    p.add_argument("--alpha", type=float)
    p.add_argument("--snr-db", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--grid", type=int, default=360)
    p.add_argument("--out")
    p.set_defaults(func=cmd_crlb)

    p = sub.add_parser("benchmark", help="Monte-Carlo evaluation against a simulated array")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_benchmark)
    return parser


def _fail(args, code, exc):
    payload = {"error": getattr(exc, "code", "error"), "message": str(exc)}
    if getattr(args, "error_json", False):
        print(json.dumps(payload), flush=True)
    print(f"powerdoa: error: {exc}", file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NoSignalError, UnidentifiableDirectionError, ModelDegenerateError) as exc:
        return _fail(args, EXIT_NO_SIGNAL, exc)
    except (InvalidInputError, OSError) as exc:
        return _fail(args, EXIT_INPUT, exc)
    except PowerDoaError as exc:
        return _fail(args, EXIT_INPUT, exc)


if __name__ == "__main__":
    sys.exit(main())
