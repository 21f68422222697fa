"""``dccamon`` command line.

Exit codes: 0 success, 2 invalid input or config, 3 missing or mismatched
upstream artifact, 4 numerical failure.
"""
import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .bounds import run_bound_experiment
from .cca import make_gaussian_spec
from .dimsel import AeSettings, pilot_tolerances, select_dimension
from .errors import ArtifactError, ConfigError, DivergenceError, ShapeError
from .experiment import Protocol, make_split, run_benchmark, window_index, write_reports
from .monitor import MonitorModel, ReferenceLibrary, load_monitor, save_monitor
from .simgen import SimConfig, gen_dataset, load_dataset, save_dataset
from .training import Standardizer, TrainConfig, load_pair, make_windows, save_pair, train

EXIT_OK, EXIT_INVALID, EXIT_ARTIFACT, EXIT_NUMERIC = 0, 2, 3, 4


@dataclasses.dataclass
class DimSelSettings:
    p_star: int = 10
    slack: float = 0.75
    max_samples: int = 2000
    signal_epochs: int = 300
    quality_epochs: int = 60
    quality_hidden: tuple = (64,)


@dataclasses.dataclass
class BoundSettings:
    p: int = 2
    singulars: tuple = (0.7, 0.4)
    n_grid: tuple = (64, 128, 256, 512, 1024, 2048)
    trials: int = 200
    delta: float = 0.1
    seed: int = 0


@dataclasses.dataclass
class CalibrationSettings:
    alpha: float = 0.05
    val_windows: int = 1000
    distance: str = "standardized"
    seed: int = 0


SECTIONS = {
    "simulate": SimConfig,
    "train": TrainConfig,
    "calibrate": CalibrationSettings,
    "benchmark": Protocol,
    "select-dim": DimSelSettings,
    "verify-bounds": BoundSettings,
}


# ------------------------------------------------------------------ config


def _coerce(raw, default, where):
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            return tuple(kind(x.strip()) for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def section_settings(cls, config, section, overrides=None):
    """Build ``cls`` from a parsed INI section plus command-line overrides."""
    defaults = cls()
    values = {}
    if config is not None and section in config:
        lines = config["__lines__"]
        fields = {f.name for f in dataclasses.fields(cls)}
        for key, raw in config[section].items():
            where = f"{config['__path__']}:{lines.get((section, key), '?')}: [{section}] {key}"
            if key not in fields:
                raise ConfigError(f"{where}: unknown key")
            values[key] = _coerce(raw, getattr(defaults, key), where)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return dataclasses.replace(defaults, **values)


def validated(settings, config, section):
    """Run ``settings.validate()``, pointing errors at the config line of the offending key."""
    try:
        return settings.validate()
    except ConfigError as exc:
        if config is not None and section in config:
            for key in config[section]:
                if str(exc).startswith(key) or f" {key} " in f" {exc} ":
                    line = config["__lines__"].get((section, key), "?")
                    raise ConfigError(f"{config['__path__']}:{line}: [{section}] {exc}") from None
        raise


def _config(args):
    return fileio.read_config(args.config) if getattr(args, "config", None) else None


def _dataset(path):
    ds = load_dataset(path)
    return ds, fileio.verify_manifest(path, kind="dataset", deep=False)["config_hash"]


# ------------------------------------------------------------------ commands


def cmd_simulate(args):
    config = _config(args)
    cfg = validated(section_settings(SimConfig, config, "simulate", {"seed": args.seed}), config, "simulate")
    ds = gen_dataset(cfg)
    manifest = save_dataset(ds, args.out)
    print(f"wrote {len(ds.labels)} samples to {args.out} (config {manifest['config_hash']})")


def cmd_select_dim(args):
    s = section_settings(DimSelSettings, _config(args), "select-dim")
    ds, _ = _dataset(args.data)
    tr = ds.splits["train"]
    X, Y = ds.signals[:, tr], ds.flat_images[:, tr]
    sig = AeSettings(epochs=s.signal_epochs)
    qual = AeSettings(hidden=s.quality_hidden, epochs=s.quality_epochs)
    seed = args.seed if args.seed is not None else 0
    eps1, eps2 = pilot_tolerances(X, Y, s.p_star, s.slack, seed, sig, qual, s.max_samples)
    report = select_dimension(X, Y, s.p_star, eps1, eps2, seed, sig, qual, s.max_samples)
    text = report.table()
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "dimsel.csv").write_text(text)
    print(text, end="")


def _train_config(args):
    overrides = {"seed": args.seed, "beta": args.beta, "window_size": args.window_size, "dim": args.dim}
    config = _config(args)
    return validated(section_settings(TrainConfig, config, "train", overrides), config, "train")


def cmd_train(args):
    cfg = _train_config(args)
    ds, ds_hash = _dataset(args.data)
    tr0, tr1 = ds.subset("train", 0), ds.subset("train", 1)
    X, Y = ds.signals, ds.flat_images
    normal = make_windows(X[:, tr0], Y[:, tr0], cfg.window_size, cfg.n_normal_windows, seed=[cfg.seed, 31])
    abnormal = None
    if cfg.beta:
        count = cfg.n_abnormal_windows or cfg.n_normal_windows
        abnormal = make_windows(X[:, tr1], Y[:, tr1], cfg.window_size, count, seed=[cfg.seed, 32], label="abnormal")
    result = train(cfg, normal, abnormal, x_scaler=Standardizer.fit(X[:, tr0]),
                   y_scaler=Standardizer.fit(Y[:, tr0], per_coordinate=False),
                   log=lambda m: print(m, file=sys.stderr))
    save_pair(result.pair, args.out, history=result.history, extra={"dataset_hash": ds_hash})
    print(f"final loss {result.history[-1]:.6f}" if result.history else "no epochs run")


def cmd_calibrate(args):
    s = section_settings(CalibrationSettings, _config(args), "calibrate", {"alpha": args.alpha, "seed": args.seed})
    pair, manifest = load_pair(args.model)
    ds, ds_hash = _dataset(args.data)
    if manifest.get("dataset_hash") != ds_hash:
        raise ArtifactError(f"encoders were trained on dataset {manifest.get('dataset_hash')}, not {ds_hash}")
    n = int(pair.config["window_size"])
    tr0, va0 = ds.subset("train", 0), ds.subset("val", 0)
    lib = ReferenceLibrary.build(ds.signals[:, tr0], ds.flat_images[:, tr0], s.distance, pair)
    model = MonitorModel(pair, lib, n, ridge=float(pair.config["ridge"]))
    val = window_index(va0, n, s.val_windows, [s.seed, 21])
    scores, _, _ = model.score_pooled(ds.signals, val)
    model = model.calibrated(scores, s.alpha)
    flagged = float(np.mean(model.alarms(scores, np.full(scores.size, "ok"))))
    save_monitor(model, args.out, manifest["config_hash"])
    print(f"threshold {model.threshold:.6f} flags {flagged:.4f} of {scores.size} validation windows")


def cmd_export_windows(args):
    ds, ds_hash = _dataset(args.data)
    pool = ds.subset(args.split, args.label)
    idx = window_index(pool, args.window_size, args.count, [args.seed or 0, 41])
    with open(args.out, "wb") as fh:
        for i, cols in enumerate(idx):
            fileio.append_tensor(fh, ds.signals[:, cols], id=f"{args.split}-{args.label}-{i}", dataset_hash=ds_hash)
    print(f"wrote {len(idx)} windows to {args.out}")


def cmd_monitor(args):
    model = load_monitor(args.model)
    if model.threshold is None:
        raise ArtifactError(f"{args.model}: monitor is not calibrated")
    stream = sys.stdin.buffer if args.input in (None, "-") else open(args.input, "rb")
    counter = 0
    try:
        for array, header in fileio.iter_tensors(stream):
            stack = array[None] if array.ndim == 2 else array
            if stack.ndim != 3:
                raise ShapeError(f"window record must be (d, n) or (W, d, n), got {array.shape}")
            if stack.shape[2] != model.window_size:
                raise ShapeError(f"window has n={stack.shape[2]} samples; model was trained with n={model.window_size}")
            base = str(header.get("id", counter))
            ids = [base] if len(stack) == 1 else [f"{base}.{j}" for j in range(len(stack))]
            for v in model.detect_many(stack, ids):
                print(v.line(), flush=True)
            counter += 1
    finally:
        if stream is not sys.stdin.buffer:
            stream.close()


def _grid(text):
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"cannot parse noise grid {text!r}") from None


def cmd_benchmark(args):
    overrides = {"seed": args.seed, "alpha": args.alpha, "beta": args.beta,
                 "window_size": args.window_size, "dim": args.dim}
    cfg = _config(args)
    grid_raw = args.noise_grid
    if cfg is not None and "noise_grid" in cfg.get("benchmark", {}):
        grid_raw = grid_raw or cfg["benchmark"].pop("noise_grid")
    protocol = section_settings(Protocol, cfg, "benchmark", overrides)
    grid = _grid(grid_raw) if grid_raw else (1.0, 1.2, 1.4, 1.6, 1.8, 2.0)
    ds, ds_hash = _dataset(args.data)
    reports = run_benchmark(ds, grid, protocol)
    write_reports(reports, args.out, {"dataset_hash": ds_hash, "noise_grid": list(grid)})
    print("method,delta,FPR,FNR,F1")
    for r in reports:
        print(f"{r.method},{r.delta:g},{r.fpr:.2f},{r.fnr:.2f},{r.f1:.2f}")


def cmd_verify_bounds(args):
    s = section_settings(BoundSettings, _config(args), "verify-bounds", {"seed": args.seed})
    spec = make_gaussian_spec(s.p, s.singulars, seed=s.seed)
    exp = run_bound_experiment(spec, s.n_grid, s.trials, s.delta, s.seed)
    table = exp.table()
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "bounds.csv").write_text(table)
    print(table, end="")
    print(f"# slope {exp.slope:.4f}, bound holds: {exp.bound_holds}")


# ------------------------------------------------------------------ parser


def build_parser():
    parser = argparse.ArgumentParser(prog="dccamon", description="Correlation-based in-situ quality monitoring")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, data=False, out=True, out_required=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int)
        if data:
            p.add_argument("--data", required=True, help="dataset directory")
        if out:
            p.add_argument("--out", required=out_required)
        p.set_defaults(func=fn)
        return p

    add("simulate", cmd_simulate, "generate a simulation dataset")
    add("select-dim", cmd_select_dim, "choose the correlation dimension", data=True, out_required=False)
    p = add("train", cmd_train, "train the encoder pair", data=True)
    for flag, kind in (("--beta", float), ("--window-size", int), ("--dim", int)):
        p.add_argument(flag, type=kind)
    p = add("calibrate", cmd_calibrate, "calibrate the decision threshold", data=True)
    p.add_argument("--model", required=True, help="encoder checkpoint directory")
    p.add_argument("--alpha", type=float)
    p = add("export-windows", cmd_export_windows, "write signal windows as tensor records", data=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--label", type=int, default=0, choices=(0, 1))
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--window-size", type=int, default=25)
    p = add("monitor", cmd_monitor, "stream verdicts for signal windows", out=False)
    p.add_argument("--model", required=True, help="calibrated monitor directory")
    p.add_argument("--input", default="-", help="tensor record file, or - for stdin")
    p = add("benchmark", cmd_benchmark, "proposed method and baselines over a noise grid", data=True)
    p.add_argument("--noise-grid", help="comma-separated noise levels")
    p.add_argument("--alpha", type=float)
    for flag, kind in (("--beta", float), ("--window-size", int), ("--dim", int)):
        p.add_argument(flag, type=kind)
    add("verify-bounds", cmd_verify_bounds, "Monte Carlo check of the estimation error bound", out_required=False)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ArtifactError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except (DivergenceError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
