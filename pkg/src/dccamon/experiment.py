"""Benchmark harness: the proposed monitor and three baselines evaluated on the
same calibration and test windows across signal-noise levels."""
import csv
import multiprocessing
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import fileio
from .baselines import T2Chart, classifier_fit, pca_fit, pls_fit
from .linalg import DEFAULT_RIDGE
from .monitor import MonitorModel, ReferenceLibrary, evaluate
from .simgen import with_noise
from .training import Standardizer, TrainConfig, make_windows, train

METHODS = ("dcca", "pca_t2", "pls_t2", "classifier")
WORKERS_ENV = "DCCAMON_WORKERS"


@dataclass
class Protocol:
    window_size: int = 25
    dim: int = 6
    alpha: float = 0.05
    train_windows: int = 1000
    val_windows: int = 1000
    test_windows: int = 2000  # per class
    epochs: int = 500
    lr: float = 0.1
    beta: float = 0.0
    ridge: float = DEFAULT_RIDGE
    distance: str = "standardized"
    abnormal_train: int = 250
    t2_stat: str = "mean"
    pca_variance: float = 0.9
    classifier_epochs: int = 500
    seed: int = 0

    def digest(self):
        return fileio.config_hash(asdict(self))


@dataclass
class ExperimentReport:
    method: str
    delta: float
    fpr: float
    fnr: float
    f1: float
    n_normal: int
    n_abnormal: int
    config_hash: str
    normal_scores: np.ndarray = field(repr=False, default=None)
    abnormal_scores: np.ndarray = field(repr=False, default=None)
    extra: dict = field(default_factory=dict)

    FIELDS = ("method", "delta", "fpr", "fnr", "f1", "n_normal", "n_abnormal", "config_hash")

    def row(self):
        return {k: getattr(self, k) for k in self.FIELDS}


@dataclass
class Split:
    """Column indices of one dataset used by every method."""

    X: np.ndarray
    Y: np.ndarray
    train0: np.ndarray
    train1: np.ndarray  # the limited abnormal sample
    val0: np.ndarray
    test0: np.ndarray
    test1: np.ndarray


def make_split(dataset, protocol):
    rng = np.random.default_rng([protocol.seed, 11])
    tr1 = dataset.subset("train", 1)
    k = min(protocol.abnormal_train, tr1.size)
    return Split(
        dataset.signals,
        dataset.flat_images,
        dataset.subset("train", 0),
        np.sort(rng.choice(tr1, size=k, replace=False)),
        dataset.subset("val", 0),
        dataset.subset("test", 0),
        dataset.subset("test", 1),
    )


def window_index(pool, n, count, seed):
    """``count`` windows of ``n`` distinct columns drawn from ``pool``."""
    rng = np.random.default_rng(seed)
    return np.stack([rng.choice(pool, size=n, replace=False) for _ in range(count)])


def _windows(split, protocol):
    n = protocol.window_size
    s = protocol.seed
    return (
        window_index(split.val0, n, protocol.val_windows, [s, 21]),
        window_index(split.test0, n, protocol.test_windows, [s, 22]),
        window_index(split.test1, n, protocol.test_windows, [s, 23]),
    )


def _report(method, delta, protocol, alarms0, alarms1, s0, s1, **extra):
    labels = np.r_[np.zeros(len(alarms0), int), np.ones(len(alarms1), int)]
    m = evaluate(np.r_[alarms0, alarms1], labels)
    return ExperimentReport(method, float(delta), m.fpr, m.fnr, m.f1, len(alarms0), len(alarms1),
                            protocol.digest(), np.asarray(s0), np.asarray(s1), extra)


# ------------------------------------------------------------------ methods


def fit_proposed(split, protocol, log=None):
    """Train the encoder pair on normal windows and build an uncalibrated monitor."""
    n = protocol.window_size
    cfg = TrainConfig(window_size=n, dim=protocol.dim, epochs=protocol.epochs, lr=protocol.lr,
                      ridge=protocol.ridge, seed=protocol.seed, beta=protocol.beta,
                      n_normal_windows=protocol.train_windows,
                      n_abnormal_windows=protocol.train_windows if protocol.beta else 0)
    X, Y = split.X, split.Y
    normal = make_windows(X[:, split.train0], Y[:, split.train0], n, protocol.train_windows, seed=[protocol.seed, 31])
    abnormal = None
    if protocol.beta:
        abnormal = make_windows(X[:, split.train1], Y[:, split.train1], n, protocol.train_windows,
                                seed=[protocol.seed, 32], label="abnormal")
    result = train(cfg, normal, abnormal,
                   x_scaler=Standardizer.fit(X[:, split.train0]),
                   y_scaler=Standardizer.fit(Y[:, split.train0], per_coordinate=False), log=log)
    lib = ReferenceLibrary.build(X[:, split.train0], Y[:, split.train0], protocol.distance, result.pair)
    return MonitorModel(result.pair, lib, n, ridge=protocol.ridge), result.history


def run_proposed(split, protocol, delta=None, log=None):
    model, history = fit_proposed(split, protocol, log)
    return evaluate_proposed(model, split, protocol, delta, history)


def evaluate_proposed(model, split, protocol, delta=None, history=None):
    """Calibrate ``model`` on validation windows and score the test windows.

    The calibrated model is kept in ``extra["model"]``.
    """
    val, t0, t1 = _windows(split, protocol)
    cal, _, _ = model.score_pooled(split.X, val)
    model = model.calibrated(cal, protocol.alpha)
    s0, _, d0 = model.score_pooled(split.X, t0)
    s1, _, d1 = model.score_pooled(split.X, t1)
    val_flagged = float(np.mean(model.alarms(cal, np.full(cal.size, "ok"))))
    return _report("dcca", delta, protocol, model.alarms(s0, d0), model.alarms(s1, d1), s0, s1,
                   threshold=model.threshold, val_flagged=val_flagged, final_loss=history[-1] if history else None,
                   calibration_scores=cal, model=model)


def _chart_report(name, features, split, protocol, delta, train_features, k):
    chart = T2Chart.fit(train_features, protocol.t2_stat)
    val, t0, t1 = _windows(split, protocol)
    stats = [chart.window_stats(features(split.X[:, w.ravel()]).reshape(k, *w.shape).transpose(1, 0, 2))
             for w in (val, t0, t1)]
    chart.calibrate(stats[0], protocol.alpha)
    return _report(name, delta, protocol, chart.alarms(stats[1]), chart.alarms(stats[2]), stats[1], stats[2],
                   limit=chart.limit, k=k, window_stat=protocol.t2_stat)


def run_pca(split, protocol, delta=None, log=None):
    pca = pca_fit(split.X[:, split.train0], protocol.pca_variance)
    return _chart_report("pca_t2", pca.transform, split, protocol, delta, pca.transform(split.X[:, split.train0]), pca.k)


def run_pls(split, protocol, delta=None, log=None):
    k = pca_fit(split.X[:, split.train0], protocol.pca_variance).k
    pls = pls_fit(split.X[:, split.train0], split.Y[:, split.train0], k)
    return _chart_report("pls_t2", pls.transform, split, protocol, delta, pls.train_scores.T, k)


def run_classifier(split, protocol, delta=None, log=None):
    cols = np.r_[split.train0, split.train1]
    labels = np.r_[np.zeros(split.train0.size, int), np.ones(split.train1.size, int)]
    model = classifier_fit(split.X[:, cols], labels, seed=protocol.seed, epochs=protocol.classifier_epochs)
    _, t0, t1 = _windows(split, protocol)
    v0 = model.votes(split.X[:, t0.ravel()]).reshape(t0.shape).sum(axis=1)
    v1 = model.votes(split.X[:, t1.ravel()]).reshape(t1.shape).sum(axis=1)
    per_t = [_report("classifier", delta, protocol, v0 > t, v1 > t, v0, v1) for t in range(1, protocol.window_size + 1)]
    out = _report("classifier", delta, protocol, v0 > 0, v1 > 0, v0, v1, thresholds=list(range(1, protocol.window_size + 1)))
    out.fpr = float(np.mean([r.fpr for r in per_t]))
    out.fnr = float(np.mean([r.fnr for r in per_t]))
    out.f1 = float(np.mean([r.f1 for r in per_t]))
    out.extra["per_threshold_f1"] = [r.f1 for r in per_t]
    return out


RUNNERS = {"dcca": run_proposed, "pca_t2": run_pca, "pls_t2": run_pls, "classifier": run_classifier}

# ------------------------------------------------------------------ grid

_SHARED = {}


def _run_cell(cell):
    method, delta = cell
    dataset, protocol = _SHARED["dataset"], _SHARED["protocol"]
    split = make_split(with_noise(dataset, delta), protocol)
    return RUNNERS[method](split, protocol, delta)


def worker_count():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_benchmark(dataset, deltas, protocol=None, methods=METHODS, workers=None):
    """Evaluate every ``(method, delta)`` cell; results come back in grid order.

    Cells are independent and seeded only by the protocol, so the worker count
    never changes the numbers.
    """
    protocol = protocol or Protocol()
    cells = [(m, float(d)) for d in deltas for m in methods]
    workers = worker_count() if workers is None else workers
    _SHARED.update(dataset=dataset, protocol=protocol)
    try:
        if workers > 1 and len(cells) > 1:
            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(min(workers, len(cells))) as pool:
                return pool.map(_run_cell, cells)
        return [_run_cell(c) for c in cells]
    finally:
        _SHARED.clear()


def write_reports(reports, out_dir, extra_manifest=None):
    """``reports.csv`` plus one raw-score histogram CSV per cell, then a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").unlink(missing_ok=True)
    with open(out / "reports.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ExperimentReport.FIELDS)
        writer.writeheader()
        for r in reports:
            row = r.row()
            for key in ("fpr", "fnr", "f1"):
                row[key] = f"{row[key]:.2f}"
            writer.writerow(row)
    for r in reports:
        with open(out / f"scores_{r.method}_delta{r.delta:g}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", "score"])
            writer.writerows([0, f"{s:.6f}"] for s in r.normal_scores)
            writer.writerows([1, f"{s:.6f}"] for s in r.abnormal_scores)
    digest = reports[0].config_hash if reports else ""
    return fileio.write_manifest(out, "benchmark", digest, extra_manifest)
