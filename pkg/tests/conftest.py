import time

import numpy as np
import pytest

from dccamon.experiment import METHODS, Protocol, evaluate_proposed, fit_proposed, make_split, run_benchmark
from dccamon.simgen import SimConfig, gen_dataset, load_dataset, save_dataset, with_noise

SMALL = SimConfig(n_samples=600, test_size=200, ae_epochs=5, ae_hidden=(32,))
BENCH_DELTAS = (1.0, 1.5, 2.0)

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        details = [v for k, v in item.user_properties if k == "detail"]
        _criteria[number] = (title, rep.outcome, details)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, outcome, details = _criteria[number]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number} {verdict}: {title}")
        for d in details:
            terminalreporter.write_line(f"    {d}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dataset():
    return gen_dataset(SMALL)


@pytest.fixture(scope="session")
def full_dataset(request):
    """Default-configuration dataset, cached on disk between sessions by config hash."""
    cfg = SimConfig()
    cache = request.config.cache.mkdir("dccamon-dataset") / cfg.digest()
    if (cache / "manifest.json").exists():
        return load_dataset(cache)
    t0 = time.perf_counter()
    ds = gen_dataset(cfg)
    save_dataset(ds, cache)
    ds.autoencoder = None
    request.config.cache.set("dccamon/generation_seconds", time.perf_counter() - t0)
    return ds


@pytest.fixture(scope="session")
def proposed_delta1(full_dataset):
    """Trained and calibrated proposed monitor at delta = 1 with its report."""
    protocol = Protocol()
    split = make_split(with_noise(full_dataset, 1.0), protocol)
    t0 = time.perf_counter()
    model, history = fit_proposed(split, protocol)
    report = evaluate_proposed(model, split, protocol, 1.0, history)
    report.extra["seconds"] = time.perf_counter() - t0
    report.extra["history"] = history
    report.extra["split"] = split
    return report


@pytest.fixture(scope="session")
def benchmark_reports(full_dataset, proposed_delta1):
    """Every method over the noise grid; the delta = 1 proposed cell is reused."""
    t0 = time.perf_counter()
    baselines = [m for m in METHODS if m != "dcca"]
    reports = run_benchmark(full_dataset, BENCH_DELTAS[:1], Protocol(), baselines)
    reports += run_benchmark(full_dataset, BENCH_DELTAS[1:], Protocol())
    seconds = time.perf_counter() - t0 + proposed_delta1.extra["seconds"]
    table = {(r.method, r.delta): r for r in reports}
    table[("dcca", 1.0)] = proposed_delta1
    return table, seconds
