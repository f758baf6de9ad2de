import numpy as np
import pytest

from tripdrift.dataio import LabeledDataset

_acceptance = []


def pytest_collection_modifyitems(items):
    for item in items:
        if item.get_closest_marker("acceptance") is None and item.module.__name__.endswith("test_acceptance"):
            item.add_marker(pytest.mark.acceptance)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: exit criterion; reported in the terminal summary")


def pytest_runtest_logreport(report):
    if "acceptance" not in report.keywords:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = "; ".join(str(v) for k, v in report.user_properties if k == "detail")
        if report.skipped and isinstance(report.longrepr, tuple):
            detail = report.longrepr[2].removeprefix("Skipped: ")
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome, report.duration, detail))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    labels = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}
    for name, outcome, duration, detail in _acceptance:
        line = f"[{labels.get(outcome, outcome.upper())}] {name} ({duration:.1f}s)"
        terminalreporter.write_line(line + (f": {detail}" if detail else ""))


def make_dataset(features, labels, timestamps=None):
    X = np.asarray(features, dtype=float)
    if timestamps is None:
        timestamps = np.arange(X.shape[0])
    return LabeledDataset(X, np.asarray(labels, dtype=str), np.asarray(timestamps, dtype=np.int64))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def smooth_network(layer_dims, seed):
    """Seeded network with small random biases.

    Zero-initialised biases put every pre-activation of a row whose inputs to
    a layer are all zero exactly on the ReLU kink, where a central difference
    returns the average of the one-sided slopes. Random biases move these
    points off the kink so finite differences are a valid oracle.
    """
    from tripdrift.neuralnet import NetworkParams, init_network

    net = init_network(layer_dims, seed=seed)
    rng = np.random.default_rng([seed, 99])
    biases = tuple(rng.uniform(-0.5, 0.5, size=b.shape) for b in net.biases)
    return NetworkParams(net.layer_dims, net.weights, biases)
