import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

DEFAULT_MNIST = Path("/root/data/mnist")


def mnist_dir():
    env = os.environ.get("SMARTMIXED_MNIST_DIR")
    if env and Path(env).is_dir():
        return Path(env)
    if DEFAULT_MNIST.is_dir():
        return DEFAULT_MNIST
    return None


@pytest.fixture(scope="session")
def mnist_path():
    path = mnist_dir()
    if path is None:
        pytest.skip("MNIST files not available (set SMARTMIXED_MNIST_DIR)")
    return path


@pytest.fixture(scope="session")
def mnist_splits(mnist_path):
    from smartmixed.data import prepare_mnist

    return prepare_mnist(mnist_path)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_splits(mnist_splits):
    """1000 training and 1000 validation images, stratified; full test set."""
    from smartmixed.data import DataSplits, stratified_subset

    return DataSplits(stratified_subset(mnist_splits.train, 1000, 0),
                      stratified_subset(mnist_splits.val, 1000, 0),
                      stratified_subset(mnist_splits.test, 2000, 0))


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance(request):
    """Call with (criterion, passed, detail); the line is echoed in the terminal summary."""

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
