import numpy as np
import pytest

from sniff.model import DenseLayer, FeatureExtractor, StudentLayer, StudentModel, generate_synthetic

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def small_model():
    """m=2, n=1, identity extractor, W=[[0.5, -0.25]], b=[0.1, -0.2]."""
    return StudentModel(FeatureExtractor.identity(1), StudentLayer([[0.5, -0.25]], [0.1, -0.2]))


@pytest.fixture
def desk_model():
    return generate_synthetic(42, [32, 16], 16, 10, final_activation="relu")


def random_model(rng, n, m, input_dim=None, depth=1, lo=-1.0, hi=1.0, activation="relu"):
    input_dim = input_dim or n
    dims = [input_dim] + [int(rng.integers(1, 9)) for _ in range(depth - 1)] + [n]
    layers = [DenseLayer(rng.uniform(lo, hi, (a, b)), rng.uniform(lo, hi, b), activation)
              for a, b in zip(dims[:-1], dims[1:])]
    student = StudentLayer(rng.uniform(lo, hi, (n, m)), rng.uniform(lo, hi, m))
    return StudentModel(FeatureExtractor(tuple(layers)), student)
