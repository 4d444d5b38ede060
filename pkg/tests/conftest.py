import numpy as np
import pytest

from afibshift.afib_model import ArchConfig, ConvSpec, DenseSpec


def tiny_arch(length=20, channels=2, k=3, pool=None, dense=(4,)):
    convs = (ConvSpec(channels, k, pool is not None, pool or 1), ConvSpec(channels, k))
    return ArchConfig(input_length=length, conv_layers=convs,
                      dense_layers=tuple(DenseSpec(u) for u in dense))


def desk_arch(length=600, channels=16, k=7):
    return ArchConfig(
        input_length=length,
        conv_layers=(ConvSpec(channels, k, True, 5), ConvSpec(channels, k, True, 5),
                     ConvSpec(channels, k), ConvSpec(channels, k)),
        dense_layers=(DenseSpec(64), DenseSpec(4)),
    )


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
