import numpy as np
import pytest

from tdrg.config import Config

TOY = {
    "model.dtype": "float64",
    "model.n_cls": 8,
    "structural.c_t": 16,
    "semantic.c_g": 16,
    "structural.layers": 1,
    "structural.heads": 2,
    "structural.ffn_dim": 16,
    "structural.max_side": 4,
    "backbone.width": 4,
    "backbone.channels": 16,
}


@pytest.fixture
def toy_cfg():
    return Config(TOY)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def report_criterion():
    """Record one ``[ACn] PASS|FAIL ...`` line for the end-of-run summary."""

    def record(tag: str, passed: bool, detail: str) -> None:
        line = f"[{tag}] {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
