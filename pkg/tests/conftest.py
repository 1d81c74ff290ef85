import numpy as np
import pytest

from loe_attack.transformer import ModelConfig, init_model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_cfg():
    return ModelConfig(num_layers=2, d_model=8, num_heads=2, d_ffn=32, vocab_size=50, max_seq_len=8)


@pytest.fixture(scope="session")
def tiny_model(tiny_cfg):
    return init_model(tiny_cfg, 0)


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(ok), detail)
    print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
