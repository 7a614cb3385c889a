import numpy as np
import pytest

from circuitkit.model import ModelConfig, build_model

SMALL = ModelConfig(vocab_size=12, context_len=8, d_model=8, n_layers=1, n_heads=2, d_ff=16,
                    seed=3)


@pytest.fixture
def small_cfg():
    return SMALL


@pytest.fixture
def small_params():
    p = build_model(SMALL)
    # non-trivial LayerNorm and bias values so masking them actually matters
    r = np.random.default_rng(11)
    for n in p.names(["layernorm", "attention", "mlp"]):
        if n.endswith("bias") or ".ln" in n or n.startswith("ln_f"):
            p.arrays[n] = p.arrays[n] + r.normal(0, 0.1, p.arrays[n].shape)
    return p


# acceptance criteria record one line each; printed again at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
