import numpy as np
import pytest

from tbnn_aec.datasim import SyntheticCorpus
from tbnn_aec.postfilter import TBNN, TbnnConfig

FS = 48000


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_model():
    return TBNN.from_seed(TbnnConfig.preset("small"), seed=0)


@pytest.fixture(scope="session")
def tiny_cfg():
    """A narrow graph with the real bin layout, for fast structural tests."""
    return TbnnConfig(channels=8, ftlstm_freq_hidden=8, ftlstm_time_hidden=8, vad_hidden=4,
                      hbpf_conv_channels=8, hbpf_pointwise_channels=4, hbpf_gru_hidden=8)


@pytest.fixture(scope="session")
def tiny_model(tiny_cfg):
    return TBNN.from_seed(tiny_cfg, seed=3)


@pytest.fixture(scope="session")
def speech_corpus():
    return SyntheticCorpus("speech", 16, 0)


@pytest.fixture(scope="session")
def noise_corpus():
    return SyntheticCorpus("noise", 8, 0)


# ---------------------------------------------------------------------------
# Acceptance report: one line per criterion, echoed in the terminal summary
# ---------------------------------------------------------------------------

_ACCEPTANCE_LINES = []


class _Recorder:
    def __init__(self, capsys):
        self.capsys = capsys

    def __call__(self, number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        with self.capsys.disabled():
            print("\n" + line)
        return ok

    def info(self, number, detail):
        line = f"criterion {number:>2}: INFO  {detail}"
        _ACCEPTANCE_LINES.append(line)
        with self.capsys.disabled():
            print("\n" + line)


@pytest.fixture
def acceptance(capsys):
    return _Recorder(capsys)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
