import numpy as np
import pytest
import torch

from afss.audio import SAMPLE_RATE, Waveform

torch.set_num_threads(1)

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


def pytest_runtest_logreport(report):
    marker = getattr(report, "_criterion", None)
    if marker is None:
        return
    number, title = marker
    status = _CRITERIA.get(number, (title, None))[1]
    if report.failed:
        status = "FAIL"
    elif report.skipped and status is None:
        status = "SKIP"
    elif report.when == "call" and report.passed and status in (None, "SKIP"):
        status = "PASS"
    _CRITERIA[number] = (title, status)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result()._criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status = _CRITERIA[number]
        if status is not None:
            terminalreporter.write_line(f"AC{number:<2} {status}  {title}")


def make_tone(freq=440.0, seconds=1.0, amplitude=0.5, sample_rate=SAMPLE_RATE):
    t = np.arange(int(round(seconds * sample_rate))) / sample_rate
    return Waveform(amplitude * np.sin(2 * np.pi * freq * t), sample_rate)


@pytest.fixture
def tone():
    return make_tone()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


SMALL_FRONT_END = {"kind": "toy", "n_mels": 16, "hidden": 8}


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """16 short toy reals over 4 speakers plus one pseudo-fake each."""
    from afss.synthesis import generate_corpus
    from afss.toy import make_toy_corpus

    root = tmp_path_factory.mktemp("small_corpus")
    reals = make_toy_corpus(root, n_utterances=16, n_speakers=4, duration=0.6, seed=11)
    fakes = generate_corpus(reals, root / "fake", seed=11).records
    return reals, fakes
