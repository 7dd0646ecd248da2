"""Shared fixtures and the acceptance-summary reporter.

Each test in test_acceptance.py tags itself with record_property
("criterion", ...); the terminal summary prints one PASS/FAIL line per
criterion so the gate can be read off the bottom of the run.
"""

import numpy as np
import pytest

from binscene.decoder import fit_bimagls
from binscene.hrtf import delta_hrtf_set


@pytest.fixture(scope="session")
def tiny_hset():
    # identical unit impulses in all 50 directions; fits exactly at any order
    return delta_hrtf_set(fs=8000, ir_len=32)


@pytest.fixture(scope="session")
def tiny_decoder(tiny_hset):
    return fit_bimagls(tiny_hset, 1, fc=3000.0, nfft=512, filter_len=64)


@pytest.fixture
def audio_stock(tmp_path):
    """Write a small speech/noise wav tree; returns (dir, speech, noise)."""
    from binscene.audioio import write_wav

    fs = 8000
    rng = np.random.default_rng(99)
    speech = {}
    for split, names in [("tr", ["al-1", "al-2", "bo-1", "cy-1"]),
                         ("cv", ["di-1", "ed-1"])]:
        speech[split] = []
        for name in names:
            p = tmp_path / f"speech_{name}.wav"
            write_wav(str(p), fs, rng.standard_normal(int(4.6 * fs)) * 0.05)
            speech[split].append(str(p))
    noise = {}
    for split, count in [("tr", 2), ("cv", 1)]:
        noise[split] = []
        for k in range(count):
            p = tmp_path / f"noise_{split}{k}.wav"
            write_wav(str(p), fs,
                      rng.standard_normal((int(3.0 * fs), 2)) * 0.05)
            noise[split].append(str(p))
    return tmp_path, speech, noise


_ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when != "call":
        return
    props = dict(rep.user_properties)
    if "criterion" in props:
        num, name = props["criterion"]
        _ACCEPTANCE[num] = (name, rep.passed, props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        name, passed, detail = _ACCEPTANCE[num]
        line = f"criterion {num:2d} ({name}): {'PASS' if passed else 'FAIL'}"
        if detail:
            line += f" -- {detail}"
        terminalreporter.write_line(line)
