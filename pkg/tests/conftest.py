import textwrap

import pytest

TINY_INI = """
[synth]
n_samples = 240
noise_std = 0.5
seed = 3

[synth.label_dist]
kind = skewnormal
loc = 65
scale = 10
alpha = -3

[model]
channels = 4
blocks = 1
kernel_size = 5

[train]
batch_size = 32
epochs = 2

[arm.plain]
lambda = 0

[arm.dist]
lambda = 1
"""


@pytest.fixture
def tiny_config(tmp_path):
    """Write a small two-arm config whose output lands under tmp_path/run."""
    def make(extra: str = "", name: str = "tiny.ini"):
        text = textwrap.dedent(TINY_INI) + f"\n[output]\ndir = {tmp_path / 'run'}\n" + textwrap.dedent(extra)
        path = tmp_path / name
        path.write_text(text)
        return path
    return make


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results):
        ok, detail = results[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}  {detail}")
