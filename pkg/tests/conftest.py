import numpy as np
import pytest

from procseg.config import RunConfig
from procseg.dataio import SynthConfig

TINY = RunConfig(L=16, D=4, H=3, anchor_min_len=3, anchor_interval=2, anchor_count=3,
                 h=2, w=4, U=5, seed=1)

DESK_RUN = RunConfig(L=64, D=16, H=16, anchor_min_len=3, anchor_interval=2, anchor_count=8,
                     h=8, w=4, U=32, learning_rate=3e-3, epochs=25, seed=0)

DESK_SYNTH = SynthConfig(num_videos=260, split_sizes=(200, 30, 30), L=64, D=16, num_step_prototypes=8,
                         num_recipes=4, min_segments=3, max_segments=6, min_segment_len=3,
                         max_segment_len=10, seed=0)

SMALL_SYNTH = SynthConfig(num_videos=30, split_sizes=(20, 5, 5), L=64, D=16, num_step_prototypes=8,
                          num_recipes=4, min_segments=3, max_segments=6, min_segment_len=3,
                          max_segment_len=10, seed=0)


@pytest.fixture
def tiny_cfg():
    return TINY


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            if "test_acceptance.py::test_criterion" not in getattr(rep, "nodeid", "") or rep.when != "call":
                continue
            detail = dict(rep.user_properties).get("detail", "")
            name = rep.nodeid.split("::")[-1].removeprefix("test_")
            lines.append((name, f"{'PASS' if rep.passed else 'FAIL'}  {name}  {detail}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
