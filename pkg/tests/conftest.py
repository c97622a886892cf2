import time

import numpy as np
import pytest

from gridfreq.mpc import MpcConfig
from gridfreq.network import build_network
from gridfreq.scenario import load_scenario
from gridfreq.sim import run_closed_loop


def line3(controlled=(1, 2, 3), monitored=(1, 3), b=(1.0, 1.5), M=(1.0, 0.5, 2.0), E=(0.8, 0.6, 1.2)):
    """3-bus line 1 - 2 - 3."""
    nodes = [{"id": i + 1, "M": M[i], "E": E[i]} for i in range(3)]
    edges = [{"from": 1, "to": 2, "b": b[0]}, {"from": 2, "to": 3, "b": b[1]}]
    return build_network(nodes, edges, controlled, monitored)


def ring4():
    nodes = [{"id": i, "M": m, "E": e} for i, m, e in [(1, 1.0, 0.5), (2, 0.4, 1.0), (3, 1.5, 0.7), (4, 0.8, 0.9)]]
    edges = [{"from": a, "to": c, "b": b} for a, c, b in [(1, 2, 2.0), (2, 3, 1.0), (3, 4, 1.5), (4, 1, 0.7)]]
    return build_network(nodes, edges, [1, 2, 4], [1, 4])


@pytest.fixture
def net3():
    return line3()


@pytest.fixture
def cfg3():
    return MpcConfig(weights={1: 1.0, 2: 2.0, 3: 4.0}, horizon=0.1, step=0.02, penalty_d=100.0)


@pytest.fixture(scope="session")
def ieee():
    return load_scenario()


class _Runs:
    """Lazily computed, shared closed-loop runs of the bundled scenario."""

    def __init__(self, loaded):
        self.loaded = loaded
        self._cache = {}
        self.seconds = {}

    def get(self, name):
        if name not in self._cache:
            ls = self.loaded
            variants = {
                "off": lambda: ls.with_mode("off"),
                "top": lambda: ls.with_mode("top-only"),
                "full": lambda: ls,
                "d10": lambda: ls.with_penalties([10.0, 100.0, 100.0]),
                "late": lambda: ls.with_mode("full", 30.0),
            }
            v = variants[name]()
            t0 = time.perf_counter()
            self._cache[name] = run_closed_loop(v.net, v.scenario)
            self.seconds[name] = time.perf_counter() - t0
        return self._cache[name]


@pytest.fixture(scope="session")
def ieee_runs(ieee):
    return _Runs(ieee)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, text = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {text}")
