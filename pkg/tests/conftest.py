import random

import pytest
from hypothesis import settings

from pstore.node import NodeConfig
from pstore.simnet import SimConfig, Simulator

settings.register_profile("pstore", deadline=None, max_examples=60)
settings.load_profile("pstore")


def make_sim(n: int, seed: int = 1, **node_kw) -> Simulator:
    sim = Simulator(SimConfig(seed=seed))
    sim.spawn(n, NodeConfig(**node_kw))
    return sim


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def small_net():
    return make_sim(16, seed=7, k=8)


# -- acceptance reporting ----------------------------------------------------

ACCEPTANCE: list[str] = []


class Criterion:
    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.ok = False
        self.detail = "did not complete"

    def done(self, ok: bool, detail: str) -> bool:
        self.ok, self.detail = bool(ok), detail
        return self.ok

    def line(self) -> str:
        return f"[{'PASS' if self.ok else 'FAIL'}] criterion {self.number:>2} {self.title}: {self.detail}"


@pytest.fixture
def criterion(request, capsys):
    marker = request.node.get_closest_marker("criterion")
    c = Criterion(*marker.args)
    yield c
    ACCEPTANCE.append(c.line())
    with capsys.disabled():
        print("\n" + c.line())


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
