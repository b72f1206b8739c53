import pytest

from pstore.errors import ScenarioError
from pstore.scenario import BUNDLED_DIR, Runner, load, locate, parse, report_text

BASE = """
version: 1
seed: 3
nodes: 16
node_config: {k: 6}
content:
  f: {size: 40000}
  site: {files: {index.html: 300, app.js: 5000}}
actions:
"""


def run(actions: str, seed=None, trace=False):
    runner = Runner(parse(BASE + actions), seed=seed, trace=trace)
    return runner.run(), runner


@pytest.mark.parametrize("text", [
    "- 1", "{}", "version: 2\nnodes: 2", "nodes: 0", "nodes: 2\nbogus: 1",
    "nodes: 2\nactions: [{op: nope}]", "nodes: 2\nnode_config: {warp: 9}", "nodes: 2\nnetwork: {drop_rate: 2}",
    "nodes: 2\ncontent: {x: {}}", "nodes: [unclosed",
])
def test_parse_errors(text):
    with pytest.raises(ScenarioError):
        parse(text)


def test_bundled_scenarios_parse():
    names = sorted(p.name for p in BUNDLED_DIR.glob("*.scn"))
    assert {"partition.scn", "churn.scn"} <= set(names)
    for n in names:
        load(n)


def test_add_get_directory_and_segments():
    report, _ = run("""
  - {op: add, node: 0, content: site}
  - {op: get, node: 5, content: site, segments: [app.js], expect: ok}
  - {op: get, node: random-without, content: site, segments: [missing], expect: fail}
""")
    assert report["passed"], report["results"]
    assert report["results"][2]["outcome"] == "segment-not-found"


def test_timed_actions_and_ranges():
    report, runner = run("""
  - {op: add, node: 0, content: f}
  - {op: leave, nodes: ["10-12", 14]}
  - {op: run, until: 50}
  - {op: get, node: 3, content: f, at: 100, expect: ok}
""")
    assert report["passed"]
    assert runner.sim.now >= 100
    assert [n.idx for n in runner.sim.nodes if not n.alive] == [10, 11, 12, 14]


def test_explicit_partition_and_heal():
    report, runner = run("""
  - {op: add, node: 0, content: f}
  - {op: partition, groups: [["0-7"], ["8-15"]]}
  - {op: expect_replicas, content: f, min: 1, max: 1}
  - {op: heal}
""")
    assert report["passed"]
    assert report["metrics"]["cross_partition_deliveries"] == 0


def test_ipns_and_providers_ops():
    report, _ = run("""
  - {op: add, node: 0, content: f}
  - {op: publish, node: 0, content: f}
  - {op: resolve, node: 9, publisher: 0, content: f, expect: ok}
  - {op: expect_providers, node: 4, content: f, min: 1}
  - {op: pin, node: 6, content: f}
  - {op: gc, node: 6}
  - {op: unpin, node: 6, content: f}
""")
    assert report["passed"], report["results"]


def test_report_marks_failed_expectation():
    report, _ = run("""
  - {op: add, node: 0, content: f}
  - {op: expect_replicas, content: f, min: 3}
""")
    assert not report["passed"] and report["failed_steps"] == [1]


def test_same_seed_byte_identical_report_and_trace():
    a, ra = run("  - {op: add, node: 0, content: f}\n  - {op: get, node: random, content: f, repeat: 3}\n", trace=True)
    b, rb = run("  - {op: add, node: 0, content: f}\n  - {op: get, node: random, content: f, repeat: 3}\n", trace=True)
    assert report_text(a) == report_text(b)
    assert ra.sim.trace_lines() == rb.sim.trace_lines()
    c, _ = run("  - {op: add, node: 0, content: f}\n", seed=99)
    assert c["seed"] == 99


def test_bundled_partition_passes():
    report = Runner(load("partition.scn")).run()
    assert report["passed"]
    assert report["content"]["f1"]["status"] == "reachable"
    assert report["metrics"]["cross_partition_deliveries"] == 0


def test_locate_bundled_by_short_name():
    assert locate("partition").name == "partition.scn"
    assert locate("churn.scn") == locate("churn")
