"""Declarative scenario scripts for the simulator.

A scenario is a YAML mapping::

    version: 1
    name: partition            # optional, echoed in the report
    seed: 7                    # simulator seed (CLI --seed overrides)
    network:                   # SimConfig fields other than seed/trace
      latency_min: 0.01
      latency_max: 0.1
      drop_rate: 0.0
      bootstrap_count: 4
    node_config: {k: 8}        # NodeConfig fields applied to every node
    nodes: 64                  # nodes spawned (and settled) before the actions
    content:                   # named payloads, generated from (seed, name)
      f1: {size: 600000}
      site: {files: {index.html: 2000, logo.png: 9000}}   # a directory
    actions:                   # executed in order
      - {op: add, node: 0, content: f1, pin: false}
      - {op: get, node: random, content: f1, expect: ok, repeat: 10}

Node references are an index, ``random`` (a live node), ``random-without``
(a live node not holding the content's root block) or ``random-in:<g>``
(such a node inside group ``g`` of the active partition).
``expect`` is ``ok`` or ``fail``. Supported ``op`` values:

``add``  ``node, content, pin``
``get``  ``node, content | path, segments, expect, repeat, timeout``
``pin`` / ``unpin``  ``node, content``
``gc``  ``node``
``leave``  ``node | nodes``
``run``  ``for`` seconds, or ``until`` absolute time
``partition``  ``groups`` (lists of indices or ``"a-b"`` ranges), or
               ``around: <content>, size: N`` to put the providers and the
               record holders of every block in the first group
``heal``
``churn``  ``leave_rate, epoch, epochs, protect, rejoin, probe: {content, expect}``
``publish``  ``node, content`` (IPNS); ``resolve``  ``node, publisher, content, expect``
``expect_replicas``  ``content, min, max``
``expect_providers``  ``node, content, min, max``

Every action may carry ``at`` (absolute simulated time to wait for first).
The report is a JSON document; for a given script and seed it is
byte-identical across runs.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from .cid import Cid
from .dht import dht_key_for
from .errors import PstoreError, ScenarioError
from .node import NodeConfig, dag_closure
from .simnet import SimConfig, Simulator

BUNDLED_DIR = Path(__file__).parent / "scenarios"

_OPS = {
    "add", "get", "pin", "unpin", "gc", "leave", "run", "partition", "heal", "churn",
    "publish", "resolve", "expect_replicas", "expect_providers",
}


@dataclass
class Scenario:
    seed: int
    nodes: int
    actions: list[dict]
    network: dict = field(default_factory=dict)
    node_config: dict = field(default_factory=dict)
    content: dict = field(default_factory=dict)
    name: str = "scenario"


def locate(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    for candidate in (BUNDLED_DIR / p.name, BUNDLED_DIR / f"{p.name}.scn"):
        if candidate.exists():
            return candidate
    raise ScenarioError(f"scenario file not found: {path}")


def parse(text: str, name: str = "scenario") -> Scenario:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"YAML error: {exc}") from None
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a mapping")
    if doc.get("version", 1) != 1:
        raise ScenarioError(f"unsupported scenario version {doc.get('version')!r}")
    unknown = set(doc) - {"version", "name", "seed", "network", "node_config", "nodes", "content", "actions"}
    if unknown:
        raise ScenarioError(f"unknown top-level keys: {sorted(unknown)}")
    actions = doc.get("actions") or []
    if not isinstance(actions, list):
        raise ScenarioError("actions must be a list")
    for i, a in enumerate(actions):
        if not isinstance(a, dict) or a.get("op") not in _OPS:
            raise ScenarioError(f"action {i}: unknown or missing op in {a!r}")
    content = doc.get("content") or {}
    for cname, entry in content.items():
        if not isinstance(entry, dict) or not ({"size"} <= set(entry) or {"files"} <= set(entry)):
            raise ScenarioError(f"content {cname!r} needs 'size' or 'files'")
    network = doc.get("network") or {}
    allowed = {f.name for f in fields(SimConfig)} - {"seed", "trace"}
    if set(network) - allowed:
        raise ScenarioError(f"unknown network keys: {sorted(set(network) - allowed)}")
    try:
        NodeConfig.from_dict(doc.get("node_config") or {})
        SimConfig(**network)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc)) from None
    nodes = doc.get("nodes", 0)
    if not isinstance(nodes, int) or nodes < 1:
        raise ScenarioError("nodes must be a positive integer")
    return Scenario(
        seed=int(doc.get("seed", 0)),
        nodes=nodes,
        actions=actions,
        network=network,
        node_config=doc.get("node_config") or {},
        content=content,
        name=str(doc.get("name", name)),
    )


def load(path: str) -> Scenario:
    p = locate(path)
    return parse(p.read_text(), name=p.stem)


def _expand_group(entry) -> list[int]:
    out: list[int] = []
    for item in entry:
        if isinstance(item, str) and "-" in item:
            lo, hi = item.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(item))
    return out


class Runner:
    def __init__(self, scenario: Scenario, seed: Optional[int] = None, trace: bool = False):
        self.sc = scenario
        self.seed = scenario.seed if seed is None else seed
        self.sim = Simulator(SimConfig(seed=self.seed, trace=trace, **scenario.network))
        self.node_config = NodeConfig.from_dict(scenario.node_config)
        self.roots: dict[str, Cid] = {}
        self.payloads: dict[str, Any] = {}
        self.results: list[dict] = []
        self.reachability: dict[str, str] = {}

    # content ----------------------------------------------------------------

    def payload(self, name: str):
        if name not in self.payloads:
            entry = self.sc.content.get(name)
            if entry is None:
                raise ScenarioError(f"unknown content {name!r}")
            if "files" in entry:
                self.payloads[name] = {
                    fname: random.Random(f"{self.seed}:{name}/{fname}").randbytes(int(size))
                    for fname, size in entry["files"].items()
                }
            else:
                self.payloads[name] = random.Random(f"{self.seed}:{name}").randbytes(int(entry["size"]))
        return self.payloads[name]

    def root(self, name: str) -> Cid:
        if name not in self.roots:
            raise ScenarioError(f"content {name!r} used before it was added")
        return self.roots[name]

    # node references ---------------------------------------------------------

    def pick(self, ref, content: Optional[str] = None, exclude=()) -> int:
        if isinstance(ref, int):
            return ref
        live = [n.idx for n in self.sim.alive() if n.idx not in exclude]
        if isinstance(ref, str) and ref.startswith("random-in:"):
            part = self.sim.partition_state
            if part is None:
                raise ScenarioError(f"{ref!r} used without an active partition")
            group = part.groups[int(ref.split(":", 1)[1])]
            live = [i for i in live if i in group]
            if content is not None and content in self.roots:
                root = self.roots[content]
                live = [i for i in live if root not in self.sim.node(i).store] or live
        elif ref == "random-without" and content is not None and content in self.roots:
            root = self.roots[content]
            without = [i for i in live if root not in self.sim.node(i).store]
            live = without or live
        elif ref != "random":
            raise ScenarioError(f"bad node reference {ref!r}")
        if not live:
            raise ScenarioError("no live node to pick")
        return self.sim.rng.choice(live)

    # actions -----------------------------------------------------------------

    def _record(self, i: int, action: dict, outcome: str, ok: bool, **extra) -> None:
        self.results.append({"step": i, "op": action["op"], "outcome": outcome, "ok": ok, **extra})

    def _check(self, expect: Optional[str], outcome: str) -> bool:
        if expect is None:
            return True
        return (outcome == "ok") == (expect == "ok")

    def _get_once(self, i: int, a: dict, exclude=()) -> bool:
        content = a.get("content")
        idx = self.pick(a.get("node", "random-without"), content, exclude)
        node = self.sim.node(idx)
        if content is not None:
            path = "/ipfs/" + self.root(content).text + "".join("/" + s for s in a.get("segments", []))
        else:
            path = a["path"]
        try:
            data = node.get(path, timeout=a.get("timeout"))
            expected = self.payload(content) if content is not None else None
            if isinstance(expected, dict):
                expected = expected.get(a["segments"][-1]) if a.get("segments") else None
            outcome = "ok" if expected is None or data == expected else "corrupt"
        except PstoreError as exc:
            outcome = exc.kind
        ok = self._check(a.get("expect"), outcome) and outcome != "corrupt"
        if content is not None:
            self.reachability[content] = "reachable" if outcome == "ok" else "unreachable"
        self._record(i, a, outcome, ok, node=idx)
        return ok

    def _around(self, content: str, size: int) -> list[int]:
        root = self.root(content)
        holders = [n.idx for n in self.sim.alive() if root in n.store]
        group = dict.fromkeys(holders)
        sample = self.sim.node(holders[0]) if holders else None
        cids = dag_closure(root, sample.store.peek) if sample else [root]
        alive = self.sim.alive()
        for c in cids:
            t = int.from_bytes(dht_key_for(c), "big")
            for n in heapq.nsmallest(self.node_config.k, alive, key=lambda n: n.dht.info.num ^ t):
                group.setdefault(n.idx, None)
        for n in alive:
            if len(group) >= size:
                break
            group.setdefault(n.idx, None)
        return sorted(group)

    def run_action(self, i: int, a: dict) -> None:
        sim = self.sim
        if "at" in a and a["at"] > sim.now:
            sim.run_until(float(a["at"]))
        op = a["op"]
        if op == "add":
            idx = self.pick(a.get("node", 0))
            payload = self.payload(a["content"])
            node = sim.node(idx)
            if isinstance(payload, dict):
                root = node.add_directory(payload, pin=bool(a.get("pin", False)))
            else:
                root = node.add(payload, pin=bool(a.get("pin", False)))
            self.roots[a["content"]] = root
            self._record(i, a, "ok", True, node=idx, cid=root.text)
        elif op == "get":
            for _ in range(int(a.get("repeat", 1))):
                self._get_once(i, a)
        elif op in ("pin", "unpin"):
            idx = self.pick(a["node"])
            try:
                if op == "pin":
                    sim.node(idx).pin(self.root(a["content"]))
                else:
                    sim.node(idx).unpin(self.root(a["content"]))
                outcome = "ok"
            except PstoreError as exc:
                outcome = exc.kind
            self._record(i, a, outcome, self._check(a.get("expect", "ok"), outcome), node=idx)
        elif op == "gc":
            idx = self.pick(a["node"])
            evicted = sim.node(idx).gc()
            self._record(i, a, "ok", True, node=idx, evicted=len(evicted))
        elif op == "leave":
            targets = a.get("nodes", [a.get("node")])
            for t in _expand_group(targets):
                sim.leave(t)
            self._record(i, a, "ok", True)
        elif op == "run":
            if "until" in a:
                sim.run_until(float(a["until"]))
            else:
                sim.run_for(float(a["for"]))
            self._record(i, a, "ok", True, time=round(sim.now, 6))
        elif op == "partition":
            if "around" in a:
                group_a = self._around(a["around"], int(a.get("size", len(sim.nodes) // 2)))
                rest = [n.idx for n in sim.nodes if n.idx not in set(group_a)]
                groups = [group_a, rest]
            else:
                groups = [_expand_group(g) for g in a["groups"]]
            sim.partition(groups)
            self._record(i, a, "ok", True, groups=[sorted(g) for g in groups])
        elif op == "heal":
            sim.heal()
            if a.get("settle", 0):
                sim.run_for(float(a["settle"]))
            self._record(i, a, "ok", True)
        elif op == "churn":
            protect = _expand_group(a.get("protect", []))
            epoch = float(a.get("epoch", 3600))
            sim.churn(float(a["leave_rate"]), epoch, protect=protect, rejoin=bool(a.get("rejoin", True)),
                      config=self.node_config)
            probe = a.get("probe")
            for _e in range(int(a.get("epochs", 1))):
                sim.run_for(epoch)
                # let the epoch's joiners finish bootstrapping
                sim.run_for(float(a.get("settle", 60)))
                if probe:
                    self._get_once(i, {"op": "get", "node": "random-without", **probe}, exclude=protect)
            sim.stop_churn()
            self._record(i, a, "ok", True, departures=sim.counters.get("churn_departures", 0))
        elif op == "publish":
            idx = self.pick(a["node"])
            name = sim.node(idx).ipns_publish("/ipfs/" + self.root(a["content"]).text)
            self._record(i, a, "ok", True, node=idx, name=name)
        elif op == "resolve":
            idx = self.pick(a.get("node", "random"))
            name = sim.node(int(a["publisher"])).name
            try:
                path = sim.node(idx).ipns_resolve(name)
                outcome = "ok" if "content" not in a or path.root == self.root(a["content"]) else "stale"
            except PstoreError as exc:
                outcome = exc.kind
            self._record(i, a, outcome, self._check(a.get("expect"), outcome), node=idx)
        elif op == "expect_replicas":
            n = sim.replicas(self.root(a["content"]))
            ok = a.get("min", 0) <= n <= a.get("max", n)
            self._record(i, a, str(n), ok)
        elif op == "expect_providers":
            idx = self.pick(a.get("node", "random"))
            try:
                n = len(sim.node(idx).find_providers(self.root(a["content"])))
            except PstoreError as exc:
                n = -1
            ok = a.get("min", 0) <= n <= a.get("max", max(n, 0))
            self._record(i, a, str(n), ok, node=idx)

    def run(self) -> dict:
        self.sim.spawn(self.sc.nodes, self.node_config)
        for i, a in enumerate(self.sc.actions):
            self.run_action(i, a)
        failed = [r for r in self.results if not r["ok"]]
        return {
            "scenario": self.sc.name,
            "seed": self.seed,
            "passed": not failed,
            "failed_steps": [r["step"] for r in failed],
            "content": {
                name: {"cid": cid.text, "status": self.reachability.get(name, "unprobed")}
                for name, cid in sorted(self.roots.items())
            },
            "results": self.results,
            "metrics": self.sim.metrics(),
        }


def run_scenario(path: str, seed: Optional[int] = None, trace: bool = False) -> tuple[dict, Simulator]:
    runner = Runner(load(path), seed=seed, trace=trace)
    return runner.run(), runner.sim


def report_text(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
