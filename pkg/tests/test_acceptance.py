"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the per-criterion
verdicts are printed inline and again in the terminal summary.
"""

import hashlib
import heapq
import random

import pytest

from pstore import dag
from pstore.cid import cid_from_bytes, cid_parse
from pstore.dht import PutValue, dht_key_for
from pstore.exchange import ExchangeMessage, MsgKind
from pstore.gateway import Gateway
from pstore.ipns import IpnsRecord
from pstore.node import NodeConfig, dag_closure
from pstore.scenario import Runner, load, parse, report_text

from conftest import make_sim

MB = 1024 * 1024
KB = 1024


def k_closest(sim, key: bytes, k: int, exclude=()):
    """Brute-force oracle: XOR-sort every live node."""
    t = int.from_bytes(key, "big")
    live = [n for n in sim.alive() if n.idx not in exclude]
    return sorted(n.idx for n in heapq.nsmallest(k, live, key=lambda n: n.dht.info.num ^ t))


def reset(node):
    node.store.clear()
    node.pins.roots.clear()
    node._recompute_pins()
    node.provided.clear()


@pytest.mark.criterion(1, "CID format")
def test_cid_format(criterion):
    r = random.Random(1)
    good = 0
    for _ in range(1000):
        data = r.randbytes(r.randrange(0, 4096))
        c = cid_from_bytes(data)
        good += (
            cid_parse(c.text) == c
            and c.text.startswith("Qm")
            and c.multihash[:2] == b"\x12\x20"
            and c.digest == hashlib.sha256(data).digest()
        )
    assert criterion.done(good == 1000, f"{good}/1000 parse back, start with Qm, multihash 0x12 0x20")


@pytest.mark.criterion(2, "round-trip fidelity")
def test_round_trip_fidelity(criterion):
    sim = make_sim(16, seed=21, k=8)
    r = random.Random(2)
    sizes = [0, 1, 262144, 262145, 4 * MB] + [r.randrange(0, 4 * MB + 1) for _ in range(95)]
    provider, retriever, honest = sim.node(1), sim.node(2), sim.node(3)

    identical = 0
    for s in sizes:
        data = r.randbytes(s)
        root = provider.add(data)
        identical += retriever.get(f"/ipfs/{root.text}") == data
        reset(provider)
        reset(retriever)

    # corrupt the first block delivered to the retriever in each transfer
    state = {"armed": False, "injected": 0}

    def corrupt_once(env):
        p = env.payload
        if state["armed"] and env.dst == retriever.idx and isinstance(p, ExchangeMessage) and p.kind == MsgKind.BLOCK:
            state["armed"] = False
            state["injected"] += 1
            flipped = bytes([p.data[0] ^ 0xFF]) + p.data[1:]
            env.payload = ExchangeMessage(p.kind, p.cid, p.priority, flipped, p.session)
        return env

    sim.faults.append(corrupt_once)
    before = sim.counters.get("corrupt_blocks", 0)
    recovered = silent = 0
    for s in sizes:
        data = r.randbytes(s)
        root = provider.add(data)
        honest.add(data)
        state["armed"] = True
        got = retriever.get(f"/ipfs/{root.text}")
        recovered += got == data
        silent += got != data
        for n in (provider, honest, retriever):
            reset(n)
    detected = sim.counters.get("corrupt_blocks", 0) - before
    ok = identical == 100 and recovered == 100 and detected == state["injected"] == 100 and silent == 0
    assert criterion.done(ok, f"{identical}/100 identical; {detected}/{state['injected']} corruptions detected, "
                              f"{recovered}/100 recovered, {silent} silent")


@pytest.mark.criterion(3, "deduplication")
def test_deduplication(criterion):
    sim = make_sim(2, seed=3, k=4)
    node = sim.node(0)
    r = random.Random(3)
    prefix = r.randbytes(512 * KB)
    f1 = prefix + r.randbytes(MB - 512 * KB)
    f2 = prefix + r.randbytes(MB - 512 * KB)
    roots = [node.add(f1), node.add(f2)]

    def leaves(root):
        return [c for c in dag_closure(root, node.store.peek) if dag.node_deserialize(node.store.peek(c)).kind == dag.Kind.LEAF]

    l1, l2 = leaves(roots[0]), leaves(roots[1])
    shared = set(l1) & set(l2)
    # oracle: count fixed-size chunks and identical aligned chunks directly
    chunks = lambda b: [b[i:i + 256 * KB] for i in range(0, len(b), 256 * KB)]
    c1, c2 = chunks(f1), chunks(f2)
    expect_shared = sum(a == b for a, b in zip(c1, c2))
    unique_leaves = {c for c in node.store.cids() if dag.node_deserialize(node.store.peek(c)).kind == dag.Kind.LEAF}
    ok = len(shared) == expect_shared == 2 and len(unique_leaves) == len(c1) + len(c2) - 2
    ok = ok and len(node.store) == (len(c1) + 1) + (len(c2) + 1) - 2
    assert criterion.done(ok, f"{len(shared)} shared leaves (oracle {expect_shared}); "
                              f"{len(unique_leaves)} unique leaves = {len(c1)}+{len(c2)}-2")


@pytest.mark.criterion(4, "DHT correctness")
def test_dht_correctness(criterion):
    sim = make_sim(64, seed=4, k=8)
    r = random.Random(4)
    exact = 0
    hops = []
    for _ in range(50):
        src = sim.node(r.randrange(64))
        target = r.randbytes(32)
        start = len(sim.hop_log)
        got = sorted(p.sim_index for p in src.iterative_find_node(target))
        hops.extend(sim.hop_log[start:])
        exact += got == k_closest(sim, target, 8, exclude={src.idx})
    mean = sum(hops) / len(hops)
    assert criterion.done(exact == 50 and mean <= 8, f"{exact}/50 exact k-closest sets, mean hops {mean:.2f} (<= 8)")


@pytest.mark.criterion(5, "provider routing")
def test_provider_routing(criterion):
    cfg = dict(k=8, reprovide=False)
    sim = make_sim(64, seed=5, **cfg)
    provider = sim.node(7)
    root = provider.add(b"single block content")
    key = dht_key_for(root)
    holders = sorted(n.idx for n in sim.alive() if n.dht.providers.get(key, sim.now))
    exact = holders == k_closest(sim, key, 8)
    r = random.Random(5)
    askers = r.sample([n for n in range(64) if n != 7], 10)
    found = sum(provider.peer_id in {p.provider for p in sim.node(a).find_providers(root)} for a in askers)
    sim.run_for(NodeConfig().provider_ttl + 1)
    empty = sum(sim.node(a).find_providers(root) == [] for a in askers)
    ok = exact and found == 10 and empty == 10
    assert criterion.done(ok, f"records at exact k-closest: {exact}; found {found}/10; "
                              f"empty after ttl {empty}/10")


@pytest.mark.criterion(6, "partition tolerance")
def test_partition_tolerance(criterion):
    sim = make_sim(64, seed=6, k=8)
    data = random.Random(6).randbytes(700 * KB)
    root = sim.node(0).add(data)
    sim.run_for(5)
    group_a = {0}
    for c in dag_closure(root, sim.node(0).store.peek):
        group_a.update(k_closest(sim, dht_key_for(c), 8))
    for n in range(64):
        if len(group_a) >= 32:
            break
        group_a.add(n)
    group_b = [n for n in range(64) if n not in group_a]
    sim.partition([sorted(group_a), group_b])

    def outcome(idx):
        try:
            return "ok" if sim.node(idx).get(f"/ipfs/{root.text}") == data else "corrupt"
        except Exception as exc:  # noqa: BLE001 - the kind is the measurement
            return getattr(exc, "kind", "error")

    a_ok = sum(outcome(i) == "ok" for i in sorted(group_a) if i != 0)
    b_fail = [outcome(i) for i in group_b]
    b_fail_ok = sum(o in ("not-found", "timeout") for o in b_fail)
    crossed = sim.metrics()["cross_partition_deliveries"]
    sim.heal()
    sim.run_for(3700)
    b_after = sum(outcome(i) == "ok" for i in group_b)
    na, nb = len(group_a) - 1, len(group_b)
    ok = a_ok == na and b_fail_ok == nb and b_after == nb and crossed == 0
    assert criterion.done(ok, f"A {a_ok}/{na} ok, B {b_fail_ok}/{nb} not-found/timeout during split, "
                              f"B {b_after}/{nb} ok after heal, {crossed} cross-partition deliveries")


@pytest.mark.criterion(7, "best-effort storage under churn")
def test_churn(criterion):
    report = Runner(load("churn.scn")).run()
    results = report["results"]
    lonely_step = next(r["step"] for r in results if r["op"] == "get")
    lonely = [r for r in results if r["step"] == lonely_step]
    probes = [r for r in results if r["op"] == "get" and r["step"] != lonely_step]
    unreachable = sum(r["outcome"] != "ok" for r in lonely)
    survived = sum(r["outcome"] == "ok" for r in probes)
    ok = report["passed"] and unreachable == 10 and len(probes) == 20 and survived == 20
    ok = ok and report["content"]["lonely"]["status"] == "unreachable"
    assert criterion.done(ok, f"unpinned after provider left: {10 - unreachable}/10 retrievals; "
                              f"pinned under churn: {survived}/{len(probes)} epoch probes")


@pytest.mark.criterion(8, "GC and pinning")
def test_gc_and_pinning(criterion):
    sim = make_sim(8, seed=8, k=4)
    cache = sim.node(0)
    cache.store.capacity_bytes = 10 * MB
    source = sim.node(1)
    r = random.Random(8)

    # LRU audit: each victim must be the least recently used evictable block
    violations = []
    real_delete = cache.store.delete

    def audited_delete(cid):
        order = [c for c in cache.store.cids() if not cache.is_pinned(c) and c not in cache._held]
        if order and order[0] != cid:
            violations.append(cid)
        return real_delete(cid)

    cache.store.delete = audited_delete
    files = []
    for _ in range(15):
        root = source.add(r.randbytes(MB))
        cache.get(f"/ipfs/{root.text}")
        files.append(set(dag_closure(root, source.store.peek)))
    cache.gc()
    used = cache.store.used
    file_of = {c: i for i, f in enumerate(files) for c in f}
    evicted_files = [file_of[c] for c in cache.eviction_log]
    order_ok = evicted_files == sorted(evicted_files) and not violations
    fetched = sum(len(source.store.peek(c)) for f in files for c in f)

    # pinned DAG under pressure
    pinned_root = cache.add(r.randbytes(3 * MB), pin=True)
    pinned = set(dag_closure(pinned_root, cache.store.peek))
    lost = 0
    for _ in range(10):
        cache.add(r.randbytes(3 * MB))
        cache.gc()
        lost += sum(c not in cache.store for c in pinned)
    evicted_pinned = len(pinned & set(cache.eviction_log))
    ok = used <= 10 * MB and fetched >= 15 * MB and order_ok and lost == 0 and evicted_pinned == 0
    ok = ok and cache.store.used <= 10 * MB
    assert criterion.done(ok, f"{fetched / MB:.1f} MB cached -> {used / MB:.2f} MB after gc, LRU order "
                              f"{'verified' if order_ok else 'VIOLATED'}; pinned blocks evicted over 10 cycles: "
                              f"{evicted_pinned}")


@pytest.mark.criterion(9, "IPNS")
def test_ipns(criterion):
    sim = make_sim(64, seed=9, k=8)
    pub = sim.node(0)
    v1, v2 = pub.add(b"version one"), pub.add(b"version two")
    name = pub.ipns_publish(f"/ipfs/{v1.text}")
    stale = pub.ipns_own
    pub.ipns_publish(f"/ipfs/{v2.text}")
    r = random.Random(9)
    resolvers = r.sample(range(1, 64), 10)
    plain = sum(sim.node(i).ipns_resolve(name).root == v2 for i in resolvers)

    holders = [i for i in range(64) if pub.peer_id in sim.node(i).dht.values]
    forged = IpnsRecord(name, "/ipfs/" + cid_from_bytes(b"evil").text, 99, pub.keys.public_bytes, b"\1" * 64,
                        sim.now + 86400)
    # over the wire the holders refuse both records
    refused = sum(
        not sim.node(i).dht.handle_rpc(PutValue(sim.node(5).info, pub.peer_id, rec)).stored
        for i in holders for rec in (forged, stale)
    )
    # most holders are compromised and serve them anyway
    bad = r.sample(holders, len(holders) * 3 // 4)
    for j, i in enumerate(bad):
        sim.node(i).dht.values[pub.peer_id] = forged if j % 2 == 0 else stale
    fresh = r.sample([i for i in range(1, 64) if i not in resolvers], 10)
    ignored = sum(sim.node(i).ipns_resolve(name).root == v2 for i in fresh)
    ok = plain == 10 and ignored == 10 and refused == 2 * len(holders)
    assert criterion.done(ok, f"v2 resolved {plain}/10; forged+stale ignored {ignored}/10 "
                              f"({len(bad)}/{len(holders)} holders poisoned)")


@pytest.mark.criterion(10, "gateway conformance")
def test_gateway_conformance(criterion):
    sim = make_sim(32, seed=10, k=8)
    r = random.Random(10)
    files = {"one.bin": r.randbytes(300 * KB), "two.txt": b"plain text\n" * 100, "three.dat": r.randbytes(1)}
    root = sim.node(3).add_directory(files)
    gw = Gateway(sim.node(30), request_timeout=5.0)
    exact = 0
    for name, data in files.items():
        resp = gw.handle_get(f"/ipfs/{root.text}/{name}")
        exact += resp.status == 200 and hashlib.sha256(resp.body).digest() == hashlib.sha256(data).digest()
    bad = gw.handle_get("/ipfs/not-base58!").status
    missing = gw.handle_get(f"/ipfs/{root.text}/absent").status
    start = sim.now
    unprovided = gw.handle_get("/ipfs/" + cid_from_bytes(b"nobody provides this").text).status
    elapsed = sim.now - start
    before = sim.exchange_messages()
    again = gw.handle_get(f"/ipfs/{root.text}/one.bin").status
    extra = sim.exchange_messages() - before
    ok = exact == 3 and bad == 400 and missing == 404 and unprovided == 504 and elapsed <= 5.0
    ok = ok and again == 200 and extra == 0
    assert criterion.done(ok, f"{exact}/3 hash-exact 200s; bad cid {bad}; missing {missing}; unprovided "
                              f"{unprovided} in {elapsed:.2f}s; cached repeat {again} with {extra} exchange msgs")


MIXED = """
version: 1
name: mixed
seed: 17
network: {drop_rate: 0.02}
node_config: {k: 6, reprovide_interval: 1800}
nodes: 24
content:
  f: {size: 300000}
actions:
  - {op: add, node: 0, content: f}
  - {op: publish, node: 0, content: f}
  - {op: get, node: random, content: f, repeat: 3}
  - {op: churn, leave_rate: 0.1, epoch: 600, epochs: 3, protect: [0], probe: {content: f, expect: ok}}
  - {op: resolve, node: random, publisher: 0, content: f}
"""


@pytest.mark.criterion(11, "determinism")
def test_determinism(criterion):
    def once(make):
        runner = make()
        report = report_text(runner.run())
        return report, runner.sim.trace_lines()

    pairs = {
        "partition.scn": [once(lambda: Runner(load("partition.scn"), trace=True)) for _ in range(2)],
        "mixed": [once(lambda: Runner(parse(MIXED), trace=True)) for _ in range(2)],
    }
    same = {k: a == b for k, (a, b) in pairs.items()}
    nonempty = all(len(a[1]) > 0 for a, _ in pairs.values())
    assert criterion.done(all(same.values()) and nonempty,
                          ", ".join(f"{k}: reports+traces {'identical' if v else 'DIFFER'}" for k, v in same.items()))
