import hashlib
import heapq
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pstore.cid import cid_from_bytes
from pstore.dht import (
    Dht,
    Multiaddress,
    PeerInfo,
    ProviderRecord,
    ProviderStore,
    RoutingTable,
    bucket_index,
    dht_key_for,
    xor_distance,
)
from pstore.errors import MalformedMessage, PstoreError
from pstore.events import EventLoop

ids = st.binary(min_size=32, max_size=32)


def pid(r: random.Random) -> bytes:
    return r.randbytes(32)


def info(peer: bytes, i: int = 0) -> PeerInfo:
    return PeerInfo(peer, (f"/sim/{i}",))


@given(ids, ids, ids)
def test_xor_metric_laws(a, b, c):
    assert xor_distance(a, a) == 0
    assert xor_distance(a, b) == xor_distance(b, a)
    assert (xor_distance(a, b) == 0) == (a == b)
    # XOR distance satisfies the triangle inequality
    assert xor_distance(a, c) <= xor_distance(a, b) + xor_distance(b, c)


@given(ids, ids)
def test_bucket_index_is_shared_prefix_length(a, b):
    if a == b:
        with pytest.raises(ValueError):
            bucket_index(a, b)
        return
    bits_a = bin(int.from_bytes(a, "big"))[2:].zfill(256)
    bits_b = bin(int.from_bytes(b, "big"))[2:].zfill(256)
    prefix = next(i for i in range(256) if bits_a[i] != bits_b[i])
    assert bucket_index(a, b) == prefix


def test_closest_matches_brute_force_oracle():
    r = random.Random(5)
    for trial in range(1000):
        owner = pid(r)
        table = RoutingTable(owner, k=8)
        peers = [info(pid(r), i) for i in range(r.randrange(1, 60))]
        for p in peers:
            table.update(p)
        target = pid(r)
        n = r.randrange(1, 12)
        got = [p.peer for p in table.closest(target, n)]
        kept = table.peers()
        oracle = sorted((p.peer for p in kept), key=lambda x: xor_distance(x, target))[:n]
        assert got == oracle
        assert all(len(b) <= 8 for b in table.buckets)


def test_bucket_lru_and_full_bucket_drops_newcomer():
    owner = b"\0" * 32
    table = RoutingTable(owner, k=2)
    # all three share prefix length 0 with the owner (top bit set)
    a, b, c = (bytes([0x80 | i]) + b"\0" * 31 for i in (1, 2, 3))
    assert table.update(info(a)) and table.update(info(b))
    assert not table.update(info(c))
    assert c not in table
    table.update(info(a))  # refresh moves a to the tail
    assert [p.peer for p in table.buckets[0]] == [b, a]
    table.remove(b)
    assert table.update(info(c))
    assert not table.update(info(owner))


def test_provider_store_ttl_and_cap():
    s = ProviderStore(max_per_key=3)
    key = b"k" * 32
    for i in range(5):
        s.put(ProviderRecord(key, bytes([i]) * 32, ("/sim/0",), 10.0 + i), now=0)
    assert len(s.get(key, 0)) == 3
    assert {r.expires_at for r in s.get(key, 0)} == {12.0, 13.0, 14.0}
    assert len(s.get(key, 12.5)) == 2
    assert s.get(key, 100) == []
    assert not s.put(ProviderRecord(key, b"x" * 32, ("/sim/0",), 5.0), now=6.0)


def test_dht_key_needs_32_byte_digest():
    assert dht_key_for(cid_from_bytes(b"a")) == hashlib.sha256(b"a").digest()


@pytest.mark.parametrize("text,ok", [("/sim/3", True), ("/ip4/10.0.0.1/tcp/4001", True),
                                     ("/ip4/300.0.0.1/tcp/1", False), ("/dns/x", False)])
def test_multiaddress(text, ok):
    if ok:
        assert str(Multiaddress(text)) == text
    else:
        with pytest.raises(ValueError):
            Multiaddress(text)


class FakeNet:
    """Direct RPC dispatch between Dht instances with fixed latency."""

    def __init__(self, n: int, k: int, seed: int = 0):
        r = random.Random(seed)
        self.loop = EventLoop()
        self.down: set[int] = set()
        self.dhts = []
        for i in range(n):
            self.dhts.append(Dht(info(pid(r), i), self.loop, self._rpc_for(i), k=k, alpha=3))

    def _rpc_for(self, src):
        def rpc(peer, msg):
            fut = self.loop.future()
            dst = peer.sim_index
            if dst in self.down:
                self.loop.schedule(self.loop.now + 1.0, fut.set_result, None)
            else:
                self.loop.schedule(self.loop.now + 0.01, lambda: fut.set_result(self.dhts[dst].handle_rpc(msg)))
            return fut
        return rpc

    def bootstrap(self):
        for i, d in enumerate(self.dhts[1:], 1):
            d.observe(self.dhts[0].info)
            self.loop.run(d.find_node(d.info.peer))

    def oracle(self, target: bytes, k: int, exclude: int):
        t = int.from_bytes(target, "big")
        live = [d.info for i, d in enumerate(self.dhts) if i != exclude and i not in self.down]
        return [p.peer for p in heapq.nsmallest(k, live, key=lambda p: p.num ^ t)]


def test_iterative_lookup_finds_exact_k_closest():
    net = FakeNet(48, k=6, seed=2)
    net.bootstrap()
    r = random.Random(9)
    for _ in range(20):
        src = r.randrange(48)
        target = pid(r)
        got = net.loop.run(net.dhts[src].find_node(target))
        assert sorted(p.peer for p in got) == sorted(net.oracle(target, 6, src))


def test_lookup_survives_dead_peers_and_evicts_them():
    net = FakeNet(40, k=5, seed=3)
    net.bootstrap()
    net.down = {3, 7, 11, 19}
    d = net.dhts[0]
    target = pid(random.Random(1))
    got = net.loop.run(d.find_node(target))
    assert sorted(p.peer for p in got) == sorted(net.oracle(target, 5, 0))
    dead = {net.dhts[i].info.peer for i in net.down}
    assert not dead & {p.peer for p in got}
    assert set(d.stale) <= dead


def test_provide_stores_at_k_closest_and_find_providers():
    net = FakeNet(30, k=4, seed=4)
    net.bootstrap()
    key = pid(random.Random(2))
    n = net.loop.run(net.dhts[5].provide(key, ttl=100.0))
    holders = [i for i, d in enumerate(net.dhts) if d.providers.get(key, net.loop.now)]
    t = int.from_bytes(key, "big")
    expect = sorted(range(30), key=lambda i: net.dhts[i].info.num ^ t)[:4]
    assert sorted(holders) == sorted(expect)
    assert n == 4
    recs = net.loop.run(net.dhts[17].find_providers(key))
    assert [r.provider for r in recs] == [net.dhts[5].info.peer]
    net.loop.run_until(net.loop.now + 101)
    assert net.loop.run(net.dhts[17].find_providers(key)) == []


def test_empty_table_lookup_returns_nothing():
    net = FakeNet(1, k=4)
    assert net.loop.run(net.dhts[0].find_node(b"\1" * 32)) == []


def test_handle_rpc_rejects_non_requests():
    net = FakeNet(1, k=4)
    with pytest.raises(MalformedMessage):
        net.dhts[0].handle_rpc("hello")


def test_value_put_get_honours_acceptor():
    net = FakeNet(12, k=3, seed=6)
    for d in net.dhts:
        d.accept_value = lambda new, old: old is None or new > old
    net.bootstrap()
    key = pid(random.Random(3))
    net.loop.run(net.dhts[1].put_value(key, 5))
    net.loop.run(net.dhts[2].put_value(key, 3))
    vals = net.loop.run(net.dhts[9].get_values(key))
    assert vals and max(vals) == 5 and 3 not in vals


def test_bad_digest_length_rejected():
    from pstore import cid as C

    C.register_hash(0x13, "sha2-512", 64, lambda b: hashlib.sha512(b).digest())
    try:
        with pytest.raises(PstoreError) as e:
            dht_key_for(cid_from_bytes(b"a", 0x13))
        assert e.value.kind == "unsupported-digest"
    finally:
        C.unregister_hash(0x13)
