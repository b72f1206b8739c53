"""Kademlia-style routing and provider records.

Identifiers are 32-byte strings compared with the XOR metric. The routing
table keeps one k-bucket per shared-prefix length with the owner; buckets are
least-recently-seen first and drop newcomers when full. Iterative lookups are
simulator processes built on an ``rpc(peer_info, message) -> Future`` callable
whose future resolves to the reply, or ``None`` when the peer did not answer.
"""

from __future__ import annotations

import hashlib
import heapq
import logging
import re
from dataclasses import dataclass, field, replace
from typing import Callable, Generator, Optional

from .cid import Cid
from .errors import MalformedMessage, PstoreError

log = logging.getLogger(__name__)

ID_BITS = 256
ID_BYTES = ID_BITS // 8
K = 20
ALPHA = 3
MAX_PROVIDERS_PER_KEY = 64


def xor_distance(a: bytes | int, b: bytes | int) -> int:
    if isinstance(a, (bytes, bytearray)):
        a = int.from_bytes(a, "big")
    if isinstance(b, (bytes, bytearray)):
        b = int.from_bytes(b, "big")
    return a ^ b


def peer_id_from_public_key(public_key: bytes) -> bytes:
    return hashlib.sha256(public_key).digest()


def dht_key_for(cid: Cid) -> bytes:
    digest = cid.digest
    if len(digest) != ID_BYTES:
        raise PstoreError(f"{cid} has a {len(digest)}-byte digest; DHT keys need 32", kind="unsupported-digest")
    return digest


def bucket_index(owner: bytes | int, peer: bytes | int) -> int:
    """Shared-prefix length of the two identifiers (0..255)."""
    d = xor_distance(owner, peer)
    if d == 0:
        raise ValueError("a peer has no bucket relative to itself")
    return ID_BITS - d.bit_length()


_SIM_ADDR = re.compile(r"^/sim/(\d+)$")
_IP4_ADDR = re.compile(r"^/ip4/(\d{1,3}(?:\.\d{1,3}){3})/tcp/(\d{1,5})$")


@dataclass(frozen=True)
class Multiaddress:
    text: str

    def __post_init__(self):
        m = _IP4_ADDR.match(self.text)
        if m:
            if any(int(o) > 255 for o in m.group(1).split(".")) or int(m.group(2)) > 65535:
                raise ValueError(f"bad multiaddress {self.text!r}")
        elif not _SIM_ADDR.match(self.text):
            raise ValueError(f"unsupported multiaddress {self.text!r}")

    @property
    def scheme(self) -> str:
        return "sim" if self.text.startswith("/sim/") else "ip4"

    @property
    def sim_index(self) -> Optional[int]:
        m = _SIM_ADDR.match(self.text)
        return int(m.group(1)) if m else None

    def __str__(self) -> str:
        return self.text


@dataclass(frozen=True)
class PeerInfo:
    peer: bytes
    addresses: tuple[str, ...]
    last_seen: float = 0.0
    num: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.peer) != ID_BYTES:
            raise ValueError("peer ids are 32 bytes")
        if not self.addresses:
            raise ValueError("PeerInfo needs at least one address")
        object.__setattr__(self, "num", int.from_bytes(self.peer, "big"))

    def seen(self, when: float) -> "PeerInfo":
        return replace(self, last_seen=when)

    @property
    def sim_index(self) -> Optional[int]:
        for a in self.addresses:
            idx = Multiaddress(a).sim_index
            if idx is not None:
                return idx
        return None


class RoutingTable:
    """256 k-buckets over XOR distance from ``owner``."""

    def __init__(self, owner: bytes, k: int = K):
        self.owner = owner
        self._owner_num = int.from_bytes(owner, "big")
        self.k = k
        self.buckets: list[list[PeerInfo]] = [[] for _ in range(ID_BITS)]

    def __len__(self) -> int:
        return sum(len(b) for b in self.buckets)

    def __contains__(self, peer: bytes) -> bool:
        return self.get(peer) is not None

    def get(self, peer: bytes) -> Optional[PeerInfo]:
        for p in self.buckets[bucket_index(self._owner_num, peer)]:
            if p.peer == peer:
                return p
        return None

    def peers(self) -> list[PeerInfo]:
        return [p for b in self.buckets for p in b]

    def update(self, seen: PeerInfo) -> bool:
        """Record contact with ``seen``; returns False when a full bucket rejected it."""
        if seen.peer == self.owner:
            return False
        bucket = self.buckets[bucket_index(self._owner_num, seen.num)]
        for i, p in enumerate(bucket):
            if p.peer == seen.peer:
                del bucket[i]
                bucket.append(seen)
                return True
        if len(bucket) < self.k:
            bucket.append(seen)
            return True
        return False

    def remove(self, peer: bytes) -> bool:
        if peer == self.owner:
            return False
        bucket = self.buckets[bucket_index(self._owner_num, peer)]
        for i, p in enumerate(bucket):
            if p.peer == peer:
                del bucket[i]
                return True
        return False

    def closest(self, target: bytes, n: int) -> list[PeerInfo]:
        if n < 1:
            raise ValueError("n must be >= 1")
        t = int.from_bytes(target, "big")
        return heapq.nsmallest(n, self.peers(), key=lambda p: p.num ^ t)


def closest_peers(table: RoutingTable, target: bytes, n: int) -> list[PeerInfo]:
    return table.closest(target, n)


def routing_update(table: RoutingTable, seen: PeerInfo) -> RoutingTable:
    table.update(seen)
    return table


# -- provider records -------------------------------------------------------

@dataclass(frozen=True)
class ProviderRecord:
    key: bytes
    provider: bytes
    addresses: tuple[str, ...]
    expires_at: float


class ProviderStore:
    """Per-key provider records; (key, provider) is the record identity."""

    def __init__(self, max_per_key: int = MAX_PROVIDERS_PER_KEY):
        self.max_per_key = max_per_key
        self._records: dict[bytes, dict[bytes, ProviderRecord]] = {}

    def put(self, record: ProviderRecord, now: float) -> bool:
        if record.expires_at <= now:
            return False
        per_key = self._records.setdefault(record.key, {})
        per_key.pop(record.provider, None)
        per_key[record.provider] = record
        while len(per_key) > self.max_per_key:
            victim = min(per_key.values(), key=lambda r: r.expires_at)
            del per_key[victim.provider]
        return True

    def get(self, key: bytes, now: float) -> list[ProviderRecord]:
        per_key = self._records.get(key)
        if not per_key:
            return []
        live = [r for r in per_key.values() if r.expires_at > now]
        if len(live) != len(per_key):
            for r in list(per_key.values()):
                if r.expires_at <= now:
                    del per_key[r.provider]
            if not per_key:
                del self._records[key]
        return live

    def purge(self, now: float) -> int:
        dropped = 0
        for key in list(self._records):
            before = len(self._records[key])
            dropped += before - len(self.get(key, now))
        return dropped

    def keys(self) -> list[bytes]:
        return list(self._records)

    def __len__(self) -> int:
        return sum(len(v) for v in self._records.values())


# -- RPC messages ----------------------------------------------------------

@dataclass(frozen=True)
class FindNode:
    sender: PeerInfo
    target: bytes


@dataclass(frozen=True)
class GetProviders:
    sender: PeerInfo
    key: bytes


@dataclass(frozen=True)
class PutProvider:
    sender: PeerInfo
    record: ProviderRecord


@dataclass(frozen=True)
class Ping:
    sender: PeerInfo
    nonce: int = 0


@dataclass(frozen=True)
class PutValue:
    """Store a signed name record at ``key``."""

    sender: PeerInfo
    key: bytes
    record: object


@dataclass(frozen=True)
class GetValue:
    sender: PeerInfo
    key: bytes


@dataclass(frozen=True)
class Nodes:
    peers: tuple[PeerInfo, ...]


@dataclass(frozen=True)
class Providers:
    records: tuple[ProviderRecord, ...]
    peers: tuple[PeerInfo, ...]


@dataclass(frozen=True)
class Ack:
    stored: bool


@dataclass(frozen=True)
class Pong:
    nonce: int


@dataclass(frozen=True)
class Value:
    record: object
    peers: tuple[PeerInfo, ...]


REQUESTS = (FindNode, GetProviders, PutProvider, Ping, PutValue, GetValue)


@dataclass
class LookupResult:
    closest: list[PeerInfo]
    records: list[ProviderRecord]
    values: list
    hops: int


class Dht:
    """One peer's DHT state plus request handling and iterative lookups.

    ``rpc`` sends a request and returns a future resolving to the reply or
    ``None``; ``loop`` supplies the clock and process helpers; ``accept_value``
    decides whether an incoming name record should replace the stored one.
    """

    def __init__(
        self,
        info: PeerInfo,
        loop,
        rpc: Callable[[PeerInfo, object], object],
        k: int = K,
        alpha: int = ALPHA,
        accept_value: Optional[Callable[[object, Optional[object]], bool]] = None,
        max_providers_per_key: int = MAX_PROVIDERS_PER_KEY,
        hop_log: Optional[list] = None,
    ):
        self.info = info
        self.loop = loop
        self.rpc = rpc
        self.k = k
        self.alpha = alpha
        self.table = RoutingTable(info.peer, k)
        self.providers = ProviderStore(max_providers_per_key)
        self.values: dict[bytes, object] = {}
        self.accept_value = accept_value or (lambda new, old: True)
        self.hop_log: list[int] = hop_log if hop_log is not None else []
        # peers evicted after failing to answer; retried by routing refresh
        self.stale: dict[bytes, PeerInfo] = {}
        self.max_stale = 4 * k

    @property
    def now(self) -> float:
        return self.loop.now

    def observe(self, peer: PeerInfo) -> None:
        if peer.peer != self.info.peer:
            self.table.update(peer.seen(self.now))
            self.stale.pop(peer.peer, None)

    def forget(self, peer: PeerInfo) -> None:
        """Evict a peer that failed to answer."""
        if self.table.remove(peer.peer):
            self.stale.pop(peer.peer, None)
            self.stale[peer.peer] = peer
            while len(self.stale) > self.max_stale:
                del self.stale[next(iter(self.stale))]

    def handle_rpc(self, message):
        if not isinstance(message, REQUESTS) or not isinstance(getattr(message, "sender", None), PeerInfo):
            raise MalformedMessage(f"unexpected DHT message {type(message).__name__}")
        self.observe(message.sender)
        if isinstance(message, FindNode):
            return Nodes(tuple(self.table.closest(message.target, self.k)))
        if isinstance(message, GetProviders):
            return Providers(
                tuple(self.providers.get(message.key, self.now)),
                tuple(self.table.closest(message.key, self.k)),
            )
        if isinstance(message, PutProvider):
            return Ack(self.providers.put(message.record, self.now))
        if isinstance(message, Ping):
            return Pong(message.nonce)
        if isinstance(message, PutValue):
            return Ack(self.store_value(message.key, message.record))
        # GetValue
        return Value(self.values.get(message.key), tuple(self.table.closest(message.key, self.k)))

    def store_value(self, key: bytes, record) -> bool:
        if self.accept_value(record, self.values.get(key)):
            self.values[key] = record
            return True
        return False

    def _request_for(self, mode: str, target: bytes):
        if mode == "node":
            return FindNode(self.info, target)
        if mode == "providers":
            return GetProviders(self.info, target)
        if mode == "value":
            return GetValue(self.info, target)
        raise ValueError(mode)

    def lookup(self, target: bytes, mode: str = "node", stop_after: Optional[int] = None) -> Generator:
        """Iterative Kademlia lookup (process).

        Each round queries the ``alpha`` closest unqueried candidates among
        the current k best; a round that fails to improve the closest distance
        widens to every unqueried peer of the k best. Terminates when the k
        best have all answered. Hop count is the number of rounds.
        ``stop_after`` ends a provider lookup early once that many distinct
        providers are known.
        """
        t = int.from_bytes(target, "big")
        me = self.info.peer
        candidates: dict[bytes, PeerInfo] = {p.peer: p for p in self.table.closest(target, self.k)}
        queried: set[bytes] = set()
        answered: dict[bytes, PeerInfo] = {}
        failed: set[bytes] = set()
        records: dict[bytes, ProviderRecord] = {}
        values: list = []
        rounds = 0
        best = None
        widen = False

        def ranked() -> list[PeerInfo]:
            live = [p for pid, p in candidates.items() if pid not in failed]
            return heapq.nsmallest(self.k, live, key=lambda p: p.num ^ t)

        while True:
            top = ranked()
            todo = [p for p in top if p.peer not in queried]
            if not todo:
                break
            batch = todo if widen else todo[: self.alpha]
            rounds += 1
            request = self._request_for(mode, target)
            futures = [self.rpc(p, request) for p in batch]
            for p in batch:
                queried.add(p.peer)
            yield self.loop.all_of(futures)
            for p, fut in zip(batch, futures):
                reply = fut.value if fut.error is None else None
                if reply is None:
                    failed.add(p.peer)
                    self.forget(p)
                    continue
                answered[p.peer] = p
                self.observe(p)
                for q in getattr(reply, "peers", ()):
                    if q.peer != me and q.peer not in candidates:
                        candidates[q.peer] = q
                for r in getattr(reply, "records", ()):
                    records.setdefault(r.provider, r)
                if isinstance(reply, Value) and reply.record is not None:
                    values.append(reply.record)
            new_best = ranked()
            new_best_d = new_best[0].num ^ t if new_best else None
            widen = best is not None and new_best_d is not None and new_best_d >= best
            if new_best_d is not None and (best is None or new_best_d < best):
                best = new_best_d
            if stop_after is not None and len(records) >= stop_after:
                break
        closest = heapq.nsmallest(self.k, answered.values(), key=lambda p: p.num ^ t)
        self.hop_log.append(rounds)
        return LookupResult(closest, list(records.values()), values, rounds)

    def find_node(self, target: bytes) -> Generator:
        result = yield from self.lookup(target, "node")
        return result.closest

    def closest_including_self(self, target: bytes, others: list[PeerInfo]) -> list[PeerInfo]:
        t = int.from_bytes(target, "big")
        pool = {p.peer: p for p in others}
        pool[self.info.peer] = self.info
        return heapq.nsmallest(self.k, pool.values(), key=lambda p: p.num ^ t)

    def provide(self, key: bytes, ttl: float) -> Generator:
        """Store a record naming this peer at the k closest peers; returns the store count."""
        result = yield from self.lookup(key, "node")
        record = ProviderRecord(key, self.info.peer, self.info.addresses, self.now + ttl)
        targets = self.closest_including_self(key, result.closest)
        stored = 0
        remote = []
        for p in targets:
            if p.peer == self.info.peer:
                stored += int(self.providers.put(record, self.now))
            else:
                remote.append(p)
        if remote:
            futures = [self.rpc(p, PutProvider(self.info, record)) for p in remote]
            yield self.loop.all_of(futures)
            stored += self._count_acks(remote, futures)
        return stored

    def _count_acks(self, peers: list[PeerInfo], futures: list) -> int:
        n = 0
        for p, f in zip(peers, futures):
            if f.error is None and f.value is None:
                self.forget(p)
            elif isinstance(f.value, Ack) and f.value.stored:
                n += 1
        return n

    def find_providers(self, key: bytes, limit: int = 20) -> Generator:
        found: dict[bytes, ProviderRecord] = {r.provider: r for r in self.providers.get(key, self.now)}
        if len(found) < limit:
            result = yield from self.lookup(key, "providers", stop_after=limit - len(found))
            for r in result.records:
                if r.expires_at > self.now:
                    found.setdefault(r.provider, r)
        return list(found.values())[:limit]

    def put_value(self, key: bytes, record) -> Generator:
        result = yield from self.lookup(key, "node")
        targets = self.closest_including_self(key, result.closest)
        stored = 0
        remote = []
        for p in targets:
            if p.peer == self.info.peer:
                stored += int(self.store_value(key, record))
            else:
                remote.append(p)
        if remote:
            futures = [self.rpc(p, PutValue(self.info, key, record)) for p in remote]
            yield self.loop.all_of(futures)
            stored += self._count_acks(remote, futures)
        return stored

    def get_values(self, key: bytes) -> Generator:
        """All name records for ``key`` seen at this peer and across the lookup path."""
        local = self.values.get(key)
        result = yield from self.lookup(key, "value")
        return ([local] if local is not None else []) + result.values

    def purge(self) -> int:
        return self.providers.purge(self.now)
