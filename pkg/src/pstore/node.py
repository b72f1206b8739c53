"""The peer runtime: blockstore, pinning, garbage collection and the user-facing flows.

Public methods (``add``, ``get``, ``pin`` ...) drive the owning simulator until
the operation finishes and return plain values. Each has a ``*_proc``
generator twin for use inside other simulator processes.
"""

from __future__ import annotations

import json
import logging
import os
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Generator, Iterable, Mapping, Optional

from . import dag
from .cid import Cid, cid_parse, cid_verify
from .dag import Block, IpfsPath, Kind, Link
from .dht import Dht, PeerInfo, Ping, ProviderRecord, dht_key_for
from .errors import (
    CidError,
    DagError,
    DnslinkError,
    FetchTimeout,
    IntegrityError,
    InvalidPath,
    InvalidSignature,
    NotFound,
    PstoreError,
    StorageFull,
)
from .exchange import Exchange, ExchangeMessage
from .ipns import IpnsRecord, KeyPair, better_record, parse_name

if TYPE_CHECKING:
    from .simnet import Simulator

log = logging.getLogger(__name__)

DNSLINK_MAX_DEPTH = 8
HOUR = 3600.0

TxtLookup = Callable[[str], Iterable[str]]


@dataclass(frozen=True)
class NodeConfig:
    chunk_size: int = dag.DEFAULT_CHUNK_SIZE
    fanout: int = dag.DEFAULT_FANOUT
    capacity_bytes: int = 1 << 30
    provider_ttl: float = 24 * HOUR
    reprovide_interval: float = 12 * HOUR
    share_cache: bool = True
    k: int = 20
    alpha: int = 3
    gc_interval: float = 1 * HOUR
    # below: knobs not named by the node contract but needed to run it
    reprovide: bool = True
    refresh_interval: float = 1 * HOUR
    rpc_timeout: float = 1.0
    fetch_timeout: float = 30.0
    fetch_window: int = 16
    provider_limit: int = 20

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                continue
            if not v > 0:
                raise ValueError(f"NodeConfig.{f.name} must be positive, got {v!r}")
        if self.fanout < 2:
            raise ValueError("fanout must be >= 2")

    def with_(self, **changes) -> "NodeConfig":
        return replace(self, **changes)

    @classmethod
    def from_dict(cls, d: Mapping) -> "NodeConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown node config keys: {sorted(unknown)}")
        return cls(**d)


# -- blockstore -------------------------------------------------------------

@dataclass
class _Entry:
    data: bytes
    origin: str  # "local" (added or pinned here) or "fetched"
    last_access: float


class Blockstore:
    """LRU-ordered block map with an optional one-file-per-block directory."""

    def __init__(self, capacity_bytes: int, path: Optional[os.PathLike] = None):
        self.capacity_bytes = capacity_bytes
        self._blocks: "OrderedDict[Cid, _Entry]" = OrderedDict()
        self.used = 0
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            (self.path / "blocks").mkdir(parents=True, exist_ok=True)
            self._load()

    def _load(self) -> None:
        for f in sorted((self.path / "blocks").iterdir()):
            try:
                cid = cid_parse(f.name)
            except CidError:
                continue
            data = f.read_bytes()
            if not cid_verify(data, cid):
                log.warning("dropping corrupt block file %s", f.name)
                continue
            self._blocks[cid] = _Entry(data, "local", 0.0)
            self.used += len(data)

    def __contains__(self, cid: Cid) -> bool:
        return cid in self._blocks

    def __len__(self) -> int:
        return len(self._blocks)

    def cids(self) -> list[Cid]:
        """Identifiers in eviction order (least recently accessed first)."""
        return list(self._blocks)

    def peek(self, cid: Cid) -> Optional[bytes]:
        e = self._blocks.get(cid)
        return e.data if e else None

    def get(self, cid: Cid, now: float) -> Optional[bytes]:
        e = self._blocks.get(cid)
        if e is None:
            return None
        e.last_access = now
        self._blocks.move_to_end(cid)
        return e.data

    def origin(self, cid: Cid) -> Optional[str]:
        e = self._blocks.get(cid)
        return e.origin if e else None

    def last_access(self, cid: Cid) -> Optional[float]:
        e = self._blocks.get(cid)
        return e.last_access if e else None

    def put(self, cid: Cid, data: bytes, origin: str, now: float) -> bool:
        """Store verified bytes; returns True when the block is new."""
        e = self._blocks.get(cid)
        if e is not None:
            if origin == "local":
                e.origin = "local"
            self.get(cid, now)
            return False
        if not cid_verify(data, cid):
            raise IntegrityError(f"refusing to store bytes that do not match {cid}")
        self._blocks[cid] = _Entry(bytes(data), origin, now)
        self.used += len(data)
        if self.path is not None:
            tmp = self.path / "blocks" / (cid.text + ".tmp")
            tmp.write_bytes(data)
            tmp.replace(self.path / "blocks" / cid.text)
        return True

    def mark_local(self, cid: Cid) -> None:
        e = self._blocks.get(cid)
        if e is not None:
            e.origin = "local"

    def delete(self, cid: Cid) -> bool:
        e = self._blocks.pop(cid, None)
        if e is None:
            return False
        self.used -= len(e.data)
        if self.path is not None:
            try:
                (self.path / "blocks" / cid.text).unlink()
            except FileNotFoundError:
                pass
        return True

    def clear(self) -> None:
        for cid in list(self._blocks):
            self.delete(cid)


@dataclass
class PinSet:
    roots: dict[Cid, bool] = field(default_factory=dict)  # cid -> recursive

    def add(self, cid: Cid, recursive: bool = True) -> None:
        # a recursive pin subsumes a direct one
        self.roots[cid] = self.roots.get(cid, False) or recursive

    def remove(self, cid: Cid) -> bool:
        return self.roots.pop(cid, None) is not None

    def __contains__(self, cid: Cid) -> bool:
        return cid in self.roots

    def items(self) -> list[tuple[Cid, bool]]:
        return list(self.roots.items())


def dag_closure(root: Cid, load: Callable[[Cid], Optional[bytes]]) -> list[Cid]:
    """Every identifier reachable from ``root`` among locally available blocks."""
    seen: dict[Cid, None] = {}
    stack = [root]
    while stack:
        cid = stack.pop()
        if cid in seen:
            continue
        seen[cid] = None
        data = load(cid)
        if data is None:
            continue
        try:
            links = dag.child_links(data)
        except DagError:
            continue
        stack.extend(link.target for link in reversed(links))
    return list(seen)


# -- node -------------------------------------------------------------------

class Node:
    def __init__(
        self,
        sim: "Simulator",
        idx: int,
        keys: KeyPair,
        config: NodeConfig = NodeConfig(),
        state_dir: Optional[os.PathLike] = None,
        txt_lookup: Optional[TxtLookup] = None,
    ):
        self.sim = sim
        self.idx = idx
        self.keys = keys
        self.config = config
        self.alive = True
        self.peer_id = keys.name.digest
        self.info = PeerInfo(self.peer_id, (f"/sim/{idx}",))
        self.state_dir = Path(state_dir) if state_dir is not None else None
        self.store = Blockstore(config.capacity_bytes, self.state_dir)
        self.pins = PinSet()
        self._pinned: set[Cid] = set()
        self._held: dict[Cid, int] = {}
        self.provided: dict[Cid, float] = {}
        self.no_reprovide: set[Cid] = set()
        self.share_cache = config.share_cache
        self.storage_full = False
        self.eviction_log: list[Cid] = []
        self.ipns_seq = 0
        self.ipns_own: Optional[IpnsRecord] = None
        self.ipns_seen: dict[str, IpnsRecord] = {}
        self.txt_lookup = txt_lookup
        self.bootstrap_peers: list[PeerInfo] = []
        self.dht = Dht(
            self.info,
            sim.loop,
            self.rpc,
            k=config.k,
            alpha=config.alpha,
            accept_value=lambda new, old: better_record(new, old, sim.loop.now),
            hop_log=sim.hop_log,
        )
        self.exchange = Exchange(
            self.info,
            sim.loop,
            send=lambda peer, msg: sim.send(self.idx, peer, msg),
            load=lambda cid: self.store.get(cid, self.now),
            can_serve=self.can_serve,
            store=self._store_fetched,
            alpha=config.alpha,
            peer_timeout=config.rpc_timeout,
            metrics=sim.counters,
        )
        if self.state_dir is not None:
            self._load_manifest()

    def __repr__(self) -> str:
        return f"Node({self.idx}, {self.name})"

    @property
    def now(self) -> float:
        return self.sim.loop.now

    @property
    def loop(self):
        return self.sim.loop

    @property
    def name(self) -> str:
        return self.keys.name.text

    # -- plumbing -----------------------------------------------------------

    def rpc(self, peer: PeerInfo, message):
        return self.sim.request(self.idx, peer, message, self.config.rpc_timeout)

    def handle_envelope(self, sender: PeerInfo, payload):
        if isinstance(payload, ExchangeMessage):
            self.dht.observe(sender)
            return self.exchange.handle(sender, payload)
        return self.dht.handle_rpc(payload)

    def _run(self, gen: Generator):
        if not self.alive:
            raise PstoreError(f"node {self.idx} has left the network", kind="node-offline")
        return self.sim.loop.run(gen)

    def _check_online(self) -> None:
        if not self.alive:
            raise PstoreError(f"node {self.idx} has left the network", kind="node-offline")

    def can_serve(self, cid: Cid) -> bool:
        if cid not in self.store:
            return False
        return self.share_cache or self.store.origin(cid) == "local"

    def _store_fetched(self, cid: Cid, data: bytes) -> None:
        self.store.put(cid, data, "fetched", self.now)
        self._after_put()

    def _hold(self, cids: Iterable[Cid]) -> list[Cid]:
        cids = list(cids)
        for c in cids:
            self._held[c] = self._held.get(c, 0) + 1
        return cids

    def _release(self, cids: Iterable[Cid]) -> None:
        for c in cids:
            n = self._held.get(c, 0) - 1
            if n <= 0:
                self._held.pop(c, None)
            else:
                self._held[c] = n

    # -- gc & pins ----------------------------------------------------------

    def _recompute_pins(self) -> None:
        pinned: set[Cid] = set()
        for root, recursive in self.pins.items():
            if recursive:
                pinned.update(dag_closure(root, self.store.peek))
            else:
                pinned.add(root)
        self._pinned = pinned

    def is_pinned(self, cid: Cid) -> bool:
        return cid in self._pinned

    def _after_put(self) -> None:
        if self.store.used > self.store.capacity_bytes:
            self.gc()

    def gc(self, now: Optional[float] = None) -> list[Cid]:
        """Evict unpinned blocks, least recently accessed first, until under capacity."""
        evicted = []
        for cid in self.store.cids():
            if self.store.used <= self.store.capacity_bytes:
                break
            if cid in self._pinned or cid in self._held:
                continue
            self.store.delete(cid)
            self.provided.pop(cid, None)
            evicted.append(cid)
        self.storage_full = self.store.used > self.store.capacity_bytes
        self.eviction_log.extend(evicted)
        if evicted:
            self.sim.counters["evicted_blocks"] = self.sim.counters.get("evicted_blocks", 0) + len(evicted)
        return evicted

    def pin_proc(self, cid: Cid, recursive: bool = True) -> Generator:
        if recursive:
            yield from self.fetch_dag_proc(cid)
        elif cid not in self.store:
            yield from self._fetch_one(cid, self._new_session())
        self.pins.add(cid, recursive)
        for c in (dag_closure(cid, self.store.peek) if recursive else [cid]):
            self.store.mark_local(c)
        self._recompute_pins()
        self._save_manifest()
        return True

    def pin(self, cid: Cid, recursive: bool = True) -> bool:
        return self._run(self.pin_proc(cid, recursive))

    def unpin(self, cid: Cid) -> bool:
        if not self.pins.remove(cid):
            raise NotFound(f"{cid} is not pinned")
        self._recompute_pins()
        self._save_manifest()
        return True

    # -- publishing ---------------------------------------------------------

    def _put_local(self, blocks: list[Block]) -> None:
        for b in blocks:
            self.store.put(b.cid, b.data, "local", self.now)
        self.sim.track(b.cid for b in blocks)
        if self.store.used > self.store.capacity_bytes:
            self.gc()
            if self.storage_full:
                raise StorageFull(
                    f"{self.store.used} bytes held exceeds capacity {self.store.capacity_bytes} after gc"
                )

    def _announce(self, cids: list[Cid]) -> Generator:
        if not cids:
            return 0
        procs = [self.loop.start(self.provide_proc(c)) for c in cids]
        yield self.loop.all_of(procs)
        return sum(p.value or 0 for p in procs if p.error is None)

    def add_proc(self, data: bytes, pin: bool = False) -> Generator:
        blocks = dag.chunk(data, self.config.chunk_size)
        root, nodes = dag.build_file_dag(blocks, self.config.fanout)
        held = self._hold(b.cid for b in nodes)
        try:
            self._put_local(nodes)
            if pin:
                self.pins.add(root, True)
                self._recompute_pins()
                self._save_manifest()
        finally:
            self._release(held)
        yield from self._announce([b.cid for b in nodes])
        return root

    def add(self, data: bytes, pin: bool = False) -> Cid:
        return self._run(self.add_proc(data, pin))

    def _put_tree(self, entries: Mapping, held: list[Cid]) -> tuple[Cid, int]:
        files: dict[str, tuple[Cid, int]] = {}
        for name, value in entries.items():
            if isinstance(value, Mapping):
                files[name] = self._put_tree(value, held)
                continue
            blocks = dag.chunk(value, self.config.chunk_size)
            root, nodes = dag.build_file_dag(blocks, self.config.fanout)
            held += self._hold(b.cid for b in nodes)
            self._put_local(nodes)
            files[name] = (root, len(value))
        root, block = dag.build_directory_dag(files)
        held += self._hold([root])
        self._put_local([block])
        return root, sum(size for _, size in files.values())

    def add_directory_proc(self, entries: Mapping, pin: bool = False) -> Generator:
        """Add a directory; values are file bytes or nested mappings (subdirectories)."""
        held: list[Cid] = []
        try:
            root, _ = self._put_tree(entries, held)
            if pin:
                self.pins.add(root, True)
                self._recompute_pins()
                self._save_manifest()
        finally:
            self._release(held)
        yield from self._announce(list(dict.fromkeys(held)))
        return root

    def add_directory(self, entries: Mapping, pin: bool = False) -> Cid:
        return self._run(self.add_directory_proc(entries, pin))

    # -- DHT-facing ---------------------------------------------------------

    def provide_proc(self, cid: Cid) -> Generator:
        n = yield from self.dht.provide(dht_key_for(cid), self.config.provider_ttl)
        self.provided[cid] = self.now
        return n

    def provide(self, cid: Cid) -> int:
        return self._run(self.provide_proc(cid))

    def find_providers_proc(self, cid: Cid, limit: Optional[int] = None) -> Generator:
        limit = limit or self.config.provider_limit
        records = yield from self.dht.find_providers(dht_key_for(cid), limit)
        return records

    def find_providers(self, cid: Cid, limit: Optional[int] = None) -> list[ProviderRecord]:
        return self._run(self.find_providers_proc(cid, limit))

    def iterative_find_node(self, target: bytes) -> list[PeerInfo]:
        return self._run(self.dht.find_node(target))

    def set_share_cache(self, enabled: bool) -> bool:
        self.share_cache = bool(enabled)
        return True

    def disable_reprovide(self, cid: Cid) -> None:
        self.no_reprovide.add(cid)

    def _reprovide_allowed(self, cid: Cid) -> bool:
        if not self.config.reprovide or cid in self.no_reprovide or cid not in self.store:
            return False
        return self.share_cache or self.store.origin(cid) == "local"

    def republish_proc(self) -> Generator:
        self.dht.purge()
        due = [
            cid for cid, last in self.provided.items()
            if self.now - last >= self.config.reprovide_interval and self._reprovide_allowed(cid)
        ]
        n = yield from self._announce(due)
        if self.ipns_own is not None and self.config.reprovide:
            rec = IpnsRecord.create(
                self.keys, self.ipns_own.value, self.ipns_own.sequence, self.now + self.config.provider_ttl
            )
            self.ipns_own = rec
            yield from self.dht.put_value(self.peer_id, rec)
        return len(due) if n is not None else 0

    def republish_tick(self) -> int:
        return self._run(self.republish_proc())

    def refresh_proc(self) -> Generator:
        """Retry evicted and bootstrap peers, then look ourselves up."""
        retry = {p.peer: p for p in list(self.dht.stale.values()) + self.bootstrap_peers}
        retry.pop(self.peer_id, None)
        if retry:
            peers = list(retry.values())
            futures = [self.rpc(p, Ping(self.info)) for p in peers]
            yield self.loop.all_of(futures)
            for p, f in zip(peers, futures):
                if f.error is None and f.value is not None:
                    self.dht.observe(p)
        if len(self.dht.table):
            yield from self.dht.find_node(self.peer_id)
        return len(self.dht.table)

    def join_proc(self, bootstrap: list[PeerInfo]) -> Generator:
        self.bootstrap_peers = list(bootstrap)
        for p in bootstrap:
            self.dht.observe(p)
        if bootstrap:
            yield from self.dht.find_node(self.peer_id)
        return len(self.dht.table)

    # -- retrieval ----------------------------------------------------------

    def _new_session(self) -> dict:
        return {"id": self.exchange.new_session(), "peers": {}}

    def _fetch_one(self, cid: Cid, session: dict) -> Generator:
        """Fetch one block: session peers first, then DHT providers."""
        local = self.store.get(cid, self.now)
        if local is not None:
            return local
        timeout = self.config.fetch_timeout
        first_error: Optional[PstoreError] = None
        tried: set[bytes] = set()
        if session["peers"]:
            peers = list(session["peers"].values())
            tried.update(p.peer for p in peers)
            try:
                return (yield from self.exchange.fetch_block(cid, peers, timeout, session["id"]))
            except (NotFound, IntegrityError) as exc:
                first_error = exc
        records = yield from self.find_providers_proc(cid)
        candidates = []
        for r in records:
            if r.provider == self.peer_id:
                continue
            info = PeerInfo(r.provider, r.addresses)
            session["peers"].setdefault(r.provider, info)
            if r.provider not in tried:
                candidates.append(info)
        if not candidates:
            if isinstance(first_error, IntegrityError):
                raise first_error
            raise NotFound(f"no reachable provider for {cid}")
        try:
            return (yield from self.exchange.fetch_block(cid, candidates, timeout, session["id"]))
        except NotFound:
            if isinstance(first_error, IntegrityError):
                raise first_error from None
            raise

    def fetch_dag_proc(self, root: Cid, session: Optional[dict] = None) -> Generator:
        """Fetch every block under ``root``, up to ``fetch_window`` in flight.

        Returns the identifiers that were newly fetched. With ``share_cache``
        on, fetched blocks are announced before returning.
        """
        session = session or self._new_session()
        queue = [root]
        seen = {root}
        inflight: dict = {}
        fetched: list[Cid] = []
        held: list[Cid] = []
        window = self.config.fetch_window

        def expand(data: bytes) -> None:
            for link in dag.child_links(data):
                if link.target not in seen:
                    seen.add(link.target)
                    queue.append(link.target)

        try:
            while queue or inflight:
                while queue and len(inflight) < window:
                    cid = queue.pop(0)
                    held += self._hold([cid])
                    local = self.store.get(cid, self.now)
                    if local is not None:
                        expand(local)
                        continue
                    inflight[self.loop.start(self._fetch_one(cid, session))] = cid
                if not inflight:
                    continue
                done = yield self.loop.any_of(list(inflight))
                cid = inflight.pop(done)
                data = done.result()
                fetched.append(cid)
                expand(data)
            if fetched and self.share_cache:
                yield from self._announce(fetched)
        finally:
            self._release(held)
        return fetched

    def fetch_dag(self, root: Cid) -> list[Cid]:
        return self._run(self.fetch_dag_proc(root))

    def resolve_proc(self, path: str) -> Generator:
        """Resolve any path text to the identifier it names."""
        ipath = yield from self.to_ipfs_path_proc(path)
        session = self._new_session()
        cur = ipath.root
        for seg in ipath.segments:
            data = yield from self._fetch_one(cur, session)
            cur = dag.follow_segment(cur, data, seg)
        return cur, session

    def resolve(self, path: str) -> Cid:
        return self._run(self.resolve_proc(path))[0]

    def get_proc(self, path: str) -> Generator:
        cid, session = yield from self.resolve_proc(path)
        yield from self.fetch_dag_proc(cid, session)
        return dag.reassemble(cid, lambda c: self.store.get(c, self.now))

    def get(self, path: str, timeout: Optional[float] = None) -> bytes:
        self._check_online()
        proc = self.loop.start(self.get_proc(path))
        if timeout is None:
            return self.loop.run_future(proc)
        return self.loop.run_future(self.sim.with_timeout(proc, timeout))

    def ls(self, path: str) -> list[Link]:
        def _ls():
            cid, session = yield from self.resolve_proc(path)
            data = yield from self._fetch_one(cid, session)
            node = dag.node_deserialize(data)
            return list(node.links) if node.kind == Kind.DIRECTORY else []
        return self._run(_ls())

    # -- naming -------------------------------------------------------------

    def to_ipfs_path_proc(self, path: str, depth: int = 0) -> Generator:
        ns, head, segs = dag.split_path(path)
        if ns == "ipfs":
            try:
                return IpfsPath(cid_parse(head), segs)
            except CidError as exc:
                raise InvalidPath(f"bad identifier {head!r}: {exc}") from None
        if "." in head:
            base = yield from self.dnslink_proc(head, depth=depth)
        else:
            base = yield from self.ipns_resolve_proc(head, depth=depth)
        return base.join(segs)

    def ipns_publish_proc(self, path: str) -> Generator:
        dag.split_path(path)
        self.ipns_seq += 1
        rec = IpnsRecord.create(self.keys, path, self.ipns_seq, self.now + self.config.provider_ttl)
        self.ipns_own = rec
        self.ipns_seen[rec.name] = rec
        self._save_manifest()
        yield from self.dht.put_value(self.peer_id, rec)
        return rec.name

    def ipns_publish(self, path: str) -> str:
        return self._run(self.ipns_publish_proc(path))

    def ipns_resolve_proc(self, name: str, depth: int = 0) -> Generator:
        key = parse_name(name).digest
        found = yield from self.dht.get_values(key)
        candidates = [r for r in found if isinstance(r, IpnsRecord) and r.name == name]
        if self.ipns_own is not None and self.ipns_own.name == name:
            candidates.append(self.ipns_own)
        valid = [r for r in candidates if r.expires_at > self.now and r.verify()]
        cached = self.ipns_seen.get(name)
        if cached is not None and cached.expires_at > self.now:
            valid.append(cached)
        if not valid:
            if candidates:
                raise InvalidSignature(f"no record for {name} passed verification")
            raise NotFound(f"no record for name {name}")
        best = max(valid, key=lambda r: (r.sequence, r.expires_at))
        self.ipns_seen[name] = best
        if depth >= DNSLINK_MAX_DEPTH:
            raise DnslinkError("name resolution recursed too deep", kind="recursion-limit")
        result = yield from self.to_ipfs_path_proc(best.value, depth + 1)
        return result

    def ipns_resolve(self, name: str) -> IpfsPath:
        return self._run(self.ipns_resolve_proc(name))

    def dnslink_proc(self, domain: str, txt_lookup: Optional[TxtLookup] = None, depth: int = 0) -> Generator:
        if depth > DNSLINK_MAX_DEPTH:
            raise DnslinkError(f"dnslink recursion deeper than {DNSLINK_MAX_DEPTH}", kind="recursion-limit")
        lookup = txt_lookup or self.txt_lookup
        records = list(lookup(domain) or []) if lookup is not None else []
        links = [r[len("dnslink="):] for r in records if r.startswith("dnslink=")]
        if not links:
            raise DnslinkError(f"no dnslink TXT record for {domain}", kind="no-record")
        target = None
        for text in links:
            try:
                ns, head, _ = dag.split_path(text)
                if ns == "ipfs":
                    cid_parse(head)
                target = text
                break
            except (InvalidPath, CidError):
                continue
        if target is None:
            raise DnslinkError(f"malformed dnslink record for {domain}", kind="malformed-dnslink")
        if txt_lookup is not None and self.txt_lookup is None:
            self.txt_lookup = txt_lookup
        result = yield from self.to_ipfs_path_proc(target, depth + 1)
        return result

    def dnslink_resolve(self, domain: str, txt_lookup: Optional[TxtLookup] = None) -> IpfsPath:
        return self._run(self.dnslink_proc(domain, txt_lookup))

    # -- persistence --------------------------------------------------------

    def _manifest_path(self) -> Optional[Path]:
        return self.state_dir / "manifest.json" if self.state_dir is not None else None

    def _save_manifest(self) -> None:
        path = self._manifest_path()
        if path is None:
            return
        manifest = {
            "version": 1,
            "pins": [{"cid": c.text, "recursive": r} for c, r in self.pins.items()],
            "ipns_sequence": self.ipns_seq,
            "ipns_record": _record_to_json(self.ipns_own) if self.ipns_own else None,
            "no_reprovide": sorted(c.text for c in self.no_reprovide),
        }
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
        tmp.replace(path)

    def _load_manifest(self) -> None:
        path = self._manifest_path()
        if path is None or not path.exists():
            return
        m = json.loads(path.read_text())
        for p in m.get("pins", []):
            self.pins.add(cid_parse(p["cid"]), bool(p["recursive"]))
        self.ipns_seq = int(m.get("ipns_sequence", 0))
        if m.get("ipns_record"):
            self.ipns_own = _record_from_json(m["ipns_record"])
            self.ipns_seen[self.ipns_own.name] = self.ipns_own
        self.no_reprovide = {cid_parse(t) for t in m.get("no_reprovide", [])}
        self._recompute_pins()


def _record_to_json(r: IpnsRecord) -> dict:
    d = asdict(r)
    d["public_key"] = r.public_key.hex()
    d["signature"] = r.signature.hex()
    return d


def _record_from_json(d: dict) -> IpnsRecord:
    return IpnsRecord(
        d["name"], d["value"], int(d["sequence"]),
        bytes.fromhex(d["public_key"]), bytes.fromhex(d["signature"]), float(d["expires_at"]),
    )
