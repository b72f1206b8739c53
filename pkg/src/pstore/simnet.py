"""Deterministic discrete-event simulation of the peer-to-peer network.

All randomness (keys, latencies, drops, churn) flows from one seeded
``random.Random``, and events are ordered by (time, insertion sequence), so
the same seed and the same sequence of calls reproduce the same event trace.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Generator, Iterable, Optional

from . import wire
from .cid import Cid
from .dht import PeerInfo
from .errors import FetchTimeout, MalformedMessage, PartitionError, PstoreError
from .events import EventLoop, Future
from .exchange import ExchangeMessage, MsgKind
from .ipns import KeyPair
from .node import Node, NodeConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    latency_min: float = 0.010
    latency_max: float = 0.100
    drop_rate: float = 0.0
    bootstrap_count: int = 4
    trace: bool = False
    # round-trip every payload through the wire codec (slower; for codec coverage)
    check_wire: bool = False

    def __post_init__(self):
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if not 0 <= self.latency_min <= self.latency_max:
            raise ValueError("need 0 <= latency_min <= latency_max")
        if not 0 <= self.drop_rate < 1:
            raise ValueError("drop_rate must be in [0, 1)")
        if self.bootstrap_count < 0:
            raise ValueError("bootstrap_count must be non-negative")


@dataclass
class Envelope:
    src: int
    dst: int
    sender: PeerInfo
    payload: object
    sent_at: float
    req_id: Optional[int] = None
    reply_to: Optional[int] = None


@dataclass
class Partition:
    groups: list[frozenset]
    index: dict[int, int] = field(default_factory=dict)

    @classmethod
    def of(cls, groups: Iterable[Iterable[int]]) -> "Partition":
        groups = [frozenset(g) for g in groups]
        index: dict[int, int] = {}
        for gi, g in enumerate(groups):
            for n in sorted(g):
                if n in index:
                    raise PartitionError(f"node {n} appears in more than one group")
                index[n] = gi
        return cls(groups, index)

    def separates(self, a: int, b: int) -> bool:
        # nodes outside every listed group form one implicit extra group
        return self.index.get(a, -1) != self.index.get(b, -1)


def message_type(payload) -> str:
    if isinstance(payload, ExchangeMessage):
        return payload.kind.value
    return wire.TYPE_NAMES.get(type(payload), type(payload).__name__)


EXCHANGE_TYPES = frozenset(k.value for k in MsgKind)


class Simulator:
    def __init__(self, config: SimConfig = SimConfig()):
        self.config = config
        self.loop = EventLoop()
        self.rng = random.Random(config.seed)
        self.nodes: list[Node] = []
        self.partition_state: Optional[Partition] = None
        self.faults: list[Callable[[Envelope], Optional[Envelope]]] = []
        self.counters: dict[str, int] = {}
        self.sent_by_type: dict[str, int] = {}
        self.delivered_by_type: dict[str, int] = {}
        self.dropped: dict[str, int] = {}
        self.bytes_transferred = 0
        self.hop_log: list[int] = []
        self.tracked: dict[Cid, None] = {}
        self.trace: list[list] = []
        self._req_ids = 0
        self._pending: dict[tuple[int, int], Future] = {}
        self._churn: Optional[dict] = None

    # -- clock ---------------------------------------------------------------

    @property
    def now(self) -> float:
        return self.loop.now

    def step(self) -> int:
        return int(self.loop.step())

    def run_until(self, t: float) -> int:
        return self.loop.run_until(t)

    def run_for(self, dt: float) -> int:
        return self.loop.run_until(self.now + dt)

    def with_timeout(self, fut: Future, timeout: float) -> Future:
        out = self.loop.future()
        fut.add_callback(lambda f: out.set_error(f.error) if f.error is not None else out.set_result(f.value))
        self.loop.schedule(self.now + timeout, lambda: out.set_error(FetchTimeout(f"no result within {timeout}s")))
        return out

    def _trace(self, kind: str, *fields) -> None:
        if self.config.trace:
            self.trace.append([round(self.now, 9), len(self.trace), kind, *fields])

    def trace_lines(self) -> str:
        return "".join(json.dumps(e, separators=(",", ":")) + "\n" for e in self.trace)

    # -- membership ----------------------------------------------------------

    def node(self, idx: int) -> Node:
        return self.nodes[idx]

    def alive(self) -> list[Node]:
        return [n for n in self.nodes if n.alive]

    def _fresh_keys(self) -> KeyPair:
        return KeyPair.from_seed(self.rng.getrandbits(256).to_bytes(32, "big"))

    def spawn_node(
        self,
        config: Optional[NodeConfig] = None,
        settle: bool = True,
        bootstrap: Optional[list[int]] = None,
        keys: Optional[KeyPair] = None,
        **node_kwargs,
    ) -> int:
        """Create a node, connect it to bootstrap peers and run its self-lookup.

        Bootstrap peers default to ``bootstrap_count`` live nodes drawn with
        the simulator's generator. With ``settle`` the join runs to completion
        before returning.
        """
        idx = len(self.nodes)
        node = Node(self, idx, keys or self._fresh_keys(), config or NodeConfig(), **node_kwargs)
        if bootstrap is None:
            live = [n.idx for n in self.nodes if n.alive]
            bootstrap = self.rng.sample(live, min(self.config.bootstrap_count, len(live)))
        self.nodes.append(node)
        self._trace("join", idx, node.peer_id.hex()[:16])
        self._start_timers(node)
        proc = self.loop.start(node.join_proc([self.nodes[b].info for b in bootstrap]))
        if settle:
            self.loop.run_future(proc)
        return idx

    def spawn(self, n: int, config: Optional[NodeConfig] = None) -> list[int]:
        return [self.spawn_node(config) for _ in range(n)]

    def leave(self, idx: int) -> None:
        node = self.nodes[idx]
        if node.alive:
            node.alive = False
            self._trace("leave", idx)

    def _start_timers(self, node: Node) -> None:
        cfg = node.config
        # republish ticks run at a quarter interval so records never lapse between ticks
        self._every(node, "republish", cfg.reprovide_interval / 4, node.republish_proc)
        self._every(node, "gc", cfg.gc_interval, lambda: _gc_proc(node))
        self._every(node, "refresh", cfg.refresh_interval, node.refresh_proc)

    def _every(self, node: Node, tag: str, period: float, make: Callable[[], Generator]) -> None:
        def fire():
            if not node.alive:
                return
            self._trace("timer", node.idx, tag)
            self.loop.start(make())
            self.loop.schedule(self.now + period, fire)

        self.loop.schedule(self.now + period, fire)

    # -- transport -----------------------------------------------------------

    def _latency(self) -> float:
        c = self.config
        return self.rng.uniform(c.latency_min, c.latency_max)

    def _drop(self, env: Envelope, reason: str) -> None:
        self.dropped[reason] = self.dropped.get(reason, 0) + 1
        self._trace("drop", env.src, env.dst, message_type(env.payload), reason)

    def _post(self, env: Envelope) -> None:
        mtype = message_type(env.payload)
        src = self.nodes[env.src]
        if not src.alive:
            self._drop(env, "sender-offline")
            return
        if self.config.check_wire:
            env.payload = wire.decode(wire.encode(env.payload))
        self.sent_by_type[mtype] = self.sent_by_type.get(mtype, 0) + 1
        self._trace("send", env.src, env.dst, mtype)
        if self.partition_state is not None and self.partition_state.separates(env.src, env.dst):
            self._drop(env, "partition")
            return
        if self.config.drop_rate and self.rng.random() < self.config.drop_rate:
            self._drop(env, "random")
            return
        self.loop.schedule(self.now + self._latency(), self._deliver, env)

    def _resolve_dst(self, peer: PeerInfo) -> Optional[int]:
        idx = peer.sim_index
        if idx is None or idx >= len(self.nodes) or self.nodes[idx].peer_id != peer.peer:
            return None
        return idx

    def send(self, src: int, peer: PeerInfo, payload) -> None:
        """One-way message. Silently dropped on any failure; senders rely on timeouts."""
        dst = self._resolve_dst(peer)
        if dst is None:
            self.dropped["unknown-peer"] = self.dropped.get("unknown-peer", 0) + 1
            return
        self._post(Envelope(src, dst, self.nodes[src].info, payload, self.now))

    def request(self, src: int, peer: PeerInfo, payload, timeout: float) -> Future:
        """Request/response; the future resolves to the reply or ``None`` on timeout."""
        fut = self.loop.future()
        dst = self._resolve_dst(peer)
        self._req_ids += 1
        rid = self._req_ids
        self._pending[(src, rid)] = fut
        if dst is not None:
            self._post(Envelope(src, dst, self.nodes[src].info, payload, self.now, req_id=rid))
        self.loop.schedule(self.now + timeout, self._expire, src, rid)
        return fut

    def _expire(self, src: int, rid: int) -> None:
        fut = self._pending.pop((src, rid), None)
        if fut is not None:
            fut.set_result(None)

    def _deliver(self, env: Envelope) -> None:
        dst = self.nodes[env.dst]
        mtype = message_type(env.payload)
        if not dst.alive:
            self._drop(env, "receiver-offline")
            return
        if self.partition_state is not None and self.partition_state.separates(env.src, env.dst):
            self._drop(env, "partition")
            return
        for fault in self.faults:
            env = fault(env)
            if env is None:
                self.dropped["fault"] = self.dropped.get("fault", 0) + 1
                return
        # audited after fault hooks, which may rewrite envelopes
        if self.partition_state is not None and self.partition_state.separates(env.src, env.dst):
            self.counters["cross_partition_deliveries"] = self.counters.get("cross_partition_deliveries", 0) + 1
        self.delivered_by_type[mtype] = self.delivered_by_type.get(mtype, 0) + 1
        if isinstance(env.payload, ExchangeMessage) and env.payload.kind == MsgKind.BLOCK:
            self.bytes_transferred += len(env.payload.data)
        self._trace("deliver", env.src, env.dst, mtype)
        if env.reply_to is not None:
            fut = self._pending.pop((env.dst, env.reply_to), None)
            if fut is not None:
                dst.dht.observe(env.sender)
                fut.set_result(env.payload)
            return
        try:
            reply = dst.handle_envelope(env.sender, env.payload)
        except MalformedMessage:
            self.counters["malformed"] = self.counters.get("malformed", 0) + 1
            return
        if reply is None:
            return
        self._post(Envelope(env.dst, env.src, dst.info, reply, self.now, reply_to=env.req_id))

    # -- faults --------------------------------------------------------------

    def partition(self, groups: Iterable[Iterable[int]]) -> bool:
        self.partition_state = Partition.of(groups)
        self._trace("partition", [sorted(g) for g in self.partition_state.groups])
        return True

    def heal(self) -> bool:
        self.partition_state = None
        self._trace("heal")
        return True

    def churn(self, leave_rate: float, epoch: float, protect: Iterable[int] = (), rejoin: bool = True,
              config: Optional[NodeConfig] = None) -> bool:
        """Install recurring churn: every ``epoch`` each unprotected live node leaves
        with probability ``leave_rate``; with ``rejoin`` as many fresh nodes join."""
        if not 0 <= leave_rate <= 1 or epoch <= 0:
            raise ValueError("need 0 <= leave_rate <= 1 and epoch > 0")
        self._churn = {"rate": leave_rate, "protect": frozenset(protect), "rejoin": rejoin, "config": config}
        token = object()
        self._churn["token"] = token

        def tick():
            state = self._churn
            if state is None or state["token"] is not token:
                return
            self.churn_epoch()
            self.loop.schedule(self.now + epoch, tick)

        self.loop.schedule(self.now + epoch, tick)
        return True

    def stop_churn(self) -> None:
        self._churn = None

    def churn_epoch(self) -> list[int]:
        """Apply one churn epoch now; returns the indices that left."""
        state = self._churn or {"rate": 0.0, "protect": frozenset(), "rejoin": False, "config": None}
        left = [
            n.idx for n in self.nodes
            if n.alive and n.idx not in state["protect"] and self.rng.random() < state["rate"]
        ]
        for idx in left:
            self.leave(idx)
        if state["rejoin"]:
            for idx in left:
                self.spawn_node(state["config"] or self.nodes[idx].config, settle=False)
        self.counters["churn_departures"] = self.counters.get("churn_departures", 0) + len(left)
        return left

    # -- observation ---------------------------------------------------------

    def track(self, cids: Iterable[Cid]) -> None:
        for c in cids:
            self.tracked.setdefault(c, None)

    def replicas(self, cid: Cid) -> int:
        return sum(1 for n in self.nodes if n.alive and cid in n.store)

    def exchange_messages(self) -> int:
        return sum(v for k, v in self.sent_by_type.items() if k in EXCHANGE_TYPES)

    def metrics(self) -> dict:
        hops = sorted(self.hop_log)
        return {
            "time": round(self.now, 6),
            "nodes_alive": len(self.alive()),
            "nodes_total": len(self.nodes),
            "messages_sent": sum(self.sent_by_type.values()),
            "messages_delivered": sum(self.delivered_by_type.values()),
            "messages_by_type": dict(sorted(self.sent_by_type.items())),
            "exchange_messages": self.exchange_messages(),
            "dropped": dict(sorted(self.dropped.items())),
            "cross_partition_deliveries": self.counters.get("cross_partition_deliveries", 0),
            "bytes_transferred": self.bytes_transferred,
            "lookups": len(hops),
            "lookup_hops_mean": round(sum(hops) / len(hops), 6) if hops else 0.0,
            "lookup_hops_p50": _percentile(hops, 50),
            "lookup_hops_p90": _percentile(hops, 90),
            "lookup_hops_max": hops[-1] if hops else 0,
            "duplicate_blocks": self.counters.get("duplicate_blocks", 0),
            "corrupt_blocks": self.counters.get("corrupt_blocks", 0),
            "evicted_blocks": self.counters.get("evicted_blocks", 0),
            "replicas": {c.text: self.replicas(c) for c in self.tracked},
        }

    def metrics_json(self) -> str:
        return json.dumps(self.metrics(), indent=2, sort_keys=True)


def _percentile(sorted_vals: list[int], pct: float) -> float:
    """Nearest-rank percentile."""
    if not sorted_vals:
        return 0
    rank = max(1, math.ceil(pct / 100 * len(sorted_vals)))
    return sorted_vals[rank - 1]


def _gc_proc(node: Node) -> Generator:
    node.gc()
    return
    yield  # pragma: no cover - makes this a generator


def keys_for(seed: int, index: int) -> KeyPair:
    """Stable key pair for (seed, index), independent of simulator state."""
    rng = random.Random(f"{seed}:{index}")
    return KeyPair.from_seed(rng.getrandbits(256).to_bytes(32, "big"))
