"""Want-list block exchange between connected peers.

A requester sends ``WANT`` to a few candidates, widens to further candidates
on ``DONT_HAVE`` or silence, accepts the first block that verifies against
the requested identifier and sends ``CANCEL`` to everyone still pending.
Pull model only: nothing is pushed without a matching want.
"""

from __future__ import annotations

import enum
import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Generator, Optional

from .cid import Cid, cid_verify
from .dht import PeerInfo
from .errors import FetchTimeout, IntegrityError, MalformedMessage, NotFound

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0
DEFAULT_WINDOW = 16


class MsgKind(str, enum.Enum):
    WANT = "WANT"
    HAVE = "HAVE"
    BLOCK = "BLOCK"
    CANCEL = "CANCEL"
    DONT_HAVE = "DONT_HAVE"


@dataclass(frozen=True)
class ExchangeMessage:
    kind: MsgKind
    cid: Cid
    priority: int = 0
    data: bytes = b""
    session: int = 0

    def __repr__(self) -> str:
        extra = f", {len(self.data)}B" if self.kind == MsgKind.BLOCK else ""
        return f"{self.kind.value}({self.cid}{extra})"


class WantList:
    """(cid, priority) entries grouped by session; a cid appears once per session."""

    def __init__(self) -> None:
        self._sessions: dict[int, dict[Cid, int]] = {}

    def add(self, session: int, cid: Cid, priority: int = 0) -> None:
        self._sessions.setdefault(session, {})[cid] = priority

    def remove(self, session: int, cid: Cid) -> None:
        entries = self._sessions.get(session)
        if entries is not None:
            entries.pop(cid, None)
            if not entries:
                del self._sessions[session]

    def cancel(self, session: int) -> None:
        self._sessions.pop(session, None)

    def entries(self) -> list[tuple[Cid, int, int]]:
        return [(c, p, s) for s, e in self._sessions.items() for c, p in e.items()]

    def __len__(self) -> int:
        return sum(len(e) for e in self._sessions.values())

    def __contains__(self, cid: Cid) -> bool:
        return any(cid in e for e in self._sessions.values())


class Exchange:
    """One peer's exchange engine.

    The owner supplies ``send(peer, msg)`` for one-way delivery and three
    blockstore hooks: ``load(cid) -> bytes | None``, ``can_serve(cid)`` for the
    sharing policy and ``store(cid, data)`` for verified arrivals.
    """

    def __init__(
        self,
        info: PeerInfo,
        loop,
        send: Callable[[PeerInfo, ExchangeMessage], None],
        load: Callable[[Cid], Optional[bytes]],
        can_serve: Callable[[Cid], bool],
        store: Callable[[Cid, bytes], None],
        alpha: int = 3,
        peer_timeout: float = 1.0,
        metrics: Optional[dict] = None,
    ):
        self.info = info
        self.loop = loop
        self.send = send
        self.load = load
        self.can_serve = can_serve
        self.store = store
        self.alpha = alpha
        self.peer_timeout = peer_timeout
        self.wantlist = WantList()
        self.metrics = metrics if metrics is not None else {}
        self._sessions = itertools.count(1)
        self._waiters: dict[tuple[Cid, bytes], list] = {}
        # wants served per peer, dropped on CANCEL
        self.ledger: dict[bytes, set] = {}

    def new_session(self) -> int:
        return next(self._sessions)

    def _bump(self, name: str, n: int = 1) -> None:
        self.metrics[name] = self.metrics.get(name, 0) + n

    def handle(self, sender: PeerInfo, msg: ExchangeMessage) -> Optional[ExchangeMessage]:
        if not isinstance(msg, ExchangeMessage) or not isinstance(msg.cid, Cid):
            raise MalformedMessage("not an exchange message")
        if msg.kind == MsgKind.WANT:
            data = self.load(msg.cid) if self.can_serve(msg.cid) else None
            if data is None:
                return ExchangeMessage(MsgKind.DONT_HAVE, msg.cid, session=msg.session)
            self.ledger.setdefault(sender.peer, set()).add(msg.cid)
            return ExchangeMessage(MsgKind.BLOCK, msg.cid, data=data, session=msg.session)
        if msg.kind == MsgKind.CANCEL:
            served = self.ledger.get(sender.peer)
            if served is not None:
                served.discard(msg.cid)
                if not served:
                    del self.ledger[sender.peer]
            return None
        waiters = self._waiters.pop((msg.cid, sender.peer), None) or []
        if msg.kind == MsgKind.BLOCK:
            if not waiters:
                self._bump("duplicate_blocks")
                return None
            if not cid_verify(msg.data, msg.cid):
                self._bump("corrupt_blocks")
                outcome = ("corrupt", None)
            else:
                outcome = ("block", msg.data)
            for w in waiters:
                w.set_result(outcome)
            return None
        if msg.kind in (MsgKind.DONT_HAVE, MsgKind.HAVE):
            status = "dont_have" if msg.kind == MsgKind.DONT_HAVE else "have"
            for w in waiters:
                w.set_result((status, None))
            return None
        raise MalformedMessage(f"unknown exchange message kind {msg.kind!r}")

    def _want(self, peer: PeerInfo, cid: Cid, session: int, priority: int):
        fut = self.loop.future()
        self._waiters.setdefault((cid, peer.peer), []).append(fut)
        self.send(peer, ExchangeMessage(MsgKind.WANT, cid, priority, session=session))
        # silence from a peer counts as a miss
        self.loop.schedule(self.loop.now + self.peer_timeout, self._forget, cid, peer, fut, "silent")
        return fut

    def _forget(self, cid: Cid, peer: PeerInfo, fut, status: str) -> None:
        waiters = self._waiters.get((cid, peer.peer))
        if waiters is not None and fut in waiters:
            waiters.remove(fut)
            if not waiters:
                del self._waiters[(cid, peer.peer)]
        fut.set_result((status, None))

    def fetch_block(
        self,
        cid: Cid,
        candidates: list[PeerInfo],
        timeout: float = DEFAULT_TIMEOUT,
        session: Optional[int] = None,
        priority: int = 0,
    ) -> Generator:
        """Process returning verified block bytes for ``cid``.

        Raises NotFound when every candidate declined or stayed silent,
        IntegrityError when the only copies received were corrupt, and
        FetchTimeout when the deadline passes first.
        """
        local = self.load(cid)
        if local is not None:
            return local
        session = session if session is not None else self.new_session()
        queue = [c for c in dict((c.peer, c) for c in candidates if c.peer != self.info.peer).values()]
        if not queue:
            raise NotFound(f"no candidates for {cid}")
        self.wantlist.add(session, cid, priority)
        deadline = self.loop.timeout(timeout, "deadline")
        pending: dict[object, PeerInfo] = {}
        corrupt = 0
        try:
            while queue and len(pending) < self.alpha:
                p = queue.pop(0)
                pending[self._want(p, cid, session, priority)] = p
            while pending:
                first = yield self.loop.any_of([deadline, *pending])
                if first is deadline:
                    raise FetchTimeout(f"fetching {cid} exceeded {timeout}s")
                peer = pending.pop(first)
                status, data = first.value
                if status == "block":
                    self.store(cid, data)
                    return data
                if status == "corrupt":
                    corrupt += 1
                    log.debug("corrupt copy of %s from %s", cid, peer.peer.hex()[:8])
                if queue:
                    p = queue.pop(0)
                    pending[self._want(p, cid, session, priority)] = p
            if corrupt:
                raise IntegrityError(f"every received copy of {cid} failed verification")
            raise NotFound(f"no candidate supplied {cid}")
        finally:
            self.wantlist.remove(session, cid)
            deadline.set_result(None)
            for fut, p in pending.items():
                self._forget(cid, p, fut, "cancelled")
                self.send(p, ExchangeMessage(MsgKind.CANCEL, cid, session=session))
