"""Versioned structured-text encoding for DHT RPCs and exchange messages.

Each message encodes to one UTF-8 JSON object::

    {"v": 1, "type": "FIND_NODE", ...fields}

Byte fields (peer ids, keys, block data, signatures) are lowercase hex;
identifiers are their base58 text. ``decode(encode(m)) == m`` for every
message type. Unknown versions or types raise ``MalformedMessage``.
"""

from __future__ import annotations

import json

from .cid import cid_parse
from .dht import (
    Ack,
    FindNode,
    GetProviders,
    GetValue,
    Nodes,
    PeerInfo,
    Ping,
    Pong,
    ProviderRecord,
    Providers,
    PutProvider,
    PutValue,
    Value,
)
from .errors import CidError, MalformedMessage
from .exchange import ExchangeMessage, MsgKind
from .ipns import IpnsRecord

VERSION = 1

TYPE_NAMES = {
    FindNode: "FIND_NODE",
    GetProviders: "GET_PROVIDERS",
    PutProvider: "PUT_PROVIDER",
    Ping: "PING",
    PutValue: "PUT_VALUE",
    GetValue: "GET_VALUE",
    Nodes: "NODES",
    Providers: "PROVIDERS",
    Ack: "ACK",
    Pong: "PONG",
    Value: "VALUE",
}


def _peer(p: PeerInfo) -> dict:
    return {"id": p.peer.hex(), "addrs": list(p.addresses), "seen": p.last_seen}


def _unpeer(d: dict) -> PeerInfo:
    return PeerInfo(bytes.fromhex(d["id"]), tuple(d["addrs"]), float(d.get("seen", 0.0)))


def _prov(r: ProviderRecord) -> dict:
    return {"key": r.key.hex(), "provider": r.provider.hex(), "addrs": list(r.addresses), "expires": r.expires_at}


def _unprov(d: dict) -> ProviderRecord:
    return ProviderRecord(bytes.fromhex(d["key"]), bytes.fromhex(d["provider"]), tuple(d["addrs"]), float(d["expires"]))


def _ipns(r) -> dict | None:
    if r is None:
        return None
    return {
        "name": r.name, "value": r.value, "seq": r.sequence,
        "pub": r.public_key.hex(), "sig": r.signature.hex(), "expires": r.expires_at,
    }


def _unipns(d):
    if d is None:
        return None
    return IpnsRecord(d["name"], d["value"], int(d["seq"]), bytes.fromhex(d["pub"]), bytes.fromhex(d["sig"]),
                      float(d["expires"]))


def to_obj(msg) -> dict:
    if isinstance(msg, ExchangeMessage):
        out = {"type": msg.kind.value, "cid": msg.cid.text, "priority": msg.priority, "session": msg.session}
        if msg.data:
            out["data"] = msg.data.hex()
        return {"v": VERSION, **out}
    name = TYPE_NAMES.get(type(msg))
    if name is None:
        raise MalformedMessage(f"cannot encode {type(msg).__name__}")
    out: dict = {"v": VERSION, "type": name}
    if hasattr(msg, "sender"):
        out["sender"] = _peer(msg.sender)
    if isinstance(msg, FindNode):
        out["target"] = msg.target.hex()
    elif isinstance(msg, (GetProviders, GetValue)):
        out["key"] = msg.key.hex()
    elif isinstance(msg, PutProvider):
        out["record"] = _prov(msg.record)
    elif isinstance(msg, Ping):
        out["nonce"] = msg.nonce
    elif isinstance(msg, PutValue):
        out["key"] = msg.key.hex()
        out["record"] = _ipns(msg.record)
    elif isinstance(msg, Nodes):
        out["peers"] = [_peer(p) for p in msg.peers]
    elif isinstance(msg, Providers):
        out["records"] = [_prov(r) for r in msg.records]
        out["peers"] = [_peer(p) for p in msg.peers]
    elif isinstance(msg, Ack):
        out["stored"] = msg.stored
    elif isinstance(msg, Pong):
        out["nonce"] = msg.nonce
    elif isinstance(msg, Value):
        out["record"] = _ipns(msg.record)
        out["peers"] = [_peer(p) for p in msg.peers]
    return out


def from_obj(d: dict):
    try:
        if d.get("v") != VERSION:
            raise MalformedMessage(f"unsupported wire version {d.get('v')!r}")
        t = d["type"]
        if t in MsgKind._value2member_map_:
            data = bytes.fromhex(d.get("data", ""))
            return ExchangeMessage(MsgKind(t), cid_parse(d["cid"]), int(d["priority"]), data, int(d["session"]))
        sender = _unpeer(d["sender"]) if "sender" in d else None
        if t == "FIND_NODE":
            return FindNode(sender, bytes.fromhex(d["target"]))
        if t == "GET_PROVIDERS":
            return GetProviders(sender, bytes.fromhex(d["key"]))
        if t == "PUT_PROVIDER":
            return PutProvider(sender, _unprov(d["record"]))
        if t == "PING":
            return Ping(sender, int(d["nonce"]))
        if t == "PUT_VALUE":
            return PutValue(sender, bytes.fromhex(d["key"]), _unipns(d["record"]))
        if t == "GET_VALUE":
            return GetValue(sender, bytes.fromhex(d["key"]))
        if t == "NODES":
            return Nodes(tuple(_unpeer(p) for p in d["peers"]))
        if t == "PROVIDERS":
            return Providers(tuple(_unprov(r) for r in d["records"]), tuple(_unpeer(p) for p in d["peers"]))
        if t == "ACK":
            return Ack(bool(d["stored"]))
        if t == "PONG":
            return Pong(int(d["nonce"]))
        if t == "VALUE":
            return Value(_unipns(d["record"]), tuple(_unpeer(p) for p in d["peers"]))
        raise MalformedMessage(f"unknown message type {t!r}")
    except (KeyError, TypeError, ValueError, CidError) as exc:
        if isinstance(exc, MalformedMessage):
            raise
        raise MalformedMessage(f"bad message: {exc}") from None


def encode(msg) -> bytes:
    return json.dumps(to_obj(msg), sort_keys=True, separators=(",", ":")).encode("utf-8")


def decode(buf: bytes):
    try:
        obj = json.loads(buf)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedMessage(f"not JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise MalformedMessage("message must be a JSON object")
    return from_obj(obj)
