"""Chunking, hash-linked file/directory trees and path resolution.

Node wire layout::

    kind(1 byte: 0 leaf, 1 file, 2 directory)
    varint(link_count)
    per link: varint(name_len) name varint(cid_len) cid-multihash varint(subtree_size)
    varint(data_len) data

Leaves are stored as encoded leaf nodes, so every block is self-describing
and a block fetched by identifier can always be decoded without context.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Mapping, Optional

from .cid import Cid, SHA2_256, cid_from_bytes, cid_parse, cid_verify, varint_decode, varint_encode
from .errors import (
    CidError,
    DagError,
    IntegrityError,
    InvalidPath,
    MissingBlock,
    NotADirectory,
    SegmentNotFound,
)

DEFAULT_CHUNK_SIZE = 262144
DEFAULT_FANOUT = 174

Fetcher = Callable[[Cid], Optional[bytes]]


class Kind(enum.IntEnum):
    LEAF = 0
    FILE = 1
    DIRECTORY = 2


@dataclass(frozen=True)
class Link:
    name: str
    target: Cid
    subtree_size: int


@dataclass(frozen=True)
class DagNode:
    kind: Kind
    links: tuple[Link, ...] = ()
    data: bytes = b""

    def __post_init__(self):
        if self.kind == Kind.LEAF and self.links:
            raise DagError("leaf nodes carry no links")
        if self.kind != Kind.LEAF and self.data:
            raise DagError("interior nodes carry no data")
        if self.kind == Kind.FILE:
            if not self.links:
                raise DagError("file nodes need at least one link")
            if any(link.name for link in self.links):
                raise DagError("file links are unnamed")
        if self.kind == Kind.DIRECTORY:
            names = [link.name for link in self.links]
            if names != sorted(names, key=lambda n: n.encode()) or len(set(names)) != len(names):
                raise DagError("directory links must be unique and sorted")

    @property
    def size(self) -> int:
        """Total leaf bytes beneath this node."""
        if self.kind == Kind.LEAF:
            return len(self.data)
        return sum(link.subtree_size for link in self.links)


@dataclass(frozen=True)
class Block:
    cid: Cid
    data: bytes

    @classmethod
    def from_node(cls, node: DagNode, code: int = SHA2_256) -> "Block":
        data = node_serialize(node)
        return cls(cid_from_bytes(data, code), data)

    def node(self) -> DagNode:
        return node_deserialize(self.data)


# -- codec ------------------------------------------------------------------

def node_serialize(node: DagNode) -> bytes:
    out = bytearray([int(node.kind)])
    out += varint_encode(len(node.links))
    for link in node.links:
        name = link.name.encode("utf-8")
        mh = link.target.multihash
        out += varint_encode(len(name)) + name
        out += varint_encode(len(mh)) + mh
        out += varint_encode(link.subtree_size)
    out += varint_encode(len(node.data)) + node.data
    return bytes(out)


def node_deserialize(buf: bytes) -> DagNode:
    try:
        if not buf:
            raise DagError("empty node")
        try:
            kind = Kind(buf[0])
        except ValueError:
            raise DagError(f"unknown node kind {buf[0]}") from None
        count, pos = varint_decode(buf, 1)
        links = []
        for _ in range(count):
            name_len, pos = varint_decode(buf, pos)
            name = _take(buf, pos, name_len).decode("utf-8")
            pos += name_len
            cid_len, pos = varint_decode(buf, pos)
            target = Cid(_take(buf, pos, cid_len))
            pos += cid_len
            size, pos = varint_decode(buf, pos)
            links.append(Link(name, target, size))
        data_len, pos = varint_decode(buf, pos)
        data = _take(buf, pos, data_len)
        if pos + data_len != len(buf):
            raise DagError("trailing bytes after node")
        return DagNode(kind, tuple(links), data)
    except (CidError, UnicodeDecodeError) as exc:
        raise DagError(f"malformed node: {exc}") from None


def _take(buf: bytes, pos: int, n: int) -> bytes:
    if pos + n > len(buf):
        raise DagError("truncated node")
    return bytes(buf[pos:pos + n])


# -- building ---------------------------------------------------------------

def chunk(data: bytes, chunk_size: int = DEFAULT_CHUNK_SIZE) -> list[Block]:
    """Split ``data`` into fixed-size leaf blocks. Empty input gives one empty leaf."""
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    data = bytes(data)
    if not data:
        return [Block.from_node(DagNode(Kind.LEAF, data=b""))]
    return [
        Block.from_node(DagNode(Kind.LEAF, data=data[i:i + chunk_size]))
        for i in range(0, len(data), chunk_size)
    ]


def leaf_payload(block: Block) -> bytes:
    node = block.node()
    if node.kind != Kind.LEAF:
        raise DagError("not a leaf block")
    return node.data


def build_file_dag(blocks: list[Block], fanout: int = DEFAULT_FANOUT) -> tuple[Cid, list[Block]]:
    """Group leaves ``fanout`` at a time into file nodes until one root remains.

    Returns the root identifier and every block of the tree (leaves first,
    then interior nodes level by level), without duplicates.
    """
    if not blocks:
        raise ValueError("need at least one block")
    if fanout < 2:
        raise ValueError("fanout must be >= 2")
    nodes: dict[Cid, Block] = {}
    level = []
    for b in blocks:
        nodes.setdefault(b.cid, b)
        level.append(Link("", b.cid, b.node().size))
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level), fanout):
            group = level[i:i + fanout]
            if len(group) == 1:
                # a lone trailing link is promoted, never wrapped
                nxt.append(group[0])
                continue
            block = Block.from_node(DagNode(Kind.FILE, tuple(group)))
            nodes.setdefault(block.cid, block)
            nxt.append(Link("", block.cid, sum(link.subtree_size for link in group)))
        level = nxt
    return level[0].target, list(nodes.values())


def build_directory_dag(entries: Mapping[str, tuple[Cid, int]]) -> tuple[Cid, Block]:
    for name in entries:
        if not isinstance(name, str) or not name or "/" in name:
            raise DagError(f"invalid directory entry name {name!r}", kind="invalid-name")
    names = sorted(entries, key=lambda n: n.encode())
    links = tuple(Link(n, entries[n][0], entries[n][1]) for n in names)
    block = Block.from_node(DagNode(Kind.DIRECTORY, links))
    return block.cid, block


# -- paths ------------------------------------------------------------------

@dataclass(frozen=True)
class IpfsPath:
    root: Cid
    segments: tuple[str, ...] = ()

    def __post_init__(self):
        for seg in self.segments:
            if not seg or "/" in seg:
                raise InvalidPath(f"bad path segment {seg!r}")

    @property
    def text(self) -> str:
        return "/ipfs/" + self.root.text + "".join("/" + s for s in self.segments)

    def __str__(self) -> str:
        return self.text

    def join(self, segments: Iterable[str]) -> "IpfsPath":
        return IpfsPath(self.root, self.segments + tuple(segments))


def split_path(text: str) -> tuple[str, str, tuple[str, ...]]:
    """Split ``/ipfs/<cid>/a/b`` or ``/ipns/<name>/a`` into (namespace, head, segments)."""
    if not isinstance(text, str) or not text.startswith("/"):
        raise InvalidPath(f"path must start with /ipfs/ or /ipns/: {text!r}")
    parts = text.split("/")[1:]
    if parts and parts[-1] == "":
        parts = parts[:-1]  # tolerate one trailing slash
    if len(parts) < 2 or parts[0] not in ("ipfs", "ipns") or not parts[1]:
        raise InvalidPath(f"path must start with /ipfs/ or /ipns/: {text!r}")
    segs = tuple(parts[2:])
    if any(not s for s in segs):
        raise InvalidPath(f"empty segment in {text!r}")
    return parts[0], parts[1], segs


def parse_ipfs_path(text: str) -> IpfsPath:
    ns, head, segs = split_path(text)
    if ns != "ipfs":
        raise InvalidPath(f"not an /ipfs/ path: {text!r}")
    try:
        root = cid_parse(head)
    except CidError as exc:
        raise InvalidPath(f"bad identifier in path: {exc}") from None
    return IpfsPath(root, segs)


def follow_segment(cid: Cid, data: bytes, segment: str) -> Cid:
    """One resolution step: the child of directory block ``data`` named ``segment``."""
    node = node_deserialize(data)
    if node.kind != Kind.DIRECTORY:
        raise NotADirectory(f"{cid} is not a directory (looking up {segment!r})")
    for link in node.links:
        if link.name == segment:
            return link.target
    raise SegmentNotFound(f"no entry {segment!r} in {cid}")


def _verified_fetch(fetch: Fetcher, cid: Cid) -> bytes:
    data = fetch(cid)
    if data is None:
        raise MissingBlock(f"block {cid} not available")
    if not cid_verify(data, cid):
        raise IntegrityError(f"block bytes do not match {cid}")
    return data


def resolve_path(path: IpfsPath, fetch: Fetcher) -> Cid:
    cur = path.root
    for seg in path.segments:
        cur = follow_segment(cur, _verified_fetch(fetch, cur), seg)
    return cur


def iter_leaves(root: Cid, fetch: Fetcher) -> Iterator[bytes]:
    stack = [root]
    while stack:
        cid = stack.pop()
        node = node_deserialize(_verified_fetch(fetch, cid))
        if node.kind == Kind.LEAF:
            yield node.data
        elif node.kind == Kind.FILE:
            stack.extend(link.target for link in reversed(node.links))
        else:
            raise NotADirectory(f"{cid} is a directory, not a file", kind="is-a-directory")


def reassemble(root: Cid, fetch: Fetcher) -> bytes:
    """Concatenate leaf data depth-first; every block is verified before use."""
    return b"".join(iter_leaves(root, fetch))


def child_links(data: bytes) -> tuple[Link, ...]:
    return node_deserialize(data).links
