"""Exception types shared across the package.

Every error carries a short machine-readable ``kind`` (for example
``"not-found"`` or ``"integrity-violation"``) so callers such as the CLI and
the gateway can map failures without string matching on messages.
"""

from __future__ import annotations


class PstoreError(Exception):
    kind = "error"

    def __init__(self, message: str = "", kind: str | None = None):
        if kind is not None:
            self.kind = kind
        super().__init__(message or self.kind)


class CidError(PstoreError, ValueError):
    """Malformed identifier text or multihash bytes."""

    kind = "malformed-cid"


class DagError(PstoreError):
    kind = "malformed-node"


class SegmentNotFound(DagError):
    kind = "segment-not-found"


class NotADirectory(DagError):
    kind = "not-a-directory"


class MissingBlock(DagError):
    kind = "missing-block"


class IntegrityError(PstoreError):
    """A block's bytes do not hash to the identifier they were requested under."""

    kind = "integrity-violation"


class NotFound(PstoreError):
    kind = "not-found"


class FetchTimeout(PstoreError):
    kind = "timeout"


class StorageFull(PstoreError):
    kind = "storage-full"


class InvalidPath(PstoreError, ValueError):
    kind = "invalid-path"


class InvalidSignature(PstoreError):
    kind = "invalid-signature"


class DnslinkError(PstoreError):
    kind = "no-record"


class MalformedMessage(PstoreError, ValueError):
    kind = "malformed-message"


class PartitionError(PstoreError, ValueError):
    kind = "overlapping-groups"


class ScenarioError(PstoreError, ValueError):
    kind = "scenario-parse"
