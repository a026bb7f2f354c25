"""Content-addressable block store with a radix-tree index and delta manifests.

Blocks are keyed by SHA-256 of their content. A second copy of the same
content only bumps a reference count. Checkpoints write just the blocks the
store has not seen and record everything else by hash in a manifest that
can chain onto a previous manifest.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

HASH_BYTES = 32


class UnknownHash(KeyError):
    pass


class ManifestError(ValueError):
    pass


def content_hash(content: bytes) -> bytes:
    return hashlib.sha256(content).digest()


@dataclass
class Entry:
    stored_bytes: int
    ref_count: int
    payload: Optional[bytes] = None


class RadixTree:
    """PATRICIA-style radix tree over fixed-length byte keys.

    The root is a flat table indexed by the first two key bytes. Below it,
    internal nodes are ``[branch_byte_index, {byte: child}]`` lists that skip
    over shared key bytes; leaves are ``(key, value)`` tuples. A lookup walks
    branch bytes only and verifies the full key once at the leaf.
    """

    __slots__ = ("_table", "_len", "key_bytes")

    ROOT_STRIDE_BITS = 16

    def __init__(self, key_bytes: int = HASH_BYTES):
        if key_bytes < 2:
            raise ValueError("keys must be at least 2 bytes")
        self._table: list = [None] * (1 << self.ROOT_STRIDE_BITS)
        self._len = 0
        self.key_bytes = key_bytes

    def __len__(self) -> int:
        return self._len

    def get(self, key: bytes):
        node = self._table[(key[0] << 8) | key[1]]
        while type(node) is list:
            node = node[1].get(key[node[0]])
        if node is not None and node[0] == key:
            return node[1]
        return None

    def __contains__(self, key: bytes) -> bool:
        return self.get(key) is not None

    def _check(self, key: bytes) -> None:
        if len(key) != self.key_bytes:
            raise ValueError(f"keys must be {self.key_bytes} bytes")

    @staticmethod
    def _any_leaf(node):
        while type(node) is list:
            node = next(iter(node[1].values()))
        return node

    def insert(self, key: bytes, value) -> None:
        self._check(key)
        if value is None:
            raise ValueError("None is reserved for absent keys")
        slot = (key[0] << 8) | key[1]
        node = self._table[slot]
        if node is None:
            self._table[slot] = (key, value)
            self._len += 1
            return
        # Find a leaf sharing the longest reachable prefix, then the first differing byte.
        probe = node
        while type(probe) is list:
            nxt = probe[1].get(key[probe[0]])
            probe = nxt if nxt is not None else self._any_leaf(probe)
        other = probe[0]
        d = next((i for i in range(2, self.key_bytes) if other[i] != key[i]), None)
        if d is None:
            self._replace_leaf(key, value)
            return
        leaf = (key, value)
        parent, pkey = None, None
        while type(node) is list and node[0] < d:
            parent, pkey = node, key[node[0]]
            node = node[1][pkey]
        if type(node) is list and node[0] == d:
            node[1][key[d]] = leaf
        else:
            split = [d, {key[d]: leaf, other[d]: node}]
            if parent is None:
                self._table[slot] = split
            else:
                parent[1][pkey] = split
        self._len += 1

    def _replace_leaf(self, key: bytes, value) -> None:
        slot = (key[0] << 8) | key[1]
        node = self._table[slot]
        if type(node) is tuple:
            self._table[slot] = (key, value)
            return
        while True:
            child = node[1][key[node[0]]]
            if type(child) is tuple:
                node[1][key[node[0]]] = (key, value)
                return
            node = child

    def delete(self, key: bytes) -> None:
        self._check(key)
        slot = (key[0] << 8) | key[1]
        node = self._table[slot]
        grand, parent = None, None
        while type(node) is list:
            grand, parent = parent, node
            node = node[1].get(key[node[0]])
        if node is None or node[0] != key:
            raise KeyError(key)
        self._len -= 1
        if parent is None:
            self._table[slot] = None
            return
        del parent[1][key[parent[0]]]
        if len(parent[1]) == 1:
            # Path compression: a one-child internal node is replaced by its child.
            (only,) = parent[1].values()
            if grand is None:
                self._table[slot] = only
            else:
                grand[1][key[grand[0]]] = only

    def items(self) -> Iterator[tuple[bytes, object]]:
        """All (key, value) pairs in ascending key order."""
        for root in self._table:
            if root is None:
                continue
            stack = [root]
            while stack:
                node = stack.pop()
                if type(node) is tuple:
                    yield node
                else:
                    stack.extend(node[1][b] for b in sorted(node[1], reverse=True))

    def max_depth(self) -> int:
        """Most internal nodes on any root-to-leaf path."""
        best = 0
        for root in self._table:
            stack = [(root, 0)] if root is not None else []
            while stack:
                node, depth = stack.pop()
                if type(node) is tuple:
                    best = max(best, depth)
                else:
                    stack.extend((c, depth + 1) for c in node[1].values())
        return best


class ContentStore:
    def __init__(self, keep_payloads: bool = True):
        self.index = RadixTree()
        self.total_raw_bytes = 0
        self.total_stored_bytes = 0
        self.keep_payloads = keep_payloads

    def __len__(self) -> int:
        return len(self.index)

    def put(self, block_id: int, content: bytes, size_bytes: Optional[int] = None) -> tuple[bytes, bool]:
        """Store ``content``; returns (hash, was_duplicate).

        ``size_bytes`` lets a short pseudo-payload stand in for a block of the
        given size; the hash still comes from ``content``.
        """
        if not content:
            raise ValueError(f"block {block_id}: empty content")
        size = len(content) if size_bytes is None else size_bytes
        if size <= 0:
            raise ValueError(f"block {block_id}: size must be positive")
        h = content_hash(content)
        self.total_raw_bytes += size
        entry = self.index.get(h)
        if entry is not None:
            entry.ref_count += 1
            return h, True
        self.index.insert(h, Entry(size, 1, content if self.keep_payloads else None))
        self.total_stored_bytes += size
        return h, False

    def lookup(self, h: bytes) -> Optional[Entry]:
        if len(h) != HASH_BYTES:
            return None
        return self.index.get(h)

    def add_ref(self, h: bytes) -> int:
        entry = self.index.get(h)
        if entry is None:
            raise UnknownHash(h.hex())
        entry.ref_count += 1
        self.total_raw_bytes += entry.stored_bytes
        return entry.ref_count

    def release(self, h: bytes) -> int:
        entry = self.lookup(h)
        if entry is None:
            raise UnknownHash(h.hex())
        entry.ref_count -= 1
        if entry.ref_count == 0:
            self.index.delete(h)
            self.total_stored_bytes -= entry.stored_bytes
        return entry.ref_count

    def payload(self, h: bytes) -> bytes:
        entry = self.lookup(h)
        if entry is None:
            raise UnknownHash(h.hex())
        if entry.payload is None:
            raise ManifestError(f"payload for {h.hex()} was not retained")
        return entry.payload


# -- manifests ---------------------------------------------------------------

_MAGIC = b"KVCM"
_VERSION = 1
_HEADER = struct.Struct("<4sHH32sIII")  # magic, version, flags, base id, entries, removed, new
_ENTRY = struct.Struct("<Q32sQ")  # block_id, hash, size: 48 bytes
_U64 = struct.Struct("<Q")
_U32 = struct.Struct("<I")


@dataclass(frozen=True)
class ManifestEntry:
    block_id: int
    content_hash: bytes
    size_bytes: int


@dataclass(frozen=True)
class CheckpointManifest:
    """Entries added or changed relative to ``base``, plus block ids dropped from it."""

    entries: tuple[ManifestEntry, ...]
    new_hashes: frozenset[bytes]
    removed: tuple[int, ...] = ()
    base: Optional["CheckpointManifest"] = field(default=None, repr=False, compare=False)
    base_id: bytes = bytes(HASH_BYTES)

    def __post_init__(self):
        hashes = {e.content_hash for e in self.entries}
        if not self.new_hashes <= hashes:
            raise ManifestError("new_hashes must be a subset of manifest hashes")
        if self.base is not None and self.base_id != self.base.manifest_id:
            raise ManifestError("base_id does not match the base manifest")

    @property
    def manifest_id(self) -> bytes:
        return hashlib.sha256(self.to_bytes()).digest()

    @property
    def overhead_bytes(self) -> int:
        return len(self.to_bytes())

    def resolved(self) -> dict[int, ManifestEntry]:
        """Full block set after applying the whole base chain."""
        blocks = self.base.resolved() if self.base is not None else {}
        for bid in self.removed:
            blocks.pop(bid, None)
        for e in self.entries:
            blocks[e.block_id] = e
        return blocks

    def chain_depth(self) -> int:
        return 1 + (self.base.chain_depth() if self.base is not None else 0)

    def to_bytes(self) -> bytes:
        order = {e.content_hash: i for i, e in reversed(list(enumerate(self.entries)))}
        new_idx = sorted(order[h] for h in self.new_hashes)
        parts = [_HEADER.pack(_MAGIC, _VERSION, 0, self.base_id, len(self.entries), len(self.removed), len(new_idx))]
        parts += [_ENTRY.pack(e.block_id, e.content_hash, e.size_bytes) for e in self.entries]
        parts += [_U64.pack(b) for b in self.removed]
        parts += [_U32.pack(i) for i in new_idx]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes, base: Optional["CheckpointManifest"] = None) -> "CheckpointManifest":
        if len(data) < _HEADER.size:
            raise ManifestError("truncated manifest header")
        magic, version, _flags, base_id, n_entries, n_removed, n_new = _HEADER.unpack_from(data, 0)
        if magic != _MAGIC:
            raise ManifestError("bad manifest magic")
        if version != _VERSION:
            raise ManifestError(f"unsupported manifest version {version}")
        expected = _HEADER.size + n_entries * _ENTRY.size + n_removed * _U64.size + n_new * _U32.size
        if len(data) != expected:
            raise ManifestError(f"manifest length {len(data)} != expected {expected}")
        off = _HEADER.size
        entries = []
        for _ in range(n_entries):
            bid, h, size = _ENTRY.unpack_from(data, off)
            entries.append(ManifestEntry(bid, h, size))
            off += _ENTRY.size
        removed = []
        for _ in range(n_removed):
            removed.append(_U64.unpack_from(data, off)[0])
            off += _U64.size
        new = set()
        for _ in range(n_new):
            idx = _U32.unpack_from(data, off)[0]
            if idx >= n_entries:
                raise ManifestError("new-hash index out of range")
            new.add(entries[idx].content_hash)
            off += _U32.size
        if base is None and base_id != bytes(HASH_BYTES):
            raise ManifestError("manifest references a base that was not supplied")
        return cls(tuple(entries), frozenset(new), tuple(removed), base, base_id)

    def to_json(self) -> dict:
        return {
            "version": _VERSION,
            "base_id": self.base_id.hex(),
            "entries": [
                {"block_id": e.block_id, "content_hash": e.content_hash.hex(), "size_bytes": e.size_bytes}
                for e in self.entries
            ],
            "removed": list(self.removed),
            "new_hashes": sorted(h.hex() for h in self.new_hashes),
        }

    @classmethod
    def from_json(cls, doc: dict, base: Optional["CheckpointManifest"] = None) -> "CheckpointManifest":
        entries = tuple(
            ManifestEntry(int(e["block_id"]), bytes.fromhex(e["content_hash"]), int(e["size_bytes"]))
            for e in doc["entries"]
        )
        return cls(
            entries,
            frozenset(bytes.fromhex(h) for h in doc["new_hashes"]),
            tuple(int(b) for b in doc.get("removed", [])),
            base,
            bytes.fromhex(doc["base_id"]),
        )

    def dumps_json(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


@dataclass(frozen=True)
class CheckpointResult:
    manifest: CheckpointManifest
    raw_bytes: int
    written_bytes: int  # new payload bytes plus manifest overhead

    @property
    def savings(self) -> float:
        return 1.0 - self.written_bytes / self.raw_bytes if self.raw_bytes else 0.0


@dataclass(frozen=True)
class BlockPayload:
    block_id: int
    content: bytes
    size_bytes: Optional[int] = None

    @property
    def size(self) -> int:
        return len(self.content) if self.size_bytes is None else self.size_bytes


def checkpoint(
    store: ContentStore,
    blocks: Sequence[BlockPayload],
    base: Optional[CheckpointManifest] = None,
) -> CheckpointResult:
    """Persist ``blocks``, writing only content the store does not already hold.

    With ``base``, the manifest records only the delta against the base's
    resolved block set; unchanged blocks cost nothing to record.
    """
    prior = base.resolved() if base is not None else {}
    entries = []
    new_hashes = set()
    written = 0
    raw = 0
    seen_ids = set()
    for blk in blocks:
        if blk.block_id in seen_ids:
            raise ManifestError(f"block {blk.block_id} listed twice in one checkpoint")
        seen_ids.add(blk.block_id)
        h, dup = store.put(blk.block_id, blk.content, blk.size_bytes)
        raw += blk.size
        if not dup:
            new_hashes.add(h)
            written += blk.size
        entry = ManifestEntry(blk.block_id, h, blk.size)
        if prior.get(blk.block_id) != entry:
            entries.append(entry)
    removed = tuple(sorted(set(prior) - seen_ids))
    manifest = CheckpointManifest(
        tuple(entries),
        frozenset(new_hashes),
        removed,
        base,
        base.manifest_id if base is not None else bytes(HASH_BYTES),
    )
    return CheckpointResult(manifest, raw, written + manifest.overhead_bytes)


def restore(store: ContentStore, manifest: CheckpointManifest) -> dict[int, bytes]:
    """Block id to content for the manifest's full (chain-resolved) block set."""
    out = {}
    for bid, entry in manifest.resolved().items():
        stored = store.lookup(entry.content_hash)
        if stored is None:
            raise UnknownHash(entry.content_hash.hex())
        out[bid] = store.payload(entry.content_hash)
    return out


# -- trace-level report --------------------------------------------------------


@dataclass(frozen=True)
class DedupRow:
    model: str
    tokens: int
    raw_bytes: int
    written_bytes: int

    @property
    def savings(self) -> float:
        return 1.0 - self.written_bytes / self.raw_bytes if self.raw_bytes else 0.0

    def mb_per_1k_tokens(self, nbytes: int) -> float:
        return nbytes / self.tokens * 1000 / 1e6 if self.tokens else 0.0


def _block_tokens(e, trace_bytes_per_token: int) -> int:
    if e.token_start is not None and e.token_end is not None:
        return e.token_end - e.token_start
    return max(1, e.size_bytes // trace_bytes_per_token)


def session_checkpoints(events, model, trace_bytes_per_token: int) -> DedupRow:
    """Checkpoint each session's distinct blocks into one shared store, sized for ``model``.

    A block's pseudo-payload is derived from (model, block type, content
    seed), so blocks holding the same tokens collide across sessions.
    """
    from .core import EventKind
    from .sizing import sequence_kv_bytes

    per_token = sequence_kv_bytes(model, 1)
    sessions: dict[str, dict[int, BlockPayload]] = {}
    tokens = 0
    for e in events:
        if e.kind != EventKind.BLOCK_ACCESS:
            continue
        blocks = sessions.setdefault(e.session_id, {})
        if e.block_id in blocks:
            continue
        n = _block_tokens(e, trace_bytes_per_token)
        seed = e.content_seed if e.content_seed is not None else e.block_id
        content = f"{model.name}|{e.block_type.value}|{seed}".encode()
        blocks[e.block_id] = BlockPayload(e.block_id, content, n * per_token)
        tokens += n
    store = ContentStore()
    raw = written = 0
    for sid in sorted(sessions):
        res = checkpoint(store, list(sessions[sid].values()))
        raw += res.raw_bytes
        written += res.written_bytes
    return DedupRow(model.name, tokens, raw, written)


def format_dedup_rows(rows: Sequence[DedupRow], fmt: str = "text") -> str:
    if fmt == "json":
        return json.dumps([
            {"model": r.model, "tokens": r.tokens, "raw_bytes": r.raw_bytes, "written_bytes": r.written_bytes,
             "raw_mb_per_1k_tokens": round(r.mb_per_1k_tokens(r.raw_bytes), 4),
             "deduped_mb_per_1k_tokens": round(r.mb_per_1k_tokens(r.written_bytes), 4),
             "savings": round(r.savings, 6)}
            for r in rows
        ], indent=2) + "\n"
    if fmt == "csv":
        return "model,raw_mb_per_1k_tokens,deduped_mb_per_1k_tokens,savings\n" + "".join(
            f"{r.model},{r.mb_per_1k_tokens(r.raw_bytes):.1f},{r.mb_per_1k_tokens(r.written_bytes):.1f},"
            f"{r.savings:.4f}\n" for r in rows
        )
    if fmt != "text":
        raise ValueError(f"unknown format {fmt!r}")
    lines = ["Model              Raw ckpt   Deduped   Savings"]
    for r in rows:
        lines.append(f"{r.model:<17} {r.mb_per_1k_tokens(r.raw_bytes):6.1f} MB  {r.mb_per_1k_tokens(r.written_bytes):5.1f} MB"
                     f"  {100 * r.savings:6.1f}%")
    return "\n".join(lines) + "\n"
