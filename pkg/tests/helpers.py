"""Independent oracles and small trace builders shared by the tests."""

from __future__ import annotations

from kvtier.core import AccessEvent, BlockMeta, BlockType, EventKind, TransitionType
from kvtier.tiers import TierSpec


def small_tiers(caps):
    """Six tiers with the given capacities (None = unbounded) and arbitrary positive speeds."""
    return tuple(
        TierSpec(k, f"t{k}", 1e9 * (6 - k), 100 * (k + 1), cap, 0.5 / (k + 1)) for k, cap in enumerate(caps)
    )


def access(t, bid, size, session="s", position=0, block_type=BlockType.USER_CONTEXT,
           transition=TransitionType.REASONING_STEP, start=None):
    start = bid * 128 if start is None else start
    return AccessEvent(t, session, EventKind.BLOCK_ACCESS, bid, block_type, transition, position, size,
                       token_start=start, token_end=start + 128)


class ListLRU:
    """Brute-force multi-tier LRU: plain lists, oldest first, demote to the next tier.

    A block pushed out of a full tier lands as the most recent block of the
    next tier, which may push out its own oldest block, and so on.
    """

    def __init__(self, caps):
        self.caps = list(caps)
        self.tiers = [[] for _ in caps]
        self.size = {}
        self.hits = [0] * len(caps)
        self.misses = 0

    def used(self, k):
        return sum(self.size[b] for b in self.tiers[k])

    def _push(self, b, k):
        if k == len(self.tiers):
            return
        cap = self.caps[k]
        while cap is not None and self.used(k) + self.size[b] > cap:
            self._push(self.tiers[k].pop(0), k + 1)
        self.tiers[k].append(b)

    def access(self, b, size):
        self.size[b] = size
        for k, blocks in enumerate(self.tiers):
            if b in blocks:
                self.hits[k] += 1
                blocks.remove(b)
                break
        else:
            self.misses += 1
        self._push(b, 0)


def decode_blocks(num_blocks, size, session="d", block_tokens=128):
    return [BlockMeta(1000 + i, session, BlockType.USER_CONTEXT, (i * block_tokens, (i + 1) * block_tokens), size)
            for i in range(num_blocks)]


def decode_trace(metas, step_ns, block_tokens=128):
    """Strictly sequential decode: one access per block, position at the block start."""
    return [AccessEvent((i + 1) * step_ns, m.session_id, EventKind.BLOCK_ACCESS, m.block_id, m.block_type,
                        TransitionType.REASONING_STEP, m.token_span[0], m.size_bytes,
                        token_start=m.token_span[0], token_end=m.token_span[1])
            for i, m in enumerate(metas)]
