"""Deterministic seed derivation for independent sub-streams.

All randomness flows from a single root seed; sub-streams (per trial, per
setting, per purpose) are derived through SeedSequence with integer tags,
so results are reproducible across processes.  String tags are hashed with
crc32, which is stable (unlike Python's salted str hash).
"""

import os
import zlib

import numpy as np

MASK64 = (1 << 64) - 1


def _tag_int(tag):
    if isinstance(tag, str):
        return zlib.crc32(tag.encode("utf-8"))
    return int(tag) & MASK64


def derive_seed(root, *tags):
    """A 64-bit seed for the sub-stream identified by (root, *tags)."""
    entropy = [int(root) & MASK64] + [_tag_int(t) for t in tags]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


def derive_rng(root, *tags):
    return np.random.default_rng(derive_seed(root, *tags))


def worker_count():
    """Parallel worker cap: MLOCRISK_THREADS env var, else hardware count."""
    raw = os.environ.get("MLOCRISK_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1
