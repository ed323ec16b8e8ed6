"""Counter-based random streams.

Every stochastic quantity in a run is drawn from a Philox generator keyed by
(master seed, purpose) with the slot index placed in the high word of the
256-bit counter.  Any slot's draws are therefore reproducible without
replaying earlier slots, and distinct purposes never collide.
"""

from __future__ import annotations

import numpy as np

PURPOSE_CHANNELS = 0
PURPOSE_RANK1_ICI = 1


def slot_rng(master_seed: int, slot: int, purpose: int = PURPOSE_CHANNELS) -> np.random.Generator:
    """Generator for one (seed, slot, purpose) triple; slots are 2^192 apart."""
    if slot < 0:
        raise ValueError(f"slot must be nonnegative, got {slot}")
    key = np.array([master_seed & 0xFFFFFFFFFFFFFFFF, purpose], dtype=np.uint64)
    counter = np.array([0, 0, 0, slot], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


class ChannelStream:
    """Handle for per-slot substreams derived from one master seed."""

    def __init__(self, master_seed: int, purpose: int = PURPOSE_CHANNELS):
        self.master_seed = int(master_seed)
        self.purpose = int(purpose)

    def rng_for(self, slot: int) -> np.random.Generator:
        return slot_rng(self.master_seed, slot, self.purpose)

    def __repr__(self) -> str:
        return f"ChannelStream(seed={self.master_seed}, purpose={self.purpose})"
