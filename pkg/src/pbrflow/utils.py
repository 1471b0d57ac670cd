"""Seeding and determinism helpers."""
from __future__ import annotations

import random

import numpy as np
import torch


def seed_all(seed: int) -> None:
    """Seed python, numpy and torch global RNGs."""
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


_DEFAULT_THREADS = torch.get_num_threads()


def enable_determinism(enabled: bool = True) -> None:
    """Force single-threaded, deterministic torch execution.

    Bit-identical reruns require a fixed reduction order, which torch only
    guarantees on CPU with one thread.  Disabling restores the process
    default thread count.
    """
    if enabled:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
    else:
        torch.set_num_threads(_DEFAULT_THREADS)
        torch.use_deterministic_algorithms(False)


def derive_seed(base: int, *streams: int) -> int:
    """Stable sub-seed for independent RNG streams."""
    ss = np.random.SeedSequence([int(base) & 0xFFFFFFFF, *[int(s) & 0xFFFFFFFF for s in streams]])
    return int(ss.generate_state(1)[0])
