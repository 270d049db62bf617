"""Deterministic random-stream derivation.

Every random draw in an experiment traces back to one master seed through
string-labelled derivations, so independent units (folds, sweep points,
model inits) get decorrelated streams without order coupling.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master_seed: int, *labels) -> int:
    """Stable 63-bit seed from a master seed and a label path."""
    text = ":".join([str(int(master_seed))] + [str(l) for l in labels])
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def derive_rng(master_seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, *labels))
