"""Counter-based random streams with per-index seed derivation.

Every scenario gets its own Philox stream keyed by (master seed, label,
index). A scenario's draw therefore depends neither on how many scenarios
are requested nor on which worker thread produces it.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ConfigError

CERT_LABEL = "cert"
VALID_LABEL = "valid"


def _label_key(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode()).digest()[:8], "little")


def derive_seed(master_seed: int, label: str, index: int) -> np.random.SeedSequence:
    if not (0 <= int(master_seed) < 2**64):
        raise ConfigError(f"master seed must be a 64-bit unsigned integer (got {master_seed})")
    if index < 0:
        raise ValueError(f"stream index must be >= 0 (got {index})")
    return np.random.SeedSequence(int(master_seed), spawn_key=(_label_key(label), int(index)))


def stream(master_seed: int, label: str, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(derive_seed(master_seed, label, index)))
