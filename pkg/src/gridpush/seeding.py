"""Deterministic random-stream derivation.

All randomness in the package flows from a single root seed. Each phase
(exploration, identification init, planning, ...) draws from its own child
stream derived from the root seed and a string label, so adding draws in one
phase never perturbs another.
"""

import hashlib

import numpy as np


def _label_key(label: str) -> tuple[int, ...]:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))


def stream(root_seed: int, label: str) -> np.random.Generator:
    """Child generator for `label`, reproducible given (root_seed, label)."""
    ss = np.random.SeedSequence(entropy=int(root_seed), spawn_key=_label_key(label))
    return np.random.Generator(np.random.PCG64(ss))
