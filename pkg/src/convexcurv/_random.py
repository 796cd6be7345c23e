import hashlib
import json

import numpy as np


def derive_seed(seed: int, *parts) -> int:
    """Derive a 63-bit child seed from ``seed`` and a purpose tuple.

    The result depends only on the arguments, never on call order, so work
    units can run in any order (or in parallel) and stay reproducible.
    """
    payload = json.dumps([int(seed), [str(p) for p in parts]]).encode()
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little") >> 1


def rng_for(seed: int, *parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *parts))
