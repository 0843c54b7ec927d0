"""Access to the frozen exact-arithmetic oracle values."""

import json
from functools import lru_cache
from pathlib import Path

import numpy as np

ORACLES = Path(__file__).parent / "oracles" / "frozen.json"


@lru_cache(maxsize=1)
def frozen() -> dict:
    return json.loads(ORACLES.read_text(encoding="utf-8"))


def cmat(data) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


def cnum(pair) -> complex:
    return complex(pair[0], pair[1])
