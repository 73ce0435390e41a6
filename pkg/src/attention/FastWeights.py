import math
from typing import Iterator, Tuple

import numpy as np

from src.errors import ContractViolation
from src.numerics import Rng, ensure_finite


def _frozen(m: np.ndarray) -> np.ndarray:
    view = np.asarray(m).view()
    view.setflags(write=False)
    return view


class FastWeights:
    """
    SwiGLU fast-weight MLP: w1 (gate, d x m), w3 (up, d x m), w2 (down, m x d).

    Instances are snapshots. The arrays are exposed as read-only views and every
    update builds a new FastWeights, so a stored scene can be shared freely.
    Gradients use the same class.
    """

    def __init__(self, w1: np.ndarray, w3: np.ndarray, w2: np.ndarray):
        if w1.ndim != 2 or w1.shape != w3.shape or w2.shape != (w1.shape[1], w1.shape[0]):
            raise ContractViolation(f"inconsistent fast-weight shapes w1={w1.shape} w3={w3.shape} w2={w2.shape}")
        self.w1 = _frozen(ensure_finite(w1, "w1"))
        self.w3 = _frozen(ensure_finite(w3, "w3"))
        self.w2 = _frozen(ensure_finite(w2, "w2"))

    def __repr__(self):
        return f"FastWeights(d={self.d}, m={self.m}, dtype={self.w1.dtype})"

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter((self.w1, self.w3, self.w2))

    def __add__(self, other: "FastWeights") -> "FastWeights":
        if not isinstance(other, FastWeights):
            return NotImplemented
        return FastWeights(self.w1 + other.w1, self.w3 + other.w3, self.w2 + other.w2)

    def scale(self, factor: float) -> "FastWeights":
        return FastWeights(self.w1 * factor, self.w3 * factor, self.w2 * factor)

    def astype(self, dtype) -> "FastWeights":
        if self.w1.dtype == dtype:
            return self
        return FastWeights(*(w.astype(dtype) for w in self))

    @property
    def d(self) -> int:
        return self.w1.shape[0]

    @property
    def m(self) -> int:
        return self.w1.shape[1]

    @property
    def nbytes(self) -> int:
        return sum(w.nbytes for w in self)

    def to_bytes(self) -> bytes:
        return b"".join(np.ascontiguousarray(w).tobytes() for w in self)

    def max_relative_difference(self, other: "FastWeights") -> float:
        """Largest |a-b| / max(|b|_max, tiny) over the three matrices."""
        worst = 0.0
        for a, b in zip(self, other):
            if a.shape != b.shape:
                raise ContractViolation(f"cannot compare shapes {a.shape} and {b.shape}")
            denom = max(float(np.max(np.abs(b))) if b.size else 0.0, np.finfo(np.float64).tiny)
            diff = float(np.max(np.abs(a - b))) if a.size else 0.0
            worst = max(worst, diff / denom)
        return worst

    @classmethod
    def zeros(cls, d: int, m: int, dtype=np.float64) -> "FastWeights":
        return cls(np.zeros((d, m), dtype), np.zeros((d, m), dtype), np.zeros((m, d), dtype))

    @classmethod
    def zeros_like(cls, other: "FastWeights") -> "FastWeights":
        return cls.zeros(other.d, other.m, other.w1.dtype)

    @classmethod
    def seeded(cls, d: int, expansion: int, rng: Rng, dtype=np.float64) -> "FastWeights":
        m = expansion * d
        scale = 1.0 / math.sqrt(d)
        w1 = rng.normal(d, m, dtype) * scale
        w3 = rng.normal(d, m, dtype) * scale
        w2 = rng.normal(m, d, dtype) * scale
        return cls(w1, w3, w2)
