"""
Kernelized linear attention baseline. A positive feature map phi stands in for
the softmax kernel, so every head sums phi(K)^T V once and each query reads the
summary in time independent of the token count:

    out = phi(Q) (phi(K)^T V) / (phi(Q) sum_i phi(k_i) + eps)

phi(x) = elu(x W) + 1 with a seeded projection W per head.
"""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.attention.softmax import AttentionParams, project_qkv
from src.errors import ContractViolation
from src.numerics import Rng, ensure_finite, matmul

DEFAULT_NORMALIZER_EPS = 1e-6


def elu_plus_one(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, z + 1.0, np.exp(np.minimum(z, 0.0)))


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """One projection per head, shape heads x head_dim x features."""
    weights: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 3:
            raise ContractViolation(f"feature map weights must be heads x head_dim x features, got {self.weights.shape}")
        ensure_finite(self.weights, "feature map")

    @property
    def heads(self) -> int:
        return self.weights.shape[0]

    @property
    def head_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def features(self) -> int:
        return self.weights.shape[2]

    def __call__(self, x: np.ndarray, head: int) -> np.ndarray:
        return elu_plus_one(x @ self.weights[head])

    @classmethod
    def seeded(cls, d: int, heads: int, rng: Rng, features: Optional[int] = None,
               dtype=np.float64) -> "FeatureMap":
        if heads < 1 or d % heads != 0:
            raise ContractViolation(f"d={d} is not divisible by heads={heads}")
        hd = d // heads
        r = features or hd
        w = rng.normal(heads * hd, r, dtype).reshape(heads, hd, r) / math.sqrt(hd)
        return cls(w)


def linear_attention_global(q: np.ndarray, k: np.ndarray, v: np.ndarray, feature_map: FeatureMap,
                            eps: float = DEFAULT_NORMALIZER_EPS) -> np.ndarray:
    if q.shape != k.shape or q.shape != v.shape:
        raise ContractViolation(f"inconsistent Q/K/V shapes {q.shape}, {k.shape}, {v.shape}")
    n, d = q.shape
    if feature_map.heads * feature_map.head_dim != d:
        raise ContractViolation(
            f"feature map covers {feature_map.heads}x{feature_map.head_dim} columns, tokens have {d}")
    hd = feature_map.head_dim
    out = np.empty_like(v)
    for h in range(feature_map.heads):
        cols = slice(h * hd, (h + 1) * hd)
        qf = feature_map(q[:, cols], h)
        kf = feature_map(k[:, cols], h)
        summary = kf.T @ v[:, cols]
        normalizer = qf @ kf.sum(axis=0)
        out[:, cols] = (qf @ summary) / (normalizer[:, None] + eps)
    return ensure_finite(out, "linear attention output")


def linear_attention_block(tokens: np.ndarray, params: AttentionParams, feature_map: FeatureMap,
                           eps: float = 1e-7) -> np.ndarray:
    """Same projections and residual as the softmax block, linear kernel in between."""
    q, k, v = project_qkv(tokens, params, eps)
    o = linear_attention_global(q, k, v, feature_map)
    return tokens + matmul(o, params.w_o.T)


def flops_linear(n_tokens: int, d: int, heads: int, features: Optional[int] = None) -> int:
    """
    Per head: 4*n*hd*r for the two feature maps, 2*n*r*hd each for the summary
    and the readout, 2*n*r for the normalizer. Plus 6*n*d^2 for the projections.
    """
    hd = d // heads
    r = features or hd
    return heads * (8 * n_tokens * hd * r + 2 * n_tokens * r) + 6 * n_tokens * d * d
