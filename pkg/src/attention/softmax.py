"""
Quadratic global attention, kept as the accuracy and runtime baseline for the
test-time-trained layer.
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from src.errors import ContractViolation
from src.numerics import Rng, l2_normalize_rows, matmul, row_softmax, ensure_finite

DEFAULT_N_TRAIN_TOKENS = 32856
DEFAULT_QUERY_BLOCK = 2048


class NormMode(Enum):
    L2 = 'l2'
    NONE = 'none'


@dataclass(frozen=True)
class EntropyScaleConfig:
    n_train_tokens: int = DEFAULT_N_TRAIN_TOKENS
    enabled: bool = True

    def __post_init__(self):
        if self.n_train_tokens < 2:
            raise ContractViolation(f"n_train_tokens must be >= 2, got {self.n_train_tokens}")


@dataclass(frozen=True, eq=False)
class AttentionParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    heads: int
    lambda_base: Optional[float] = None
    norm_mode: NormMode = NormMode.L2

    def __post_init__(self):
        d = self.w_q.shape[0]
        for name in ("w_q", "w_k", "w_v", "w_o"):
            w = getattr(self, name)
            if w.shape != (d, d):
                raise ContractViolation(f"{name} must be {d}x{d}, got {w.shape}")
            ensure_finite(w, name)
        if self.heads < 1 or d % self.heads != 0:
            raise ContractViolation(f"d={d} is not divisible by heads={self.heads}")
        if self.lambda_base is None:
            object.__setattr__(self, "lambda_base", 1.0 / math.sqrt(d // self.heads))

    @property
    def d(self) -> int:
        return self.w_q.shape[0]

    @classmethod
    def seeded(cls, d: int, heads: int, rng: Rng, norm_mode: NormMode = NormMode.L2,
               dtype=np.float64) -> "AttentionParams":
        scale = 1.0 / math.sqrt(d)
        w_q, w_k, w_v, w_o = (rng.normal(d, d, dtype) * scale for _ in range(4))
        return cls(w_q, w_k, w_v, w_o, heads, norm_mode=norm_mode)


def _normalize_heads(x: np.ndarray, heads: int, eps: float) -> np.ndarray:
    n, d = x.shape
    per_head = x.reshape(n, heads, d // heads)
    return l2_normalize_rows(per_head, eps).reshape(n, d)


def project_qkv(tokens: np.ndarray, params: AttentionParams,
                eps: float = 1e-7) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if tokens.ndim != 2 or tokens.shape[1] != params.d:
        raise ContractViolation(f"tokens must be n x {params.d}, got {tokens.shape}")
    q = matmul(tokens, params.w_q.T)
    k = matmul(tokens, params.w_k.T)
    v = matmul(tokens, params.w_v.T)
    if params.norm_mode is NormMode.L2:
        q = _normalize_heads(q, params.heads, eps)
        k = _normalize_heads(k, params.heads, eps)
    return q, k, v


def entropy_scale(lambda_base: float, n_tokens: int, cfg: EntropyScaleConfig) -> float:
    """lambda * max(1, log_{N_T} N); identity when disabled or N <= N_T."""
    if n_tokens < 1:
        raise ContractViolation(f"n_tokens must be >= 1, got {n_tokens}")
    if not cfg.enabled or n_tokens <= cfg.n_train_tokens:
        return lambda_base
    return lambda_base * max(1.0, math.log(n_tokens) / math.log(cfg.n_train_tokens))


def sdpa_global(q: np.ndarray, k: np.ndarray, v: np.ndarray, heads: int, lam: float,
                query_block: int = DEFAULT_QUERY_BLOCK) -> np.ndarray:
    """
    softmax(lam * Q_h K_h^T) V_h for every head, heads concatenated in order.

    Query rows are processed in blocks to bound the attention buffer; every row
    still sees every key, so blocking does not change the result.
    """
    if q.shape != k.shape or q.shape[0] != v.shape[0] or q.shape[1] != v.shape[1]:
        raise ContractViolation(f"inconsistent Q/K/V shapes {q.shape}, {k.shape}, {v.shape}")
    n, d = q.shape
    if d % heads != 0:
        raise ContractViolation(f"d={d} is not divisible by heads={heads}")
    hd = d // heads

    out = np.empty_like(v)
    for h in range(heads):
        cols = slice(h * hd, (h + 1) * hd)
        kh_t = k[:, cols].T
        vh = v[:, cols]
        for start in range(0, n, query_block):
            rows = slice(start, min(start + query_block, n))
            weights = row_softmax(q[rows, cols] @ kh_t, lam)
            out[rows, cols] = weights @ vh
    return out


def attention_block_reference(tokens: np.ndarray, params: AttentionParams,
                              cfg: EntropyScaleConfig = EntropyScaleConfig(),
                              eps: float = 1e-7,
                              query_block: int = DEFAULT_QUERY_BLOCK) -> np.ndarray:
    q, k, v = project_qkv(tokens, params, eps)
    lam = entropy_scale(params.lambda_base, tokens.shape[0], cfg)
    o = sdpa_global(q, k, v, params.heads, lam, query_block)
    return tokens + matmul(o, params.w_o.T)


def flops_sdpa(n_tokens: int, d: int, heads: int) -> int:
    """
    4*n^2*d for the two n x n contractions (QK^T and AV, 2 flops per MAC)
    plus 6*n*d^2 for the projections. Head count does not change the total.
    """
    return 4 * n_tokens * n_tokens * d + 6 * n_tokens * d * d
