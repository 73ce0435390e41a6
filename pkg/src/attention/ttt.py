"""
Test-time-trained global layer.

The K -> V' mapping of a global layer is compressed into a SwiGLU fast-weight
MLP by a few Muon steps (update stage); queries are then answered by applying
the MLP (apply stage). Both stages are linear in the number of tokens.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from src.attention.FastWeights import FastWeights
from src.attention.softmax import AttentionParams, NormMode, project_qkv
from src.errors import ContractViolation
from src.numerics import Rng, conv2d, frobenius_norm, matmul
from src.numerics.conv import identity_kernel

NS_COEFFICIENTS = (3.4445, -4.7750, 2.0315)


class ConvTarget(Enum):
    VALUES = 'values'
    KEYS = 'keys'
    KEYS_AND_VALUES = 'keys_and_values'
    NONE = 'none'


class LossKind(Enum):
    DOT = 'dot'
    RESIDUAL = 'residual'


class BlockMode(Enum):
    UPDATE_AND_APPLY = 'update_and_apply'
    FROZEN_QUERY = 'frozen_query'


@dataclass(frozen=True)
class TttConfig:
    steps: int = 2
    lr: float = 0.1
    ns_iters: int = 5
    eps: float = 1e-7
    conv_kernel_size: int = 3
    conv_target: ConvTarget = ConvTarget.VALUES
    expansion: int = 4
    loss: LossKind = LossKind.DOT
    scale_lr_by_minibatches: bool = False
    ns_coefficients: Tuple[float, float, float] = NS_COEFFICIENTS

    def __post_init__(self):
        if self.steps < 0:
            raise ContractViolation(f"steps must be >= 0, got {self.steps}")
        if self.lr < 0:
            raise ContractViolation(f"lr must be >= 0, got {self.lr}")
        if self.ns_iters < 1:
            raise ContractViolation(f"ns_iters must be >= 1, got {self.ns_iters}")
        if self.eps <= 0:
            raise ContractViolation(f"eps must be positive, got {self.eps}")
        if self.conv_kernel_size < 1 or self.conv_kernel_size % 2 == 0:
            raise ContractViolation(f"conv_kernel_size must be odd, got {self.conv_kernel_size}")
        if self.expansion < 1:
            raise ContractViolation(f"expansion must be >= 1, got {self.expansion}")


@dataclass(frozen=True, eq=False)
class TttLayerParams:
    attn: AttentionParams
    theta0: FastWeights
    conv_kernel: np.ndarray
    cfg: TttConfig = field(default_factory=TttConfig)

    def __post_init__(self):
        if self.attn.norm_mode is not NormMode.L2:
            raise ContractViolation("TTT layers require L2-normalized queries and keys")
        if self.theta0.d != self.attn.d:
            raise ContractViolation(f"fast weights have d={self.theta0.d}, projections have d={self.attn.d}")
        k = self.cfg.conv_kernel_size
        if self.conv_kernel.shape[:2] != (k, k) or self.conv_kernel.shape[2] != self.attn.d:
            raise ContractViolation(f"conv kernel shape {self.conv_kernel.shape} does not match k={k}, d={self.attn.d}")

    @classmethod
    def seeded(cls, attn: AttentionParams, cfg: TttConfig, rng: Rng, kernel_noise: float = 0.1) -> "TttLayerParams":
        d = attn.d
        dtype = attn.w_q.dtype
        theta0 = FastWeights.seeded(d, cfg.expansion, rng, dtype)
        k = cfg.conv_kernel_size
        noise = rng.normal(k * k, d, dtype).reshape(k, k, d) * kernel_noise
        kernel = identity_kernel(k, d, dtype=dtype) + noise
        return cls(attn, theta0, kernel, cfg)


def silu(z: np.ndarray) -> np.ndarray:
    return z * _sigmoid(z)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -z))


def silu_grad(z: np.ndarray) -> np.ndarray:
    s = _sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


def _check_rows(theta: FastWeights, x: np.ndarray, what: str):
    if x.ndim != 2 or x.shape[1] != theta.d:
        raise ContractViolation(f"{what} must be n x {theta.d}, got {x.shape}")


def fast_forward(theta: FastWeights, x: np.ndarray) -> np.ndarray:
    """(silu(X w1) * (X w3)) w2"""
    _check_rows(theta, x, "input")
    return matmul(silu(x @ theta.w1) * (x @ theta.w3), theta.w2)


def ttt_apply(theta: FastWeights, q: np.ndarray) -> np.ndarray:
    return fast_forward(theta, q)


def short_conv2d_values(v: np.ndarray, grid: Tuple[int, int, int], special_mask: np.ndarray,
                        kernel: np.ndarray) -> np.ndarray:
    """
    Reshape patch-token rows onto their (frames, h, w) grid, convolve each frame,
    flatten back. Special-token rows are copied through untouched.
    """
    frames, h, w = grid
    special_mask = np.asarray(special_mask, dtype=bool)
    if special_mask.shape != (v.shape[0],):
        raise ContractViolation(f"mask has {special_mask.shape[0]} entries for {v.shape[0]} rows")
    patches = ~special_mask
    if int(patches.sum()) != frames * h * w:
        raise ContractViolation(
            f"{int(patches.sum())} patch tokens do not fill a {frames}x{h}x{w} grid")
    mixed = conv2d(v[patches].reshape(frames, h, w, v.shape[1]), kernel)
    out = v.copy()
    out[patches] = mixed.reshape(-1, v.shape[1])
    return out


def inner_loss(theta: FastWeights, k: np.ndarray, vp: np.ndarray, kind: LossKind = LossKind.DOT) -> float:
    """Negative dot product -sum_i T(k_i).v'_i, or 0.5*||T(K)-V'||^2 for the residual form."""
    if k.shape[0] != vp.shape[0]:
        raise ContractViolation(f"K has {k.shape[0]} rows, V' has {vp.shape[0]}")
    y = fast_forward(theta, k)
    if kind is LossKind.DOT:
        return -float(np.sum(y * vp))
    r = y - vp
    return 0.5 * float(np.sum(r * r))


def inner_grad(theta: FastWeights, k: np.ndarray, vp: np.ndarray, kind: LossKind = LossKind.DOT) -> FastWeights:
    """Analytic gradient of inner_loss with respect to (w1, w3, w2)."""
    _check_rows(theta, k, "K")
    if vp.shape != k.shape:
        raise ContractViolation(f"V' must match K shape {k.shape}, got {vp.shape}")

    z1 = k @ theta.w1
    h = silu(z1)
    u = k @ theta.w3
    if kind is LossKind.DOT:
        g_out = -vp
    else:
        g_out = matmul(h * u, theta.w2) - vp
    grad_w2 = (h * u).T @ g_out
    d_hidden = g_out @ theta.w2.T
    grad_w3 = k.T @ (d_hidden * h)
    grad_w1 = k.T @ (d_hidden * u * silu_grad(z1))
    return FastWeights(grad_w1, grad_w3, grad_w2)


def newton_schulz5(g: np.ndarray, iters: int = 5, eps: float = 1e-7,
                   coefficients: Sequence[float] = NS_COEFFICIENTS) -> np.ndarray:
    """Quintic Newton-Schulz iteration pushing the singular values of G towards 1."""
    if iters < 1:
        raise ContractViolation(f"iters must be >= 1, got {iters}")
    a, b, c = coefficients
    x = g / (frobenius_norm(g) + eps)
    # X X^T is cheaper on the wide orientation; the polynomial commutes with transposition
    tall = x.shape[0] > x.shape[1]
    if tall:
        x = x.T
    for _ in range(iters):
        gram = x @ x.T
        x = a * x + (b * gram + c * (gram @ gram)) @ x
    return x.T if tall else x


def muon_step(theta: FastWeights, grad: FastWeights, lr: float, ns_iters: int = 5, eps: float = 1e-7,
              coefficients: Sequence[float] = NS_COEFFICIENTS) -> FastWeights:
    if lr < 0:
        raise ContractViolation(f"lr must be >= 0, got {lr}")
    updated = [w - lr * newton_schulz5(g, ns_iters, eps, coefficients) for w, g in zip(theta, grad)]
    return FastWeights(*updated)


def ttt_update(theta0: FastWeights, k: np.ndarray, vp: np.ndarray, cfg: TttConfig) -> FastWeights:
    theta = theta0
    for _ in range(cfg.steps):
        grad = inner_grad(theta, k, vp, cfg.loss)
        theta = muon_step(theta, grad, cfg.lr, cfg.ns_iters, cfg.eps, cfg.ns_coefficients)
    return theta


def prepare_ttt_inputs(tokens: np.ndarray, grid: Tuple[int, int, int], special_mask: np.ndarray,
                       params: TttLayerParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Q, the (optionally mixed) keys and the mixed values V' fed to the update."""
    q, k, v = project_qkv(tokens, params.attn, params.cfg.eps)
    target = params.cfg.conv_target
    if target in (ConvTarget.KEYS, ConvTarget.KEYS_AND_VALUES):
        k = short_conv2d_values(k, grid, special_mask, params.conv_kernel)
    if target in (ConvTarget.VALUES, ConvTarget.KEYS_AND_VALUES):
        v = short_conv2d_values(v, grid, special_mask, params.conv_kernel)
    return q, k, v


def ttt_block(tokens: np.ndarray, grid: Tuple[int, int, int], special_mask: np.ndarray,
              params: TttLayerParams, mode: BlockMode = BlockMode.UPDATE_AND_APPLY,
              state_in: Optional[FastWeights] = None, updater=None) -> Tuple[np.ndarray, FastWeights]:
    """
    Global TTT layer: update the fast weights on (K, V') and apply them to Q.

    `updater(theta0, K, V', cfg)` replaces ttt_update when the update is sharded
    or offloaded; it must return fast weights.
    """
    if mode is BlockMode.UPDATE_AND_APPLY:
        if state_in is not None:
            raise ContractViolation("update_and_apply starts from theta0 and takes no state_in")
        q, k, vp = prepare_ttt_inputs(tokens, grid, special_mask, params)
        theta = (updater or ttt_update)(params.theta0, k, vp, params.cfg)
    else:
        if state_in is None:
            raise ContractViolation("frozen_query requires the stored fast weights as state_in")
        q, _, _ = project_qkv(tokens, params.attn, params.cfg.eps)
        theta = state_in
    out = ttt_apply(theta, q)
    return tokens + matmul(out, params.attn.w_o.T), theta


def ns_flops(d: int, m: int, ns_iters: int = 5) -> int:
    """Newton-Schulz cost per step; independent of the token count."""
    return ns_iters * 4 * max(d, m) ** 3


def flops_ttt(n_tokens: int, d: int, m: int, steps: int, ns_iters: int = 5) -> int:
    """
    steps * (12*n*d*m gradient + NS) + 6*n*d*m apply + 6*n*d^2 projections.
    """
    return steps * (12 * n_tokens * d * m + ns_flops(d, m, ns_iters)) + 6 * n_tokens * d * m + 6 * n_tokens * d * d
