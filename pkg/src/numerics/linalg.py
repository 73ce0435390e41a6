"""
Dense kernels shared by every attention path.

Matrices are plain 2-D numpy arrays (float64 unless a caller asks for float32).
All functions here are pure: they never write into their arguments.
"""
import numpy as np

from src.errors import ContractViolation, OracleFailure

JACOBI_MAX_SWEEPS = 100
SVD_MAX_DIM = 512


def ensure_finite(m: np.ndarray, what: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(m)):
        raise ContractViolation(f"{what} contains NaN or Inf entries")
    return m


def _require_2d(m: np.ndarray, what: str):
    if m.ndim != 2:
        raise ContractViolation(f"{what} must be 2-D, got shape {m.shape}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _require_2d(a, "left operand")
    _require_2d(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(f"cannot multiply {a.shape} by {b.shape}")
    return ensure_finite(a @ b, "matmul result")


def row_softmax(m: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """softmax(scale * row) for every row, with per-row max subtraction."""
    _require_2d(m, "softmax input")
    z = scale * m
    z = z - np.max(z, axis=1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=1, keepdims=True)


def l2_normalize_rows(m: np.ndarray, eps: float = 1e-7) -> np.ndarray:
    if eps <= 0:
        raise ContractViolation(f"eps must be positive, got {eps}")
    norms = np.sqrt(np.sum(m * m, axis=-1, keepdims=True))
    return m / (norms + eps)


def frobenius_norm(m: np.ndarray) -> float:
    return float(np.sqrt(np.sum(m * m)))


def svd_small(m: np.ndarray):
    """
    One-sided Jacobi SVD, returns (U, S, V) with m ~= U @ diag(S) @ V.T.

    Only used as a test oracle. S is non-negative and sorted descending;
    U has min(rows, cols) columns.
    """
    _require_2d(m, "svd input")
    rows, cols = m.shape
    if rows > SVD_MAX_DIM or cols > SVD_MAX_DIM:
        raise ContractViolation(f"svd_small supports at most {SVD_MAX_DIM}x{SVD_MAX_DIM}, got {m.shape}")

    # Rotate columns of the taller orientation so that A has at most as many columns as rows
    transposed = rows < cols
    a = np.array(m.T if transposed else m, dtype=np.float64)
    n = a.shape[1]
    v = np.eye(n)
    tol = np.finfo(np.float64).eps * a.shape[0]

    converged = False
    for _ in range(JACOBI_MAX_SWEEPS):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                ap, aq = a[:, p], a[:, q]
                alpha = float(ap @ ap)
                beta = float(aq @ aq)
                gamma = float(ap @ aq)
                if abs(gamma) <= tol * np.sqrt(alpha * beta) or gamma == 0.0:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta)) if zeta != 0 else 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                new_p = c * ap - s * aq
                new_q = s * ap + c * aq
                a[:, p], a[:, q] = new_p, new_q
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        if not rotated:
            converged = True
            break
    if not converged:
        raise OracleFailure(f"Jacobi SVD did not converge after {JACOBI_MAX_SWEEPS} sweeps")

    s = np.sqrt(np.sum(a * a, axis=0))
    order = np.argsort(-s, kind="stable")
    s = s[order]
    a = a[:, order]
    v = v[:, order]
    u = np.zeros_like(a)
    nonzero = s > 0
    u[:, nonzero] = a[:, nonzero] / s[nonzero]

    if transposed:
        return v, s, u
    return u, s, v
