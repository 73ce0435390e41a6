import numpy as np

from src.errors import ContractViolation


def conv2d(grid: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """
    Per-frame 2D cross-correlation with zero "same" padding.

    grid:   (frames, height, width, channels)
    kernel: (k, k, channels) for a depthwise filter, or
            (k, k, channels_in, channels_out) for a dense one.

    Frames never mix. The loop runs over the k*k filter taps and each tap is a
    whole-grid slice, so the cost stays linear in the number of tokens.
    """
    if grid.ndim != 4:
        raise ContractViolation(f"grid must be (frames, h, w, c), got shape {grid.shape}")
    if kernel.ndim not in (3, 4):
        raise ContractViolation(f"kernel must be (k, k, c) or (k, k, cin, cout), got shape {kernel.shape}")

    k = kernel.shape[0]
    if kernel.shape[1] != k:
        raise ContractViolation(f"kernel must be square, got {kernel.shape[:2]}")
    if k % 2 == 0:
        raise ContractViolation(f"kernel size must be odd, got {k}")

    frames, h, w, c = grid.shape
    if kernel.shape[2] != c:
        raise ContractViolation(f"kernel expects {kernel.shape[2]} channels, grid has {c}")

    depthwise = kernel.ndim == 3
    c_out = c if depthwise else kernel.shape[3]
    r = k // 2
    padded = np.pad(grid, ((0, 0), (r, r), (r, r), (0, 0)), mode="constant")

    out = np.zeros((frames, h, w, c_out), dtype=np.result_type(grid, kernel))
    for i in range(k):
        for j in range(k):
            window = padded[:, i:i + h, j:j + w, :]
            if depthwise:
                out += window * kernel[i, j]
            else:
                out += window @ kernel[i, j]
    return out


def identity_kernel(k: int, channels: int, depthwise: bool = True, dtype=np.float64) -> np.ndarray:
    if k % 2 == 0:
        raise ContractViolation(f"kernel size must be odd, got {k}")
    if depthwise:
        kernel = np.zeros((k, k, channels), dtype=dtype)
        kernel[k // 2, k // 2, :] = 1.0
    else:
        kernel = np.zeros((k, k, channels, channels), dtype=dtype)
        kernel[k // 2, k // 2] = np.eye(channels, dtype=dtype)
    return kernel
