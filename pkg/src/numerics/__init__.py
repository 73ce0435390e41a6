from src.numerics.linalg import (
    matmul,
    row_softmax,
    l2_normalize_rows,
    frobenius_norm,
    svd_small,
    ensure_finite,
)
from src.numerics.conv import conv2d
from src.numerics.Rng import Rng, rng_normal
