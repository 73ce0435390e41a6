import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
TWO_POW_MINUS_53 = 1.0 / (1 << 53)


class Rng:
    """
    SplitMix64 stream. Identical seeds give identical streams everywhere,
    so test vectors can be shared across implementations.
    """

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def __repr__(self):
        return f"Rng(state={self.state:#018x})"

    def next_u64(self, count: int) -> np.ndarray:
        """Advance the stream by `count` draws and return them."""
        if count <= 0:
            return np.zeros(0, dtype=np.uint64)
        with np.errstate(over="ignore"):
            steps = np.arange(1, count + 1, dtype=np.uint64)
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN_GAMMA)
            z = (z ^ (z >> np.uint64(30))) * MIX1
            z = (z ^ (z >> np.uint64(27))) * MIX2
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + count * GOLDEN_GAMMA) & MASK64
        return z

    def uniform(self, count: int) -> np.ndarray:
        """Uniform samples in [0, 1) with 53 bits of mantissa."""
        return (self.next_u64(count) >> np.uint64(11)).astype(np.float64) * TWO_POW_MINUS_53

    def normal(self, rows: int, cols: int, dtype=np.float64) -> np.ndarray:
        n = rows * cols
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n].reshape(rows, cols).astype(dtype, copy=False)

    def spawn(self, tag: int) -> "Rng":
        """Independent child stream, used to give every layer its own weights."""
        return Rng(int(self.next_u64(1)[0]) ^ (int(tag) * GOLDEN_GAMMA & MASK64))


def rng_normal(rng: Rng, rows: int, cols: int, dtype=np.float64) -> np.ndarray:
    return rng.normal(rows, cols, dtype=dtype)
