from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from src.errors import ContractViolation
from src.numerics import Rng

DEFAULT_SPECIALS_PER_FRAME = 2  # camera + register


@dataclass(frozen=True, eq=False)
class TokenGrid:
    """
    Frame-major token sequence. Every frame holds its special tokens first,
    followed by grid_h x grid_w patch tokens in row-major order.
    """
    n_frames: int
    grid_h: int
    grid_w: int
    d: int
    tokens: np.ndarray
    specials_per_frame: int = DEFAULT_SPECIALS_PER_FRAME

    def __post_init__(self):
        expected = (self.n_frames * self.tokens_per_frame, self.d)
        if self.tokens.shape != expected:
            raise ContractViolation(f"tokens must have shape {expected}, got {self.tokens.shape}")

    def __repr__(self):
        return (f"TokenGrid(frames={self.n_frames}, grid={self.grid_h}x{self.grid_w}, "
                f"d={self.d}, specials={self.specials_per_frame})")

    def __len__(self):
        return self.tokens.shape[0]

    @property
    def patches_per_frame(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def tokens_per_frame(self) -> int:
        return self.patches_per_frame + self.specials_per_frame

    @property
    def grid(self) -> Tuple[int, int, int]:
        return self.n_frames, self.grid_h, self.grid_w

    @property
    def special_mask(self) -> np.ndarray:
        frame_mask = np.zeros(self.tokens_per_frame, dtype=bool)
        frame_mask[:self.specials_per_frame] = True
        return np.tile(frame_mask, self.n_frames)

    def frame_tokens(self, frame: int) -> np.ndarray:
        t = self.tokens_per_frame
        return self.tokens[frame * t:(frame + 1) * t]

    def with_tokens(self, tokens: np.ndarray) -> "TokenGrid":
        return TokenGrid(self.n_frames, self.grid_h, self.grid_w, self.d, tokens, self.specials_per_frame)

    def select_frames(self, frames: Sequence[int]) -> "TokenGrid":
        """Sub-grid made of the given frames, in the given order."""
        frames = list(frames)
        if frames:
            tokens = np.concatenate([self.frame_tokens(f) for f in frames])
        else:
            tokens = np.zeros((0, self.d), dtype=self.tokens.dtype)
        return TokenGrid(len(frames), self.grid_h, self.grid_w, self.d, tokens, self.specials_per_frame)


def tokenize_synthetic(n_frames: int, grid_h: int, grid_w: int, d: int, seed: int,
                       specials_per_frame: int = DEFAULT_SPECIALS_PER_FRAME,
                       dtype=np.float64) -> TokenGrid:
    """
    Deterministic pseudo-scene: every frame's patch tokens are a shared scene
    latent plus a per-frame offset and per-token noise, so frames of one scene
    are correlated. Special tokens are drawn independently.
    """
    if min(n_frames, grid_h, grid_w, d) < 1:
        raise ContractViolation(f"all counts must be >= 1, got frames={n_frames} grid={grid_h}x{grid_w} d={d}")
    rng = Rng(seed)
    patches = grid_h * grid_w
    latent = rng.normal(patches, d)
    blocks = []
    for _ in range(n_frames):
        offset = 0.3 * rng.normal(1, d)
        noise = 0.3 * rng.normal(patches, d)
        specials = rng.normal(specials_per_frame, d)
        blocks.append(specials)
        blocks.append(latent + offset + noise)
    tokens = np.concatenate(blocks).astype(dtype, copy=False)
    return TokenGrid(n_frames, grid_h, grid_w, d, tokens, specials_per_frame)
