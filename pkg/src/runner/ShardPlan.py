from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np

from src.errors import ContractViolation


class ShardStrategy(Enum):
    CONTIGUOUS = 'contiguous'
    ROUND_ROBIN = 'round_robin'


@dataclass(frozen=True)
class ShardPlan:
    n_frames: int
    assignments: Tuple[int, ...]
    n_workers: int
    strategy: ShardStrategy

    def __post_init__(self):
        if self.n_workers < 1:
            raise ContractViolation(f"n_workers must be >= 1, got {self.n_workers}")
        if len(self.assignments) != self.n_frames:
            raise ContractViolation(f"{len(self.assignments)} assignments for {self.n_frames} frames")
        bad = [w for w in self.assignments if not 0 <= w < self.n_workers]
        if bad:
            raise ContractViolation(f"worker indices {bad} out of range for {self.n_workers} workers")

    def frames_of(self, worker: int) -> List[int]:
        return [f for f, w in enumerate(self.assignments) if w == worker]

    def shard_sizes(self) -> List[int]:
        return [len(self.frames_of(w)) for w in range(self.n_workers)]


def make_shard_plan(n_frames: int, n_workers: int,
                    strategy: ShardStrategy = ShardStrategy.CONTIGUOUS) -> ShardPlan:
    if n_workers < 1:
        raise ContractViolation(f"n_workers must be >= 1, got {n_workers}")
    if strategy is ShardStrategy.ROUND_ROBIN:
        assignments = tuple(f % n_workers for f in range(n_frames))
    else:
        # first n_frames % n_workers blocks get one extra frame
        base, extra = divmod(n_frames, n_workers)
        assignments = []
        for w in range(n_workers):
            assignments += [w] * (base + (1 if w < extra else 0))
        assignments = tuple(assignments)
    return ShardPlan(n_frames, assignments, n_workers, strategy)


def split_rows(k: np.ndarray, vp: np.ndarray, plan: ShardPlan,
               rows_per_frame: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Per-worker (K, V') blocks; each worker's rows keep ascending frame order."""
    if k.shape[0] != plan.n_frames * rows_per_frame or vp.shape[0] != k.shape[0]:
        raise ContractViolation(
            f"{k.shape[0]} rows do not match {plan.n_frames} frames x {rows_per_frame} rows")
    shards = []
    for w in range(plan.n_workers):
        rows = _frame_rows(plan.frames_of(w), rows_per_frame)
        shards.append((k[rows], vp[rows]))
    return shards


def _frame_rows(frames: Sequence[int], rows_per_frame: int) -> np.ndarray:
    if not frames:
        return np.zeros(0, dtype=np.intp)
    return np.concatenate([np.arange(f * rows_per_frame, (f + 1) * rows_per_frame) for f in frames])
