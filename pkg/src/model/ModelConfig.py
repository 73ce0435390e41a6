import hashlib
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from src.attention import EntropyScaleConfig, TttConfig
from src.errors import ContractViolation
from src.runner import ShardStrategy


class GlobalMode(Enum):
    SOFTMAX_REFERENCE = 'softmax_reference'
    TTT = 'ttt'
    LINEAR = 'linear'


class Precision(Enum):
    FP64 = '64'
    FP32 = '32'

    @property
    def dtype(self):
        return np.float64 if self is Precision.FP64 else np.float32


@dataclass(frozen=True)
class ExecutionConfig:
    """How TTT updates run. Results do not depend on these (within rounding)."""
    workers: int = 1
    strategy: ShardStrategy = ShardStrategy.CONTIGUOUS
    resident_limit: Optional[int] = None
    threads: Optional[int] = None

    def __post_init__(self):
        if self.workers < 1:
            raise ContractViolation(f"workers must be >= 1, got {self.workers}")
        if self.resident_limit is not None and self.resident_limit < 1:
            raise ContractViolation(f"resident_limit must be >= 1, got {self.resident_limit}")
        if self.workers > 1 and self.resident_limit is not None:
            raise ContractViolation("choose either sharded workers or offloading, not both")


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 4
    d: int = 64
    heads: int = 4
    expansion: int = 4
    global_mode: GlobalMode = GlobalMode.TTT
    ttt_cfg: TttConfig = field(default_factory=TttConfig)
    entropy_cfg: EntropyScaleConfig = field(default_factory=EntropyScaleConfig)
    seed: int = 42
    precision: Precision = Precision.FP64
    execution: ExecutionConfig = field(default_factory=ExecutionConfig)

    def __post_init__(self):
        if self.layers < 1:
            raise ContractViolation(f"layers must be >= 1, got {self.layers}")
        if self.heads < 1 or self.d % self.heads != 0:
            raise ContractViolation(f"d={self.d} is not divisible by heads={self.heads}")
        if self.ttt_cfg.expansion != self.expansion:
            object.__setattr__(self, "ttt_cfg", replace(self.ttt_cfg, expansion=self.expansion))

    @property
    def m(self) -> int:
        return self.expansion * self.d

    def canonical(self) -> str:
        """Fields that shape the weights or the update, one key=value per line."""
        t, e = self.ttt_cfg, self.entropy_cfg
        items = [
            ("layers", self.layers), ("d", self.d), ("heads", self.heads), ("expansion", self.expansion),
            ("steps", t.steps), ("lr", repr(t.lr)), ("ns_iters", t.ns_iters), ("eps", repr(t.eps)),
            ("conv_kernel_size", t.conv_kernel_size), ("conv_target", t.conv_target.value),
            ("loss", t.loss.value), ("scale_lr_by_minibatches", t.scale_lr_by_minibatches),
            ("ns_coefficients", ",".join(repr(c) for c in t.ns_coefficients)),
            ("entropy_scaling", e.enabled), ("n_train_tokens", e.n_train_tokens),
        ]
        return "\n".join(f"{k}={v}" for k, v in items)

    def config_hash(self) -> int:
        digest = hashlib.blake2b(self.canonical().encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
