from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Iterator, List, Sequence, Tuple

import numpy as np

from src.errors import ContractViolation, RunError
from src.runner.EventEmitter import event_emitter

Minibatch = Tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class ResidencyReport:
    peak_resident_minibatches: int
    loads: int
    stores: int


class MinibatchStream:
    """
    Re-openable source of (K, V') minibatches kept in host memory.

    `source` is called once per pass and must yield `n_minibatches` items; a
    pass that ends early is a run error.
    """

    def __init__(self, source: Callable[[], Iterable[Minibatch]], n_minibatches: int):
        if n_minibatches < 0:
            raise ContractViolation(f"n_minibatches must be >= 0, got {n_minibatches}")
        self.source = source
        self.n_minibatches = n_minibatches

    @classmethod
    def from_list(cls, minibatches: Sequence[Minibatch]) -> "MinibatchStream":
        minibatches = list(minibatches)
        return cls(lambda: iter(minibatches), len(minibatches))

    def open(self) -> Iterator[Minibatch]:
        return iter(self.source())


class MinibatchStore:
    """
    Active set of minibatches standing in for device memory. Loading beyond the
    limit is a hard failure; counters record traffic between the parked (host)
    and active (device) sets.
    """

    def __init__(self, resident_limit: int):
        if resident_limit < 1:
            raise ContractViolation(f"resident_limit must be >= 1, got {resident_limit}")
        self.resident_limit = resident_limit
        self.active: Dict[int, Minibatch] = {}
        self.loads = 0
        self.stores = 0
        self.peak = 0

    @property
    def full(self) -> bool:
        return len(self.active) >= self.resident_limit

    def load(self, index: int, minibatch: Minibatch):
        if self.full:
            raise RunError(f"loading minibatch {index} would exceed the resident limit of {self.resident_limit}")
        self.active[index] = minibatch
        self.loads += 1
        self.peak = max(self.peak, len(self.active))
        event_emitter.emit('minibatch_load', index, len(self.active))

    def store_all(self) -> List[int]:
        """Park every active minibatch; returns their indices in load order."""
        parked = list(self.active)
        for index in parked:
            del self.active[index]
            self.stores += 1
            event_emitter.emit('minibatch_store', index, len(self.active))
        return parked

    def resident_rows(self) -> Minibatch:
        """Active minibatches concatenated in load order."""
        batches = list(self.active.values())
        if len(batches) == 1:
            return batches[0]
        return (np.concatenate([k for k, _ in batches]), np.concatenate([v for _, v in batches]))

    def report(self) -> ResidencyReport:
        return ResidencyReport(self.peak, self.loads, self.stores)
