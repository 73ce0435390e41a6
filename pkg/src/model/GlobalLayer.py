from abc import ABC, abstractmethod
from typing import Optional, Tuple

from src.attention import FastWeights
from src.model.TokenGrid import TokenGrid


class GlobalLayer(ABC):
    """A layer that mixes information across all frames of a TokenGrid."""

    kind = "global"

    @abstractmethod
    def run(self, grid: TokenGrid, state_in: Optional[FastWeights] = None) -> Tuple[TokenGrid, Optional[FastWeights]]:
        """Returns the new tokens and the layer's fast weights (None if it keeps none)."""
        pass

    @property
    def peak_resident_minibatches(self) -> int:
        return 0
