from src.attention import AttentionParams, FeatureMap, linear_attention_block
from src.errors import ContractViolation
from src.model.GlobalLayer import GlobalLayer


class LinearGlobalLayer(GlobalLayer):
    """Kernelized linear attention over all frames; a baseline with no fast weights."""

    kind = "linear"

    def __init__(self, params: AttentionParams, feature_map: FeatureMap, eps: float = 1e-7):
        self.params = params
        self.feature_map = feature_map
        self.eps = eps

    def run(self, grid, state_in=None):
        if state_in is not None:
            raise ContractViolation("the linear attention layer keeps no fast weights")
        out = linear_attention_block(grid.tokens, self.params, self.feature_map, self.eps)
        return grid.with_tokens(out), None
