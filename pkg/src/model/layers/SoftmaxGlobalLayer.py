from src.attention import AttentionParams, EntropyScaleConfig, attention_block_reference
from src.errors import ContractViolation
from src.model.GlobalLayer import GlobalLayer


class SoftmaxGlobalLayer(GlobalLayer):
    kind = "softmax_reference"

    def __init__(self, params: AttentionParams, entropy_cfg: EntropyScaleConfig, eps: float = 1e-7):
        self.params = params
        self.entropy_cfg = entropy_cfg
        self.eps = eps

    def run(self, grid, state_in=None):
        if state_in is not None:
            raise ContractViolation("the softmax reference layer keeps no fast weights")
        out = attention_block_reference(grid.tokens, self.params, self.entropy_cfg, self.eps)
        return grid.with_tokens(out), None
