from typing import Optional

from src.attention import BlockMode, FastWeights, TttLayerParams, ttt_block
from src.model.GlobalLayer import GlobalLayer
from src.model.ModelConfig import ExecutionConfig
from src.model.TokenGrid import TokenGrid
from src.runner import OffloadUpdater, distributed_updater, make_shard_plan


class TttGlobalLayer(GlobalLayer):
    """
    Update-and-apply when called without state, frozen query when handed the
    stored fast weights. The update runs sharded or offloaded per `execution`.
    """

    kind = "ttt"

    def __init__(self, params: TttLayerParams, execution: Optional[ExecutionConfig] = None):
        self.params = params
        self.execution = execution or ExecutionConfig()
        self._offload: Optional[OffloadUpdater] = None

    def _updater(self, grid: TokenGrid):
        ex = self.execution
        if ex.resident_limit is not None:
            self._offload = OffloadUpdater(grid.n_frames, grid.tokens_per_frame, ex.resident_limit)
            return self._offload
        if ex.workers > 1:
            plan = make_shard_plan(grid.n_frames, ex.workers, ex.strategy)
            return distributed_updater(plan, grid.tokens_per_frame, ex.threads)
        return None

    def run(self, grid, state_in: Optional[FastWeights] = None):
        if state_in is None:
            out, theta = ttt_block(grid.tokens, grid.grid, grid.special_mask, self.params,
                                   BlockMode.UPDATE_AND_APPLY, None, self._updater(grid))
        else:
            out, theta = ttt_block(grid.tokens, grid.grid, grid.special_mask, self.params,
                                   BlockMode.FROZEN_QUERY, state_in)
        return grid.with_tokens(out), theta

    @property
    def peak_resident_minibatches(self) -> int:
        return self._offload.peak_resident_minibatches if self._offload else 0
