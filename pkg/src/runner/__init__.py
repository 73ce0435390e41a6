from src.runner.EventEmitter import EventEmitter, event_emitter
from src.runner.ShardPlan import ShardPlan, ShardStrategy, make_shard_plan, split_rows
from src.runner.MinibatchStore import MinibatchStore, MinibatchStream, ResidencyReport
from src.runner.sharded import (
    Worker,
    OffloadUpdater,
    ShardEquivalenceReport,
    grad_accumulate_sharded,
    run_distributed_update,
    run_offload_update,
    distributed_updater,
    verify_shard_equivalence,
)
