"""
Minibatch gradient decomposition.

The TTT loss is a sum over tokens, so its gradient is the sum of per-shard
gradients. That makes the update shardable across workers (gradients are
synchronized, weights never diverge) and streamable from host memory one
group of minibatches at a time.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from src.attention import FastWeights, TttConfig, inner_grad, muon_step, ttt_update
from src.attention.ttt import LossKind
from src.errors import ContractViolation, RunError
from src.numerics import Rng
from src.runner.EventEmitter import event_emitter
from src.runner.MinibatchStore import MinibatchStore, MinibatchStream, ResidencyReport
from src.runner.ShardPlan import ShardPlan, ShardStrategy, make_shard_plan, split_rows

GradientHook = Callable[[int, FastWeights], FastWeights]


class Worker:
    """One simulated device holding a shard of (K, V') rows."""

    def __init__(self, index: int, k: np.ndarray, vp: np.ndarray, gradient_hook: Optional[GradientHook] = None):
        if k.shape[0] != vp.shape[0]:
            raise ContractViolation(f"worker {index}: K has {k.shape[0]} rows, V' has {vp.shape[0]}")
        self.index = index
        self.k = k
        self.vp = vp
        self.gradient_hook = gradient_hook

    def __repr__(self):
        return f"Worker({self.index}, rows={self.k.shape[0]})"

    def local_gradient(self, theta: FastWeights, loss: LossKind = LossKind.DOT) -> FastWeights:
        grad = inner_grad(theta, self.k, self.vp, loss)
        if self.gradient_hook is not None:
            grad = self.gradient_hook(self.index, grad)
        return grad


def _reduce_ascending(grads: Sequence[FastWeights]) -> FastWeights:
    total = grads[0]
    for g in grads[1:]:
        total = total + g
    return total


def grad_accumulate_sharded(theta: FastWeights, shards: Sequence[Tuple[np.ndarray, np.ndarray]],
                            plan: ShardPlan, loss: LossKind = LossKind.DOT) -> FastWeights:
    """Sum of per-shard gradients in ascending shard order."""
    if len(shards) != plan.n_workers:
        raise ContractViolation(f"{len(shards)} shards for a plan with {plan.n_workers} workers")
    return _reduce_ascending([inner_grad(theta, k, vp, loss) for k, vp in shards])


def _effective_lr(cfg: TttConfig, n_parts: int) -> float:
    if cfg.scale_lr_by_minibatches and n_parts > 0:
        return cfg.lr / n_parts
    return cfg.lr


def run_distributed_update(theta0: FastWeights, shards: Sequence[Tuple[np.ndarray, np.ndarray]],
                           cfg: TttConfig, plan: ShardPlan, threads: Optional[int] = None,
                           gradient_hook: Optional[GradientHook] = None) -> FastWeights:
    """
    Every step: all workers compute their shard gradient concurrently, the
    gradients are summed in ascending worker order, and the same Muon step is
    applied everywhere. Any worker failure aborts the run.
    """
    if len(shards) != plan.n_workers:
        raise ContractViolation(f"{len(shards)} shards for a plan with {plan.n_workers} workers")
    workers = [Worker(i, k, vp, gradient_hook) for i, (k, vp) in enumerate(shards)]
    lr = _effective_lr(cfg, plan.n_workers)
    payload = theta0.nbytes

    theta = theta0
    with ThreadPoolExecutor(max_workers=threads or plan.n_workers) as pool:
        for step in range(cfg.steps):
            futures = [pool.submit(w.local_gradient, theta, cfg.loss) for w in workers]
            grads = []
            for w, future in zip(workers, futures):
                try:
                    grads.append(future.result())
                except Exception as e:
                    raise RunError(f"worker {w.index} failed at step {step}: {e}") from e
            total = _reduce_ascending(grads)
            event_emitter.emit('gradient_sync', step, plan.n_workers, payload * plan.n_workers)
            theta = muon_step(theta, total, lr, cfg.ns_iters, cfg.eps, cfg.ns_coefficients)
    return theta


def run_offload_update(theta0: FastWeights, minibatch_stream: MinibatchStream, resident_limit: int,
                       cfg: TttConfig) -> Tuple[FastWeights, ResidencyReport]:
    """
    Streams minibatches from the host, holding at most `resident_limit` in the
    active set. Every step re-streams all minibatches: each full active group is
    processed as one block and its gradient added to the running total.
    """
    store = MinibatchStore(resident_limit)
    lr = _effective_lr(cfg, minibatch_stream.n_minibatches)

    theta = theta0
    for step in range(cfg.steps):
        stream = minibatch_stream.open()
        total: Optional[FastWeights] = None
        for index in range(minibatch_stream.n_minibatches):
            try:
                minibatch = next(stream)
            except StopIteration:
                raise RunError(f"minibatch stream ended after {index} of "
                               f"{minibatch_stream.n_minibatches} minibatches in step {step}") from None
            store.load(index, minibatch)
            if store.full or index == minibatch_stream.n_minibatches - 1:
                k, vp = store.resident_rows()
                grad = inner_grad(theta, k, vp, cfg.loss)
                total = grad if total is None else total + grad
                store.store_all()
        if total is None:
            total = FastWeights.zeros_like(theta)
        theta = muon_step(theta, total, lr, cfg.ns_iters, cfg.eps, cfg.ns_coefficients)
    return theta, store.report()


def distributed_updater(plan: ShardPlan, rows_per_frame: int, threads: Optional[int] = None):
    """Adapter with the ttt_update signature, for use inside a global layer."""

    def update(theta0: FastWeights, k: np.ndarray, vp: np.ndarray, cfg: TttConfig) -> FastWeights:
        return run_distributed_update(theta0, split_rows(k, vp, plan, rows_per_frame), cfg, plan, threads)

    return update


class OffloadUpdater:
    """ttt_update-compatible callable that streams one frame per minibatch and keeps the last report."""

    def __init__(self, n_frames: int, rows_per_frame: int, resident_limit: int):
        self.n_frames = n_frames
        self.rows_per_frame = rows_per_frame
        self.resident_limit = resident_limit
        self.reports: List[ResidencyReport] = []

    def __call__(self, theta0: FastWeights, k: np.ndarray, vp: np.ndarray, cfg: TttConfig) -> FastWeights:
        r = self.rows_per_frame
        minibatches = [(k[f * r:(f + 1) * r], vp[f * r:(f + 1) * r]) for f in range(self.n_frames)]
        theta, report = run_offload_update(theta0, MinibatchStream.from_list(minibatches), self.resident_limit, cfg)
        self.reports.append(report)
        return theta

    @property
    def peak_resident_minibatches(self) -> int:
        return max((r.peak_resident_minibatches for r in self.reports), default=0)


@dataclass
class EquivalenceEntry:
    n_frames: int
    n_workers: int
    max_relative_deviation: float
    passed: bool
    failed_workers: List[int] = field(default_factory=list)


@dataclass
class ShardEquivalenceReport:
    threshold: float
    entries: List[EquivalenceEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def failed_workers(self) -> List[int]:
        return sorted({w for e in self.entries for w in e.failed_workers})


def _random_instance(rng: Rng, n_frames: int, rows_per_frame: int, d: int, expansion: int):
    theta0 = FastWeights.seeded(d, expansion, rng)
    n = n_frames * rows_per_frame
    k = rng.normal(n, d)
    k = k / (np.linalg.norm(k, axis=1, keepdims=True) + 1e-7)
    vp = rng.normal(n, d)
    return theta0, k, vp


def verify_shard_equivalence(seed: int, sizes: Sequence[int], worker_counts: Sequence[int],
                             threshold: float = 1e-10, cfg: Optional[TttConfig] = None,
                             rows_per_frame: int = 4, d: int = 8,
                             gradient_hook: Optional[GradientHook] = None) -> ShardEquivalenceReport:
    """
    Distributed update vs single-worker ttt_update for every (frames, workers)
    pair. When a configuration fails, each worker's first-step gradient is
    recomputed independently to name the faulty worker.
    """
    cfg = cfg or TttConfig()
    report = ShardEquivalenceReport(threshold)
    rng = Rng(seed)
    for n_frames in sizes:
        theta0, k, vp = _random_instance(rng, n_frames, rows_per_frame, d, cfg.expansion)
        reference = ttt_update(theta0, k, vp, cfg)
        for n_workers in worker_counts:
            plan = make_shard_plan(n_frames, n_workers, ShardStrategy.ROUND_ROBIN)
            shards = split_rows(k, vp, plan, rows_per_frame)
            result = run_distributed_update(theta0, shards, cfg, plan, gradient_hook=gradient_hook)
            deviation = result.max_relative_difference(reference)
            entry = EquivalenceEntry(n_frames, n_workers, deviation, deviation <= threshold)
            if not entry.passed:
                for i, (ks, vs) in enumerate(shards):
                    got = Worker(i, ks, vs, gradient_hook).local_gradient(theta0, cfg.loss)
                    expected = inner_grad(theta0, ks, vs, cfg.loss)
                    if got.max_relative_difference(expected) > threshold:
                        entry.failed_workers.append(i)
            report.entries.append(entry)
    return report
