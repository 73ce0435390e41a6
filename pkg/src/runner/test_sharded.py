import unittest
import sys
from pathlib import Path

import numpy as np
from hypothesis import given, settings, strategies as st

project_root = Path(__file__).parent.parent.parent
sys.path.append(str(project_root))

from src.attention import FastWeights, TttConfig, inner_grad, ttt_update
from src.errors import ContractViolation, RunError
from src.numerics import Rng
from src.runner import (EventEmitter, MinibatchStore, MinibatchStream, ShardStrategy, event_emitter,
                        grad_accumulate_sharded, make_shard_plan, run_distributed_update, run_offload_update,
                        split_rows, verify_shard_equivalence)

ROWS_PER_FRAME = 4


def instance(seed: int, n_frames: int, d: int = 8, expansion: int = 4):
    rng = Rng(seed)
    theta = FastWeights.seeded(d, expansion, rng)
    k = rng.normal(n_frames * ROWS_PER_FRAME, d)
    k = k / (np.linalg.norm(k, axis=1, keepdims=True) + 1e-7)
    vp = rng.normal(n_frames * ROWS_PER_FRAME, d)
    return theta, k, vp


def per_frame(k, vp):
    n = k.shape[0] // ROWS_PER_FRAME
    return [(k[f * ROWS_PER_FRAME:(f + 1) * ROWS_PER_FRAME], vp[f * ROWS_PER_FRAME:(f + 1) * ROWS_PER_FRAME])
            for f in range(n)]


class TestShardPlan(unittest.TestCase):
    def test_single_worker(self):
        self.assertEqual(make_shard_plan(4, 1).assignments, (0, 0, 0, 0))

    def test_contiguous_near_equal(self):
        plan = make_shard_plan(5, 2)
        self.assertEqual(plan.frames_of(0), [0, 1, 2])
        self.assertEqual(plan.frames_of(1), [3, 4])

    def test_round_robin(self):
        plan = make_shard_plan(6, 4, ShardStrategy.ROUND_ROBIN)
        self.assertEqual([plan.frames_of(w) for w in range(4)], [[0, 4], [1, 5], [2], [3]])

    @settings(deadline=None, max_examples=50)
    @given(st.integers(min_value=0, max_value=40), st.integers(min_value=1, max_value=9),
           st.sampled_from(list(ShardStrategy)))
    def test_every_frame_assigned_once(self, n_frames, n_workers, strategy):
        plan = make_shard_plan(n_frames, n_workers, strategy)
        frames = sorted(f for w in range(n_workers) for f in plan.frames_of(w))
        self.assertEqual(frames, list(range(n_frames)))
        sizes = plan.shard_sizes()
        self.assertLessEqual(max(sizes) - min(sizes), 1, "shards should differ by at most one frame")

    def test_rejects_zero_workers(self):
        with self.assertRaises(ContractViolation):
            make_shard_plan(4, 0)

    def test_split_rows_mismatch(self):
        with self.assertRaises(ContractViolation):
            split_rows(np.zeros((5, 2)), np.zeros((5, 2)), make_shard_plan(2, 1), ROWS_PER_FRAME)


class TestGradAccumulate(unittest.TestCase):
    def test_single_shard_is_bitwise_full_batch(self):
        theta, k, vp = instance(1, 6)
        plan = make_shard_plan(6, 1)
        got = grad_accumulate_sharded(theta, split_rows(k, vp, plan, ROWS_PER_FRAME), plan)
        self.assertEqual(got.to_bytes(), inner_grad(theta, k, vp).to_bytes())

    @settings(deadline=None, max_examples=25)
    @given(st.integers(min_value=0, max_value=2 ** 32), st.integers(min_value=1, max_value=12),
           st.integers(min_value=1, max_value=8))
    def test_partition_matches_full_batch(self, seed, n_frames, n_shards):
        theta, k, vp = instance(seed, n_frames)
        plan = make_shard_plan(n_frames, n_shards)
        got = grad_accumulate_sharded(theta, split_rows(k, vp, plan, ROWS_PER_FRAME), plan)
        self.assertLessEqual(got.max_relative_difference(inner_grad(theta, k, vp)), 1e-12)

    def test_plans_over_same_rows_agree(self):
        theta, k, vp = instance(2, 7)
        a = make_shard_plan(7, 3)
        b = make_shard_plan(7, 3, ShardStrategy.ROUND_ROBIN)
        ga = grad_accumulate_sharded(theta, split_rows(k, vp, a, ROWS_PER_FRAME), a)
        gb = grad_accumulate_sharded(theta, split_rows(k, vp, b, ROWS_PER_FRAME), b)
        self.assertLessEqual(ga.max_relative_difference(gb), 1e-10)


class TestDistributedUpdate(unittest.TestCase):
    def test_one_worker_is_bitwise_ttt_update(self):
        theta, k, vp = instance(3, 5)
        plan = make_shard_plan(5, 1)
        got = run_distributed_update(theta, split_rows(k, vp, plan, ROWS_PER_FRAME), TttConfig(), plan)
        self.assertEqual(got.to_bytes(), ttt_update(theta, k, vp, TttConfig()).to_bytes())

    def test_four_workers_match_one(self):
        theta, k, vp = instance(4, 9)
        plan = make_shard_plan(9, 4)
        got = run_distributed_update(theta, split_rows(k, vp, plan, ROWS_PER_FRAME), TttConfig(), plan)
        self.assertLessEqual(got.max_relative_difference(ttt_update(theta, k, vp, TttConfig())), 1e-10)

    def test_empty_shard_contributes_nothing(self):
        theta, k, vp = instance(5, 3)
        with_idle = make_shard_plan(3, 4)
        without = make_shard_plan(3, 3)
        a = run_distributed_update(theta, split_rows(k, vp, with_idle, ROWS_PER_FRAME), TttConfig(), with_idle)
        b = run_distributed_update(theta, split_rows(k, vp, without, ROWS_PER_FRAME), TttConfig(), without)
        for wa, wb in zip(a, b):
            self.assertTrue(np.array_equal(wa, wb), "an idle worker must not change the update")

    def test_gradient_sync_events(self):
        theta, k, vp = instance(6, 4)
        plan = make_shard_plan(4, 2)
        seen = []
        listener = lambda step, n, payload: seen.append((step, n, payload))
        event_emitter.on('gradient_sync', listener)
        try:
            run_distributed_update(theta, split_rows(k, vp, plan, ROWS_PER_FRAME), TttConfig(steps=3), plan)
        finally:
            event_emitter.off('gradient_sync', listener)
        self.assertEqual([s for s, _, _ in seen], [0, 1, 2])
        self.assertTrue(all(n == 2 and payload == 2 * theta.nbytes for _, n, payload in seen))

    def test_worker_failure_aborts(self):
        theta, k, vp = instance(7, 4)
        plan = make_shard_plan(4, 2)

        def crash(index, grad):
            if index == 1:
                raise MemoryError("device lost")
            return grad

        with self.assertRaises(RunError):
            run_distributed_update(theta, split_rows(k, vp, plan, ROWS_PER_FRAME), TttConfig(), plan,
                                   gradient_hook=crash)

    def test_lr_scaling_flag(self):
        theta, k, vp = instance(8, 4)
        plan = make_shard_plan(4, 2)
        shards = split_rows(k, vp, plan, ROWS_PER_FRAME)
        scaled = run_distributed_update(theta, shards, TttConfig(steps=1, scale_lr_by_minibatches=True), plan)
        halved = run_distributed_update(theta, shards, TttConfig(steps=1, lr=0.05), plan)
        self.assertEqual(scaled.to_bytes(), halved.to_bytes())


class TestOffloadUpdate(unittest.TestCase):
    def test_limit_one_matches_full_batch(self):
        cfg = TttConfig()
        theta, k, vp = instance(9, 6)
        got, report = run_offload_update(theta, MinibatchStream.from_list(per_frame(k, vp)), 1, cfg)
        self.assertLessEqual(got.max_relative_difference(ttt_update(theta, k, vp, cfg)), 1e-12)
        self.assertEqual(report.peak_resident_minibatches, 1)
        self.assertEqual(report.loads, cfg.steps * 6)
        self.assertEqual(report.stores, cfg.steps * 6)

    def test_limit_covering_all_is_bitwise(self):
        cfg = TttConfig()
        theta, k, vp = instance(10, 5)
        got, report = run_offload_update(theta, MinibatchStream.from_list(per_frame(k, vp)), 8, cfg)
        self.assertEqual(got.to_bytes(), ttt_update(theta, k, vp, cfg).to_bytes())
        self.assertEqual(report.peak_resident_minibatches, 5)

    def test_stream_ending_early(self):
        theta, k, vp = instance(11, 4)
        batches = per_frame(k, vp)
        stream = MinibatchStream(lambda: iter(batches[:2]), 4)
        with self.assertRaises(RunError):
            run_offload_update(theta, stream, 1, TttConfig())

    def test_store_enforces_limit(self):
        store = MinibatchStore(1)
        store.load(0, (np.zeros((1, 2)), np.zeros((1, 2))))
        with self.assertRaises(RunError):
            store.load(1, (np.zeros((1, 2)), np.zeros((1, 2))))
        self.assertEqual(store.store_all(), [0])
        self.assertFalse(store.full)


class TestShardEquivalence(unittest.TestCase):
    def test_passes_on_healthy_workers(self):
        report = verify_shard_equivalence(42, sizes=(4, 8), worker_counts=(1, 2, 4))
        self.assertTrue(report.passed)
        self.assertEqual(len(report.entries), 6)

    def test_names_the_faulty_worker(self):
        def corrupt(index, grad):
            return grad.scale(1.5) if index == 2 else grad

        report = verify_shard_equivalence(42, sizes=(8,), worker_counts=(4,), gradient_hook=corrupt)
        self.assertFalse(report.passed)
        self.assertEqual(report.failed_workers, [2])


class TestEventEmitter(unittest.TestCase):
    def test_once_and_off(self):
        emitter = EventEmitter()
        calls = []
        emitter.once('x', lambda v: calls.append(v))
        emitter.emit('x', 1).emit('x', 2)
        self.assertEqual(calls, [1])
        emitter.on('y', calls.append)
        emitter.off('y')
        emitter.emit('y', 3)
        self.assertEqual(calls, [1])


if __name__ == '__main__':
    unittest.main()
