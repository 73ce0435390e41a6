import tempfile
import unittest
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

project_root = Path(__file__).parent.parent.parent
sys.path.append(str(project_root))

from src.attention import FastWeights, TttConfig
from src.errors import ContractViolation, FingerprintMismatch
from src.model import (ExecutionConfig, GlobalMode, Model, ModelConfig, ModelParams, Precision, SceneState,
                       forward, frame_self_attention, query, tokenize_synthetic)
from src.model.SceneState import HEADER
from src.runner import ShardStrategy


def small_config(**changes) -> ModelConfig:
    return replace(ModelConfig(layers=2, d=16, heads=2, seed=42), **changes)


class TestTokenGrid(unittest.TestCase):
    def test_layout(self):
        grid = tokenize_synthetic(3, 2, 4, 8, 1)
        self.assertEqual(grid.tokens.shape, (3 * 10, 8))
        self.assertEqual(grid.tokens_per_frame, 10)
        mask = grid.special_mask
        self.assertEqual(mask.sum(), 6)
        self.assertTrue(mask[10] and mask[11] and not mask[12], "specials lead every frame")

    def test_deterministic(self):
        a = tokenize_synthetic(2, 3, 3, 8, 5)
        b = tokenize_synthetic(2, 3, 3, 8, 5)
        np.testing.assert_array_equal(a.tokens, b.tokens)

    def test_frames_of_one_scene_are_more_alike_than_across_scenes(self):
        for seed in range(100):
            grid = tokenize_synthetic(2, 4, 4, 16, seed)
            other = tokenize_synthetic(1, 4, 4, 16, seed + 1000)
            a = grid.frame_tokens(0)[2:].ravel()
            within = np.corrcoef(a, grid.frame_tokens(1)[2:].ravel())[0, 1]
            across = np.corrcoef(a, other.frame_tokens(0)[2:].ravel())[0, 1]
            self.assertGreater(within, 0.5, f"seed {seed}")
            self.assertGreater(within, across + 0.3, f"seed {seed}")

    def test_select_frames(self):
        grid = tokenize_synthetic(3, 2, 2, 4, 2)
        picked = grid.select_frames([2, 0])
        np.testing.assert_array_equal(picked.frame_tokens(0), grid.frame_tokens(2))
        np.testing.assert_array_equal(picked.frame_tokens(1), grid.frame_tokens(0))

    def test_rejects_bad_shape(self):
        grid = tokenize_synthetic(1, 2, 2, 4, 2)
        with self.assertRaises(ContractViolation):
            grid.with_tokens(np.zeros((3, 4)))


class TestModelConfig(unittest.TestCase):
    def test_hash_depends_on_structure(self):
        base = small_config()
        self.assertEqual(base.config_hash(), small_config().config_hash())
        self.assertNotEqual(base.config_hash(), small_config(d=32).config_hash())
        self.assertNotEqual(base.config_hash(), small_config(ttt_cfg=TttConfig(steps=3)).config_hash())

    def test_hash_ignores_execution(self):
        sharded = small_config(execution=ExecutionConfig(workers=4))
        self.assertEqual(sharded.config_hash(), small_config().config_hash())

    def test_expansion_is_propagated(self):
        cfg = small_config(expansion=2)
        self.assertEqual(cfg.ttt_cfg.expansion, 2)
        self.assertEqual(cfg.m, 32)

    def test_rejects_bad_configs(self):
        with self.assertRaises(ContractViolation):
            small_config(heads=3)
        with self.assertRaises(ContractViolation):
            ExecutionConfig(workers=2, resident_limit=1)


class TestModelForward(unittest.TestCase):
    def setUp(self):
        self.config = small_config()
        self.tokens = tokenize_synthetic(4, 3, 3, 16, 42)

    def test_frame_attention_is_block_diagonal(self):
        """Each frame's output depends only on that frame's tokens"""
        params = ModelParams.seeded(self.config).layers[0].frame
        full = frame_self_attention(self.tokens, params)
        alone = frame_self_attention(self.tokens.select_frames([2]), params)
        np.testing.assert_array_equal(alone.tokens, full.frame_tokens(2))

    def test_ttt_mixes_information_across_frames(self):
        tokens = self.tokens.tokens.copy()
        t = self.tokens.tokens_per_frame
        tokens[3 * t:] = 0.0
        out, _ = Model(self.config).forward(self.tokens)
        changed, _ = Model(self.config).forward(self.tokens.with_tokens(tokens))
        self.assertGreater(np.max(np.abs(changed.frame_tokens(0) - out.frame_tokens(0))), 1e-6)

    def test_frame_permutation(self):
        order = [2, 0, 3, 1]
        out, scene = Model(self.config).forward(self.tokens)
        permuted, permuted_scene = Model(self.config).forward(self.tokens.select_frames(order))
        np.testing.assert_allclose(permuted.tokens, out.select_frames(order).tokens, atol=1e-10)
        for a, b in zip(permuted_scene.layers, scene.layers):
            self.assertLessEqual(a.max_relative_difference(b), 1e-10)

    def test_inert_fast_weights_leave_frame_attention(self):
        """One layer, no inner steps and a zero down projection reduce to frame attention"""
        config = small_config(layers=1, ttt_cfg=TttConfig(steps=0))
        params = ModelParams.seeded(config)
        layer = params.layers[0]
        theta0 = layer.global_.theta0
        inert = replace(layer.global_, theta0=FastWeights(theta0.w1, theta0.w3, np.zeros_like(theta0.w2)))
        params = replace(params, layers=(replace(layer, global_=inert),))
        out, _ = Model(config, params).forward(self.tokens)
        np.testing.assert_allclose(out.tokens, frame_self_attention(self.tokens, layer.frame).tokens, atol=1e-14)

    def test_linear_mode_keeps_no_state(self):
        config = small_config(global_mode=GlobalMode.LINEAR)
        out, scene = Model(config).forward(self.tokens)
        self.assertTrue(scene.empty)
        self.assertEqual(out.tokens.shape, self.tokens.tokens.shape)
        reference, _ = Model(small_config(global_mode=GlobalMode.SOFTMAX_REFERENCE)).forward(self.tokens)
        self.assertFalse(np.allclose(out.tokens, reference.tokens))

    def test_feature_maps_ignore_ttt_settings(self):
        a = ModelParams.seeded(self.config).layers[1].feature_map.weights
        b = ModelParams.seeded(small_config(ttt_cfg=TttConfig(conv_kernel_size=5))).layers[1].feature_map.weights
        np.testing.assert_array_equal(a, b)

    def test_forward_shapes_and_scene(self):
        out, scene = Model(self.config).forward(self.tokens)
        self.assertEqual(out.tokens.shape, self.tokens.tokens.shape)
        self.assertEqual(len(scene.layers), 2)
        self.assertEqual((scene.d, scene.m), (16, 64))
        self.assertEqual(scene.n_frames, 4)
        scene.verify(self.config)

    def test_forward_is_deterministic(self):
        _, a = forward(self.config, self.tokens)
        _, b = forward(self.config, self.tokens)
        self.assertEqual(a.to_bytes(), b.to_bytes())

    def test_softmax_mode_keeps_no_state(self):
        config = small_config(global_mode=GlobalMode.SOFTMAX_REFERENCE)
        out, scene = Model(config).forward(self.tokens)
        self.assertTrue(scene.empty)
        self.assertTrue(np.all(np.isfinite(out.tokens)))

    def test_execution_modes_agree(self):
        out, scene = Model(self.config).forward(self.tokens)
        for execution in (ExecutionConfig(workers=3), ExecutionConfig(workers=2, strategy=ShardStrategy.ROUND_ROBIN),
                          ExecutionConfig(resident_limit=1)):
            model = Model(small_config(execution=execution))
            other_out, other_scene = model.forward(self.tokens)
            np.testing.assert_allclose(other_out.tokens, out.tokens, atol=1e-9)
            for a, b in zip(other_scene.layers, scene.layers):
                self.assertLessEqual(a.max_relative_difference(b), 1e-10)

    def test_offload_reports_residency(self):
        model = Model(small_config(execution=ExecutionConfig(resident_limit=1)))
        model.forward(self.tokens)
        self.assertEqual(model.peak_resident_minibatches, 1)
        self.assertEqual(Model(self.config).peak_resident_minibatches, 0)

    def test_float32_precision(self):
        out, _ = Model(small_config(precision=Precision.FP32)).forward(self.tokens)
        self.assertEqual(out.tokens.dtype, np.float32)

    def test_readout(self):
        model = Model(self.config)
        out, _ = model.forward(self.tokens)
        self.assertEqual(model.readout(out).shape, (len(out), 3))

    def test_rejects_wrong_width(self):
        with self.assertRaises(ContractViolation):
            Model(self.config).forward(tokenize_synthetic(1, 2, 2, 8, 1))


class TestModelQuery(unittest.TestCase):
    def setUp(self):
        self.config = small_config()
        self.model = Model(self.config)
        self.tokens = tokenize_synthetic(4, 3, 3, 16, 42)
        self.mapped, self.scene = self.model.forward(self.tokens)

    def test_float32_query_on_loaded_scene(self):
        model = Model(small_config(precision=Precision.FP32))
        _, scene = model.forward(self.tokens)
        loaded = SceneState.from_bytes(scene.to_bytes())
        out = model.query(loaded, self.tokens.select_frames([0]))
        self.assertEqual(out.tokens.dtype, np.float32)

    def test_query_flops_do_not_depend_on_scene_size(self):
        _, large = self.model.forward(tokenize_synthetic(16, 3, 3, 16, 42))
        query_tokens = tokenize_synthetic(2, 3, 3, 16, 7)
        flops = self.model.query_flops(self.scene, query_tokens)
        self.assertGreater(flops, 0)
        self.assertEqual(self.model.query_flops(large, query_tokens), flops)
        self.assertEqual(self.model.query_flops(self.scene, query_tokens.select_frames([0])) * 2, flops)

    def test_requery_reproduces_mapped_frame(self):
        out = self.model.query(self.scene, self.tokens.select_frames([2]))
        np.testing.assert_allclose(out.tokens, self.mapped.frame_tokens(2), atol=1e-8)

    def test_joint_equals_separate(self):
        queries = tokenize_synthetic(3, 3, 3, 16, 7)
        joint = self.model.query(self.scene, queries)
        for f in range(3):
            single = self.model.query(self.scene, queries.select_frames([f]))
            np.testing.assert_array_equal(joint.frame_tokens(f), single.tokens)

    def test_query_does_not_touch_scene(self):
        before = self.scene.to_bytes()
        query(self.config, self.scene, tokenize_synthetic(2, 3, 3, 16, 8))
        self.assertEqual(self.scene.to_bytes(), before)

    def test_mismatched_config(self):
        with self.assertRaises(FingerprintMismatch):
            Model(small_config(seed=43)).query(self.scene, self.tokens.select_frames([0]))

    def test_empty_query(self):
        with self.assertRaises(ContractViolation):
            self.model.query(self.scene, self.tokens.select_frames([]))


class TestSceneState(unittest.TestCase):
    def setUp(self):
        self.config = small_config()
        _, self.scene = forward(self.config, tokenize_synthetic(3, 2, 2, 16, 1))

    def test_size(self):
        data = self.scene.to_bytes()
        self.assertEqual(HEADER.size, 40)
        self.assertEqual(len(data), 40 + 2 * (4 * 16 * 64 * 3))

    def test_round_trip(self):
        data = self.scene.to_bytes()
        restored = SceneState.from_bytes(data)
        self.assertEqual(restored.to_bytes(), data)
        restored.verify(self.config)
        for a, b in zip(restored.layers, self.scene.layers):
            self.assertLessEqual(a.max_relative_difference(b), 1e-6)

    def test_save_and_load(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "scene.vgt3"
            size = self.scene.save(path)
            self.assertEqual(path.stat().st_size, size)
            self.assertEqual(SceneState.load(path).to_bytes(), self.scene.to_bytes())

    def test_rejects_corruption(self):
        data = self.scene.to_bytes()
        for bad in (b"XXXX" + data[4:], data[:4] + (2).to_bytes(4, "little") + data[8:], data[:-4], data[:10]):
            with self.assertRaises(FingerprintMismatch):
                SceneState.from_bytes(bad)

    def test_verify_rejects_other_structure(self):
        with self.assertRaises(FingerprintMismatch):
            self.scene.verify(small_config(layers=3))


if __name__ == '__main__':
    unittest.main()
