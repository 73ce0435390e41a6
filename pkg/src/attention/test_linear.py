import unittest
import sys
from pathlib import Path

import numpy as np
from hypothesis import given, settings, strategies as st

project_root = Path(__file__).parent.parent.parent
sys.path.append(str(project_root))

from src.attention import (AttentionParams, FeatureMap, flops_linear, linear_attention_block,
                           linear_attention_global, project_qkv)
from src.attention.linear import DEFAULT_NORMALIZER_EPS, elu_plus_one
from src.errors import ContractViolation
from src.numerics import Rng


def quadratic_linear_attention(q, k, v, feature_map, eps=DEFAULT_NORMALIZER_EPS):
    """Same kernel evaluated as an explicit n x n weight matrix."""
    hd = feature_map.head_dim
    out = []
    for h in range(feature_map.heads):
        cols = slice(h * hd, (h + 1) * hd)
        weights = feature_map(q[:, cols], h) @ feature_map(k[:, cols], h).T
        out.append(weights @ v[:, cols] / (weights.sum(axis=1, keepdims=True) + eps))
    return np.concatenate(out, axis=1)


class TestFeatureMap(unittest.TestCase):
    @given(st.floats(min_value=-50, max_value=50, allow_nan=False))
    @settings(deadline=None)
    def test_elu_plus_one_is_positive(self, z):
        self.assertGreater(float(elu_plus_one(np.array([z]))[0]), 0.0)

    def test_shapes(self):
        fm = FeatureMap.seeded(16, 4, Rng(42), features=6)
        self.assertEqual((fm.heads, fm.head_dim, fm.features), (4, 4, 6))
        self.assertEqual(fm(np.ones((3, 4)), 1).shape, (3, 6))

    def test_rejects_indivisible_heads(self):
        with self.assertRaises(ContractViolation):
            FeatureMap.seeded(10, 4, Rng(42))


class TestLinearAttention(unittest.TestCase):
    def setUp(self):
        self.params = AttentionParams.seeded(8, 2, Rng(42))
        self.feature_map = FeatureMap.seeded(8, 2, Rng(44))
        self.tokens = Rng(43).normal(12, 8)

    def test_matches_quadratic_form(self):
        q, k, v = project_qkv(self.tokens, self.params)
        np.testing.assert_allclose(linear_attention_global(q, k, v, self.feature_map),
                                   quadratic_linear_attention(q, k, v, self.feature_map), rtol=1e-12, atol=1e-12)

    def test_constant_values_pass_through(self):
        """Normalized weights average the values, so constant values come back (up to eps)"""
        q, k, _ = project_qkv(self.tokens, self.params)
        v = np.full_like(q, 3.0)
        np.testing.assert_allclose(linear_attention_global(q, k, v, self.feature_map), v, rtol=1e-5)

    def test_permutation_equivariance(self):
        perm = Rng(5).uniform(12).argsort()
        out = linear_attention_block(self.tokens, self.params, self.feature_map)
        permuted = linear_attention_block(self.tokens[perm], self.params, self.feature_map)
        np.testing.assert_allclose(permuted, out[perm], atol=1e-12)

    def test_zero_output_projection_is_residual(self):
        params = AttentionParams(self.params.w_q, self.params.w_k, self.params.w_v, np.zeros((8, 8)), 2)
        np.testing.assert_array_equal(linear_attention_block(self.tokens, params, self.feature_map), self.tokens)

    def test_rejects_mismatched_feature_map(self):
        q, k, v = project_qkv(self.tokens, self.params)
        with self.assertRaises(ContractViolation):
            linear_attention_global(q, k, v, FeatureMap.seeded(12, 3, Rng(1)))


class TestFlopsLinear(unittest.TestCase):
    def test_exactly_linear_in_tokens(self):
        for n in (64, 1000, 4096):
            self.assertEqual(flops_linear(2 * n, 128, 4), 2 * flops_linear(n, 128, 4))

    def test_reference_value(self):
        # d=8, 2 heads of 4, r=4: 2*(8*n*16 + 2*n*4) + 6*n*64 at n=10
        self.assertEqual(flops_linear(10, 8, 2), 2 * (8 * 10 * 16 + 2 * 10 * 4) + 6 * 10 * 64)


if __name__ == '__main__':
    unittest.main()
