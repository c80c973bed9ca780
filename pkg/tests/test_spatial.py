import numpy as np
import pytest

from permcast.spatial import (
    attention_weights,
    init_spatial_params,
    mean_pool_interaction,
    spatial_forward,
)


def random_set(c, d, seed=0, dtype=np.float32):
    return np.random.default_rng(seed).normal(size=(c, d)).astype(dtype)


def random_perm(c, seed):
    return np.random.default_rng(seed).permutation(c)


@pytest.fixture(scope="module")
def block():
    return init_spatial_params(hidden_dim=16, n_heads=4, seed=1)


class TestSpatialForward:
    def test_singleton_attention_is_one(self, block):
        h = random_set(1, 16, seed=2)
        out = spatial_forward(h, block)
        assert out.shape == (1, 16)
        np.testing.assert_allclose(attention_weights(h, block), [[[1.0]]] * 4)

    def test_duplicate_inputs_give_duplicate_outputs(self, block):
        v = random_set(1, 16, seed=3)[0]
        out = spatial_forward(np.stack([v, v]), block).data
        np.testing.assert_array_equal(out[0], out[1])

    def test_equivariance_20_random_permutations(self, block):
        h = random_set(5, 16, seed=4)
        base = spatial_forward(h, block).data
        for i in range(20):
            pi = random_perm(5, seed=100 + i)
            permuted = spatial_forward(h[pi], block).data
            np.testing.assert_allclose(permuted, base[pi], atol=1e-5)

    def test_equivariance_float64_tight(self):
        blk = init_spatial_params(hidden_dim=16, n_heads=4, seed=5, dtype=np.float64)
        h = random_set(8, 16, seed=6, dtype=np.float64)
        base = spatial_forward(h, blk).data
        for i in range(20):
            pi = random_perm(8, seed=200 + i)
            np.testing.assert_allclose(
                spatial_forward(h[pi], blk).data, base[pi], atol=1e-10
            )

    def test_locality_fixed_index_invariance(self, block):
        # output for a fixed element cannot depend on how the others are ordered
        h = random_set(6, 16, seed=7)
        base = spatial_forward(h, block).data[0]
        for i in range(10):
            pi = np.concatenate([[0], 1 + random_perm(5, seed=300 + i)])
            out = spatial_forward(h[pi], block).data[0]
            np.testing.assert_allclose(out, base, atol=1e-5)

    def test_variable_channel_count_same_params(self, block):
        for c in (3, 300):
            out = spatial_forward(random_set(c, 16, seed=c), block)
            assert out.shape == (c, 16)
            assert np.all(np.isfinite(out.data))

    def test_train_mode_reproducible(self, block):
        h = random_set(4, 16, seed=8)
        a = spatial_forward(h, block, mode="train", seed=99).data
        b = spatial_forward(h, block, mode="train", seed=99).data
        np.testing.assert_array_equal(a, b)
        c = spatial_forward(h, block, mode="train", seed=100).data
        assert not np.array_equal(a, c)

    def test_train_mode_needs_seed(self, block):
        with pytest.raises(ValueError):
            spatial_forward(random_set(4, 16, seed=9), block, mode="train")

    def test_empty_set_rejected(self, block):
        with pytest.raises(ValueError):
            spatial_forward(np.zeros((0, 16)), block)

    def test_wrong_dim_rejected(self, block):
        with pytest.raises(ValueError):
            spatial_forward(np.zeros((3, 8)), block)

    def test_batched_matches_loop(self, block):
        hs = np.stack([random_set(5, 16, seed=10 + i) for i in range(3)])
        batched = spatial_forward(hs, block).data
        for i in range(3):
            np.testing.assert_allclose(
                batched[i], spatial_forward(hs[i], block).data, atol=1e-6
            )


class TestAttentionWeights:
    def test_rows_sum_to_one(self, block):
        w = attention_weights(random_set(7, 16, seed=11), block)
        assert w.shape == (4, 7, 7)
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-6)

    def test_duplicate_pair_gives_half(self, block):
        v = random_set(1, 16, seed=12)[0]
        w = attention_weights(np.stack([v, v]), block)
        np.testing.assert_allclose(w, 0.5, atol=1e-6)

    def test_conjugation_under_permutation(self, block):
        h = random_set(6, 16, seed=13).astype(np.float64)
        base = attention_weights(h, block)
        for i in range(10):
            pi = random_perm(6, seed=400 + i)
            permuted = attention_weights(h[pi], block)
            np.testing.assert_allclose(permuted, base[:, pi][:, :, pi], atol=1e-6)


class TestMeanPool:
    def test_singleton_is_residual_ffn_path(self, block):
        import permcast.numerics as nm

        h = random_set(1, 16, seed=14)
        out = mean_pool_interaction(h, block).data
        p = block.params
        ffn_in = nm.layer_norm(nm.Tensor(h), p["ln2.gain"], p["ln2.bias"])
        delta = nm.matmul(nm.gelu(nm.matmul(ffn_in, p["ffn.w1"])), p["ffn.w2"]).data
        np.testing.assert_allclose(out, h + delta, rtol=1e-6)

    def test_exact_equivariance(self, block):
        h = random_set(5, 16, seed=15)
        base = mean_pool_interaction(h, block).data
        for i in range(5):
            pi = random_perm(5, seed=500 + i)
            np.testing.assert_array_equal(
                mean_pool_interaction(h[pi], block).data, base[pi]
            )

    def test_mean_component_matches_loop(self, block):
        h = random_set(3, 16, seed=16)
        looped = sum(h[i] for i in range(3)) / 3.0
        out = mean_pool_interaction(h, block).data
        delta = out - h
        # all rows share the same pooled correction
        np.testing.assert_allclose(delta[0], delta[1], atol=1e-6)
        np.testing.assert_allclose(delta[0], delta[2], atol=1e-6)
        import permcast.numerics as nm

        p = block.params
        ffn_in = nm.layer_norm(nm.Tensor(looped[None, :]), p["ln2.gain"], p["ln2.bias"])
        expected = nm.matmul(nm.gelu(nm.matmul(ffn_in, p["ffn.w1"])), p["ffn.w2"]).data[0]
        np.testing.assert_allclose(delta[0], expected, atol=1e-6)

    def test_empty_rejected(self, block):
        with pytest.raises(ValueError):
            mean_pool_interaction(np.zeros((0, 16)), block)


class TestParamIndependenceFromC:
    def test_param_count_fixed(self):
        blk = init_spatial_params(hidden_dim=16, n_heads=2, seed=17)
        count = sum(p.size for p in blk.params.values())
        # 4 projections (d*d) + ffn (d*4d + 4d*d) + 2 layer norms (2d each)
        assert count == 4 * 16 * 16 + 2 * 16 * 64 + 4 * 16

    def test_no_channel_indexed_parameter(self):
        blk = init_spatial_params(hidden_dim=8, n_heads=2, seed=18)
        for name, p in blk.params.items():
            assert all(s in (8, 32) for s in p.shape), (name, p.shape)
