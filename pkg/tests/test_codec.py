import numpy as np
import pytest

from permcast.codec import (
    CodecParams,
    PatchConfig,
    PretrainCorpusSpec,
    decode_channel,
    encode_channel,
    encode_channel_meanpool,
    generate_corpus,
    init_codec_params,
    params_digest,
    pretrain_codec,
)
from permcast.numerics import Tensor


@pytest.fixture(scope="module")
def codec():
    params = init_codec_params(PatchConfig(), seed=11)
    params.set_frozen(True)
    return params


class TestEncode:
    def test_identical_series_identical_vectors(self, codec):
        rng = np.random.default_rng(0)
        row = rng.normal(size=96)
        h = encode_channel(np.stack([row, row]), codec)
        np.testing.assert_array_equal(h.data[0], h.data[1])

    def test_isolation_across_channels(self, codec):
        rng = np.random.default_rng(1)
        a = rng.normal(size=96)
        b = rng.normal(size=96)
        b_changed = b + rng.normal(size=96)
        h_before = encode_channel(a, codec).data
        # encoding a alongside different companions cannot change a's vector
        batch1 = encode_channel(np.stack([a, b]), codec).data
        batch2 = encode_channel(np.stack([a, b_changed]), codec).data
        np.testing.assert_array_equal(batch1[0], h_before)
        np.testing.assert_array_equal(batch2[0], h_before)

    def test_zero_series_golden_snapshot(self, codec):
        h1 = encode_channel(np.zeros(96), codec).data
        h2 = encode_channel(np.zeros(96), codec).data
        np.testing.assert_array_equal(h1, h2)
        assert h1.shape == (64,)
        assert np.all(np.isfinite(h1))

    def test_wrong_length_rejected(self, codec):
        with pytest.raises(ValueError):
            encode_channel(np.zeros(95), codec)

    def test_nan_rejected(self, codec):
        bad = np.zeros(96)
        bad[3] = np.nan
        with pytest.raises(ValueError):
            encode_channel(bad, codec)

    def test_left_padding_when_not_divisible(self):
        cfg = PatchConfig(patch_len=16, input_len=90, hidden_dim=32, n_layers=1, horizon=8)
        c = init_codec_params(cfg, seed=3)
        h = encode_channel(np.ones(90), c)
        assert h.shape == (32,)
        assert np.all(np.isfinite(h.data))


class TestMeanPool:
    def test_single_patch_equals_last(self):
        cfg = PatchConfig(patch_len=16, input_len=16, hidden_dim=32, n_layers=2, horizon=8)
        c = init_codec_params(cfg, seed=5)
        x = np.random.default_rng(2).normal(size=(3, 16))
        np.testing.assert_allclose(
            encode_channel(x, c).data, encode_channel_meanpool(x, c).data, rtol=1e-6
        )

    def test_identical_series_identical_outputs(self, codec):
        row = np.random.default_rng(3).normal(size=96)
        h = encode_channel_meanpool(np.stack([row, row]), codec)
        np.testing.assert_array_equal(h.data[0], h.data[1])

    def test_matches_bruteforce_patch_mean(self, codec):
        from permcast.codec import _encode_states, _prepare_input

        x = np.random.default_rng(4).normal(size=(2, 96))
        prepared, _ = _prepare_input(x, codec)
        states = _encode_states(prepared, codec).data
        expected = np.stack(
            [sum(states[n, p] for p in range(states.shape[1])) / states.shape[1]
             for n in range(states.shape[0])]
        )
        np.testing.assert_allclose(
            encode_channel_meanpool(x, codec).data, expected, rtol=1e-6
        )


class TestDecode:
    def test_equal_inputs_equal_forecasts(self, codec):
        h = np.random.default_rng(5).normal(size=64)
        out = decode_channel(np.stack([h, h]), codec)
        np.testing.assert_array_equal(out.data[0], out.data[1])
        assert out.shape == (2, 96)

    def test_zero_vector_zero_bias_head(self):
        cfg = PatchConfig(hidden_dim=32, n_layers=1, horizon=12, input_len=32)
        c = init_codec_params(cfg, seed=6)
        c.params["head.bias"].data[:] = 0.0
        out = decode_channel(np.zeros(32), c)
        np.testing.assert_array_equal(out.data, np.zeros(12))

    def test_golden_roundtrip_snapshot(self, codec):
        h = encode_channel(np.linspace(-1, 1, 96), codec)
        once = decode_channel(h, codec).data
        again = decode_channel(h, codec).data
        np.testing.assert_array_equal(once, again)

    def test_nan_rejected(self, codec):
        bad = np.zeros(64)
        bad[0] = np.nan
        with pytest.raises(ValueError):
            decode_channel(bad, codec)


class TestShapes:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            PatchConfig(hidden_dim=30, n_heads=4)
        with pytest.raises(ValueError):
            PatchConfig(n_layers=0)

    def test_encode_always_d_decode_always_t(self, codec):
        for n in (1, 3, 7):
            x = np.random.default_rng(n).normal(size=(n, 96))
            h = encode_channel(x, codec)
            assert h.shape == (n, 64)
            assert decode_channel(h, codec).shape == (n, 96)


class TestCorpus:
    def test_bit_identical_regeneration(self):
        spec = PretrainCorpusSpec(n_series=4, length=128, seed=42)
        np.testing.assert_array_equal(generate_corpus(spec), generate_corpus(spec))

    def test_different_seed_differs(self):
        a = generate_corpus(PretrainCorpusSpec(n_series=2, length=64, seed=1))
        b = generate_corpus(PretrainCorpusSpec(n_series=2, length=64, seed=2))
        assert not np.array_equal(a, b)


class TestPretrain:
    CFG = PatchConfig(patch_len=16, input_len=64, hidden_dim=32, n_layers=2, horizon=32)

    def test_zero_epochs_skips_training(self):
        spec = PretrainCorpusSpec(n_series=6, length=256, seed=7)
        codec, report = pretrain_codec(spec, self.CFG, epochs=0, seed=8)
        assert codec.frozen
        assert report.epochs_run == 0
        assert np.isnan(report.val_mae)

    def test_determinism(self):
        spec = PretrainCorpusSpec(n_series=8, length=256, n_components=1,
                                  noise_std=0.0, trend_range=(0.0, 0.0), seed=9)
        a, _ = pretrain_codec(spec, self.CFG, epochs=2, seed=10)
        b, _ = pretrain_codec(spec, self.CFG, epochs=2, seed=10)
        assert a.digest() == b.digest()

    def test_freeze_flags_set(self):
        spec = PretrainCorpusSpec(n_series=6, length=256, seed=12)
        codec, _ = pretrain_codec(spec, self.CFG, epochs=0, seed=13)
        assert codec.frozen
        assert not any(p.requires_grad for p in codec.params.values())

    @pytest.mark.slow
    def test_pure_sinusoid_halves_persistence(self):
        spec = PretrainCorpusSpec(
            n_series=64, length=400, n_components=1,
            noise_std=0.0, trend_range=(0.0, 0.0), seed=3,
        )
        codec, report = pretrain_codec(spec, self.CFG, epochs=30, seed=4)
        assert report.val_mae < 0.5 * report.persistence_mae, (
            f"val {report.val_mae:.4f} vs persistence {report.persistence_mae:.4f}"
        )


class TestDigest:
    def test_digest_changes_with_values(self):
        params = init_codec_params(PatchConfig(hidden_dim=16, n_layers=1, n_heads=2,
                                               input_len=32, horizon=8), seed=20)
        before = params.digest()
        params.params["head.bias"].data[0] += 1.0
        assert params.digest() != before

    def test_digest_stable(self, codec):
        assert codec.digest() == codec.digest()
        assert params_digest(codec.params) == codec.digest()
