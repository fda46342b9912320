import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinyvim.laplace import (
    MIXER_MODES,
    LaplaceMixer,
    MixerConfig,
    effective_pool_ratio,
    laplace_decompose,
    mixer_branches,
    split_channels,
)
from tinyvim import ops
from tinyvim.ssm import count_ssm_tokens
from tinyvim.tensor import Tensor, default_dtype, no_grad

from conftest import check_gradients, leaf
from oracles import conv1x1, pool, rep_branches, ss2d_by_hand, upsample


def randomize_bn(module, rng):
    from tinyvim.nn import BatchNorm2d

    for m in module.modules():
        if isinstance(m, BatchNorm2d):
            c = m.gamma.shape[0]
            m.gamma.data = rng.uniform(0.5, 1.5, c).astype(m.gamma.dtype)
            m.beta.data = rng.normal(scale=0.2, size=c).astype(m.beta.dtype)
            m.running_mean[:] = rng.normal(scale=0.2, size=c)
            m.running_var[:] = rng.uniform(0.5, 1.5, c)


def make_mixer(alpha, r, d, mode="low-only", seed=0):
    with default_dtype(np.float64):
        mixer = LaplaceMixer(MixerConfig(alpha, r, d, mode), np.random.default_rng(seed),
                             ssm_expand=2, d_state=4)
    rng = np.random.default_rng(seed + 1)
    randomize_bn(mixer, rng)
    mixer.proj.bias.data = rng.normal(scale=0.1, size=d)
    return mixer.eval()


class TestSplit:
    def test_alpha_one(self):
        x = Tensor(np.random.default_rng(0).normal(size=(1, 4, 2, 2)))
        low, high = split_channels(x, 1.0)
        assert np.array_equal(low.data, x.data) and high.shape == (1, 0, 2, 2)

    def test_quarter(self):
        x = Tensor(np.arange(4 * 4, dtype=float).reshape(1, 4, 2, 2))
        low, high = split_channels(x, 0.25)
        assert np.array_equal(low.data, x.data[:, :1])
        assert np.array_equal(high.data, x.data[:, 1:])

    @pytest.mark.parametrize("alpha,d", [(0.25, 8), (0.5, 6), (0.75, 12), (1.0, 3)])
    def test_concat_restores(self, alpha, d):
        x = Tensor(np.random.default_rng(d).normal(size=(2, d, 3, 3)))
        assert np.array_equal(ops.concat(list(split_channels(x, alpha)), axis=1).data, x.data)

    def test_non_integral(self):
        with pytest.raises(ValueError):
            split_channels(Tensor(np.zeros((1, 6, 2, 2))), 0.25)
        with pytest.raises(ValueError):
            MixerConfig(0.25, 2, 6)
        with pytest.raises(ValueError):
            MixerConfig(0.0, 2, 8)
        with pytest.raises(ValueError):
            MixerConfig(0.5, 2, 8, mode="sideways")


class TestDecompose:
    def test_constant(self):
        low, high = laplace_decompose(Tensor(np.full((1, 2, 8, 8), 1.5)), 4)
        assert np.all(low.data == 1.5) and not np.any(high.data)

    def test_ratio_one(self):
        x = Tensor(np.random.default_rng(0).normal(size=(1, 2, 4, 4)))
        low, high = laplace_decompose(x, 1)
        assert np.array_equal(low.data, x.data) and not np.any(high.data)

    def test_matches_loop(self, f64):
        x = np.random.default_rng(1).normal(size=(1, 2, 8, 8))
        low, high = laplace_decompose(Tensor(x), 4)
        ref_low = pool(x, 4)
        assert np.max(np.abs(low.data - ref_low)) <= 1e-12
        assert np.max(np.abs(high.data - (x - upsample(ref_low, 4)))) <= 1e-12

    def test_divisibility(self):
        with pytest.raises(ValueError):
            laplace_decompose(Tensor(np.zeros((1, 1, 6, 6))), 4)

    @settings(max_examples=30, deadline=None)
    @given(r=st.sampled_from([1, 2, 4, 8]), m=st.integers(1, 3), seed=st.integers(0, 2**16))
    def test_reconstruction(self, r, m, seed):
        x = np.random.default_rng(seed).normal(scale=10, size=(2, 3, r * m, r * (m + 1)))
        with default_dtype(np.float64):
            low, high = laplace_decompose(Tensor(x), r)
        assert np.max(np.abs(high.data + upsample(low.data, r) - x)) <= 1e-12
        low32, high32 = laplace_decompose(Tensor(x.astype(np.float32) / 10), r)
        err = high32.data + upsample(low32.data, r) - x.astype(np.float32) / 10
        assert np.max(np.abs(err)) <= 1e-6


def test_effective_pool_ratio():
    assert effective_pool_ratio(8, 56, 56) == 8
    assert effective_pool_ratio(8, 8, 8) == 8
    assert effective_pool_ratio(8, 4, 4) == 4
    assert effective_pool_ratio(4, 6, 6) == 3
    assert effective_pool_ratio(2, 1, 1) == 1


def mixer_by_hand(x, mixer):
    """Straight-line pipeline: split, decompose, Rep3, SS2D, fuse, project."""
    cfg = mixer.cfg
    n = int(cfg.alpha * cfg.channels)
    x_l, x_h = x[:, :n], x[:, n:]
    x_ll = pool(x_l, cfg.pool_ratio)
    x_lh = x_l - upsample(x_ll, cfg.pool_ratio)
    x_hh = np.concatenate([x_lh, x_h], axis=1)
    hi = rep_branches(x_hh, mixer.rep)
    lo = ss2d_by_hand(x_ll, mixer.ss2d)
    hi[:, :n] += upsample(lo, cfg.pool_ratio)
    return conv1x1(hi, mixer.proj.weight.data, mixer.proj.bias.data)


class TestMixer:
    def test_pipeline_oracle(self, f64):
        mixer = make_mixer(0.5, 2, 8, seed=3)
        x = np.random.default_rng(4).normal(size=(1, 8, 16, 16))
        with no_grad():
            y = mixer(Tensor(x)).data
        assert np.max(np.abs(y - mixer_by_hand(x, mixer))) <= 1e-10

    def test_degenerate_grid(self, f64):
        mixer = make_mixer(0.25, 4, 8, seed=5)
        x = np.random.default_rng(6).normal(size=(2, 8, 4, 4))
        with count_ssm_tokens() as tokens:
            y = mixer(Tensor(x)).data
        assert tokens[0] == 1
        assert np.max(np.abs(y - mixer_by_hand(x, mixer))) <= 1e-10

    def test_zero_in_zero_out(self, f64):
        with default_dtype(np.float64):
            mixer = LaplaceMixer(MixerConfig(0.5, 2, 8), np.random.default_rng(7), ssm_expand=2, d_state=4)
        for mode in ("train", "eval"):
            getattr(mixer, mode)()
            assert not np.any(mixer(Tensor(np.zeros((2, 8, 8, 8)))).data)

    @pytest.mark.parametrize("mode", MIXER_MODES)
    @pytest.mark.parametrize("shape", [(1, 8, 8, 8), (2, 8, 4, 12), (1, 8, 1, 1)])
    def test_output_dims(self, mode, shape):
        mixer = LaplaceMixer(MixerConfig(0.75, 4, 8, mode), np.random.default_rng(8), ssm_expand=1, d_state=2)
        assert mixer(Tensor(np.random.default_rng(9).normal(size=shape).astype(np.float32))).shape == shape

    @pytest.mark.parametrize("r", [1, 2, 4, 8])
    def test_token_reduction(self, r):
        mixer = LaplaceMixer(MixerConfig(0.5, r, 8), np.random.default_rng(10), ssm_expand=1, d_state=2)
        with count_ssm_tokens() as tokens, no_grad():
            mixer(Tensor(np.zeros((3, 8, 16, 16), dtype=np.float32)))
        assert tokens[0] == 16 * 16 // (r * r)

    def test_tokens_per_mode(self):
        counts = {}
        for mode in MIXER_MODES:
            mixer = LaplaceMixer(MixerConfig(0.5, 4, 8, mode), np.random.default_rng(11), ssm_expand=1, d_state=2)
            with count_ssm_tokens() as tokens, no_grad():
                mixer(Tensor(np.zeros((1, 8, 16, 16), dtype=np.float32)))
            counts[mode] = tokens[0]
        assert counts == {"low-only": 16, "high-only": 256, "low+high": 272, "conv-only": 0, "baseline": 256}

    def test_conv_only_skips_ssm(self, f64):
        mixer = make_mixer(0.5, 2, 8, mode="conv-only", seed=12)
        x = np.random.default_rng(13).normal(size=(1, 8, 8, 8))
        parts = mixer_branches(Tensor(x), mixer)
        assert np.max(np.abs(parts["low_out"].data - upsample(pool(x[:, :4], 2), 2))) <= 1e-14

    def test_branch_shapes(self):
        mixer = LaplaceMixer(MixerConfig(0.25, 4, 8), np.random.default_rng(14), ssm_expand=1, d_state=2)
        parts = mixer_branches(Tensor(np.zeros((1, 8, 8, 8), dtype=np.float32)), mixer)
        assert parts["x_ll"].shape == (1, 2, 2, 2)
        assert parts["x_lh"].shape == (1, 2, 8, 8)
        assert parts["x_hh"].shape == (1, 8, 8, 8)
        assert parts["low_out"].shape == (1, 2, 8, 8)

    def test_channel_mismatch(self):
        mixer = LaplaceMixer(MixerConfig(0.5, 2, 8), np.random.default_rng(15), ssm_expand=1, d_state=2)
        with pytest.raises(ValueError):
            mixer(Tensor(np.zeros((1, 6, 4, 4))))

    def test_gradient(self, f64):
        mixer = make_mixer(0.5, 2, 4, seed=16).train()
        x = leaf(np.random.default_rng(17).normal(size=(2, 4, 4, 4)))
        params = [p for _, p in mixer.named_parameters()]
        check_gradients(lambda t: mixer(t[0]), [x] + params, probes=10, seed=6, joint=True)


def test_low_band_more_concentrated_than_residual():
    from tinyvim.spectral import low_freq_energy_ratio

    rng = np.random.default_rng(18)
    wins = 0
    for _ in range(20):
        smooth = upsample(rng.normal(size=(1, 4, 4, 4)), 8)
        x = smooth + 0.3 * rng.normal(size=smooth.shape)
        parts = mixer_branches(Tensor(x), make_mixer(1.0, 4, 4, seed=19))
        up = upsample(parts["x_ll"].data, 4)
        wins += low_freq_energy_ratio(up, 0.25) > low_freq_energy_ratio(parts["x_lh"].data, 0.25)
    assert wins == 20
