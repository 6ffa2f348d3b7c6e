"""Mixer sublayers and stack: oracles, residual identities, dualities."""

import numpy as np
import pytest

from tagmixer.errors import ConfigError
from tagmixer.mixer import (
    LN_EPS,
    MixerConfig,
    channel_mix,
    forward_stack,
    fusion_mix,
    gelu,
    init_mixer_params,
    layer_norm,
    sequence_mix,
    zero_mixer_weights,
)


def rand_sublayer(rng, n, r, dtype=np.float64):
    """Random (w1, w2, gain, bias) for an n-vector sublayer with hidden r."""
    return (rng.normal(scale=0.5, size=(r, n)).astype(dtype),
            rng.normal(scale=0.5, size=(n, r)).astype(dtype),
            rng.normal(scale=0.5, size=n).astype(dtype) + 1.0,
            rng.normal(scale=0.2, size=n).astype(dtype))


class TestLayerNorm:
    def test_constant_vector_maps_to_zero(self):
        x = np.full(5, 3.25)
        np.testing.assert_array_equal(layer_norm(x, np.ones(5), np.zeros(5)), np.zeros(5))

    def test_two_point_vector(self):
        """x=[1,-1] is already centered with unit variance up to epsilon."""
        out = layer_norm(np.array([1.0, -1.0]), np.ones(2), np.zeros(2))
        expected = 1.0 / np.sqrt(1.0 + LN_EPS)
        np.testing.assert_allclose(out, [expected, -expected], rtol=1e-12)

    def test_zero_gain_returns_bias(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=7)
        bias = rng.normal(size=7)
        np.testing.assert_array_equal(layer_norm(x, np.zeros(7), bias), bias)

    def test_population_variance_used(self):
        x = np.array([0.0, 2.0])  # mean 1, population var 1 (sample var would be 2)
        out = layer_norm(x, np.ones(2), np.zeros(2))
        np.testing.assert_allclose(out[1], 1.0 / np.sqrt(1.0 + LN_EPS), rtol=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            layer_norm(np.zeros(3), np.ones(2), np.zeros(3))


def seq_oracle(H, w1, w2, gain, bias):
    """Column-by-column evaluation of the sequence sublayer formula."""
    out = np.empty_like(H)
    for t in range(H.shape[1]):
        col = H[:, t]
        out[:, t] = col + w2 @ gelu(w1 @ layer_norm(col, gain, bias))
    return out


def chan_oracle(H, w1, w2, gain, bias):
    out = np.empty_like(H)
    for c in range(H.shape[0]):
        row = H[c]
        out[c] = row + w2 @ gelu(w1 @ layer_norm(row, gain, bias))
    return out


def fuse_oracle(Hd, Ht, w1, w2, gain, bias):
    od, ot = np.empty_like(Hd), np.empty_like(Ht)
    for c in range(Hd.shape[0]):
        for t in range(Hd.shape[1]):
            v = np.array([Hd[c, t], Ht[c, t]])
            o = v + w2 @ gelu(w1 @ layer_norm(v, gain, bias))
            od[c, t], ot[c, t] = o
    return od, ot


class TestSequenceMix:
    def test_zero_weights_identity(self):
        rng = np.random.default_rng(1)
        H = rng.normal(size=(4, 6))
        out = sequence_mix(H, np.zeros((8, 4)), np.zeros((4, 8)), np.ones(4), np.zeros(4))
        np.testing.assert_array_equal(out, H)

    def test_tiny_instance_matches_hand_formula(self):
        """u=2, d_h=1: scalar-by-scalar evaluation of the column formula."""
        H = np.array([[1.0], [0.0]])
        w1 = np.array([[0.1, 0.0], [0.0, 0.2]])
        w2 = np.array([[0.3, 0.1], [0.05, 0.4]])
        gain, bias = np.ones(2), np.zeros(2)
        col = H[:, 0]
        ln = (col - col.mean()) / np.sqrt(col.var() + LN_EPS)
        expected = (col + w2 @ gelu(w1 @ ln))[:, None]
        np.testing.assert_allclose(sequence_mix(H, w1, w2, gain, bias), expected, rtol=1e-12)

    def test_matches_columnwise_oracle(self):
        rng = np.random.default_rng(2)
        H = rng.normal(size=(5, 7))
        w1, w2, gain, bias = rand_sublayer(rng, 5, 9)
        np.testing.assert_allclose(sequence_mix(H, w1, w2, gain, bias),
                                   seq_oracle(H, w1, w2, gain, bias), atol=1e-12)

    def test_order_sensitivity(self):
        """Permuting sequence positions changes the output non-trivially."""
        rng = np.random.default_rng(3)
        H = rng.normal(size=(5, 4))
        w1, w2, gain, bias = rand_sublayer(rng, 5, 9)
        out = sequence_mix(H, w1, w2, gain, bias)
        perm = rng.permutation(5)
        out_perm = sequence_mix(H[perm], w1, w2, gain, bias)
        assert not np.allclose(out[perm], out_perm)

    def test_relu_activation_available(self):
        rng = np.random.default_rng(4)
        H = rng.normal(size=(3, 4))
        w1, w2, gain, bias = rand_sublayer(rng, 3, 5)
        out = sequence_mix(H, w1, w2, gain, bias, activation="relu")
        expected = np.empty_like(H)
        for t in range(4):
            col = H[:, t]
            expected[:, t] = col + w2 @ np.maximum(w1 @ layer_norm(col, gain, bias), 0.0)
        np.testing.assert_allclose(out, expected, atol=1e-12)


class TestChannelMix:
    def test_zero_weights_identity(self):
        rng = np.random.default_rng(5)
        H = rng.normal(size=(3, 6))
        out = channel_mix(H, np.zeros((12, 6)), np.zeros((6, 12)), np.ones(6), np.zeros(6))
        np.testing.assert_array_equal(out, H)

    def test_row_permutation_equivariance(self):
        rng = np.random.default_rng(6)
        H = rng.normal(size=(5, 4))
        w1, w2, gain, bias = rand_sublayer(rng, 4, 7)
        perm = rng.permutation(5)
        np.testing.assert_allclose(channel_mix(H, w1, w2, gain, bias)[perm],
                                   channel_mix(H[perm], w1, w2, gain, bias), atol=1e-12)

    def test_matches_rowwise_oracle(self):
        rng = np.random.default_rng(7)
        H = rng.normal(size=(3, 4))
        w1, w2, gain, bias = rand_sublayer(rng, 4, 6)
        np.testing.assert_allclose(channel_mix(H, w1, w2, gain, bias),
                                   chan_oracle(H, w1, w2, gain, bias), atol=1e-12)


class TestFusionMix:
    def test_zero_weights_identity(self):
        rng = np.random.default_rng(8)
        Hd, Ht = rng.normal(size=(2, 4, 5))
        od, ot = fusion_mix(Hd, Ht, np.zeros((6, 2)), np.zeros((2, 6)), np.ones(2), np.zeros(2))
        np.testing.assert_array_equal(od, Hd)
        np.testing.assert_array_equal(ot, Ht)

    def test_equal_cells_stay_equal_pairs(self):
        """Cells with equal (doc, tag) values produce equal pair outputs."""
        rng = np.random.default_rng(9)
        H = rng.normal(size=(3, 4))
        w1, w2, gain, bias = rand_sublayer(rng, 2, 6)
        od, ot = fusion_mix(H, H.copy(), w1, w2, gain, bias)
        # every (c, t) pair fed the identical 2-vector, so outputs per cell
        # match the single-cell evaluation of that 2-vector
        expected_d, expected_t = fuse_oracle(H, H.copy(), w1, w2, gain, bias)
        np.testing.assert_allclose(od, expected_d, atol=1e-12)
        np.testing.assert_allclose(ot, expected_t, atol=1e-12)

    def test_single_cell_matches_hand_evaluation(self):
        rng = np.random.default_rng(10)
        w1, w2, gain, bias = rand_sublayer(rng, 2, 5)
        a, b = 0.7, -1.2
        v = np.array([a, b])
        expected = v + w2 @ gelu(w1 @ layer_norm(v, gain, bias))
        od, ot = fusion_mix(np.array([[a]]), np.array([[b]]), w1, w2, gain, bias)
        np.testing.assert_allclose([od[0, 0], ot[0, 0]], expected, rtol=1e-12)

    def test_matches_cellwise_oracle(self):
        rng = np.random.default_rng(11)
        Hd = rng.normal(size=(3, 5))
        Ht = rng.normal(size=(3, 5))
        w1, w2, gain, bias = rand_sublayer(rng, 2, 4)
        od, ot = fusion_mix(Hd, Ht, w1, w2, gain, bias)
        ed, et = fuse_oracle(Hd, Ht, w1, w2, gain, bias)
        np.testing.assert_allclose(od, ed, atol=1e-12)
        np.testing.assert_allclose(ot, et, atol=1e-12)

    def test_shape_mismatch_fatal(self):
        with pytest.raises(ConfigError):
            fusion_mix(np.zeros((2, 3)), np.zeros((3, 2)), np.zeros((4, 2)),
                       np.zeros((2, 4)), np.ones(2), np.zeros(2))


class TestTransposeDuality:
    def test_sequence_mix_is_transposed_channel_mix(self):
        """The two sublayers are the same map modulo a transpose."""
        rng = np.random.default_rng(12)
        H = rng.normal(size=(5, 7))
        w1, w2, gain, bias = rand_sublayer(rng, 5, 8)
        via_seq = sequence_mix(H, w1, w2, gain, bias)
        via_chan = channel_mix(H.T, w1, w2, gain, bias).T
        np.testing.assert_allclose(via_seq, via_chan, atol=1e-12)


class TestForwardStack:
    CFG = MixerConfig(u=4, d_h=6, n_layers=1, dropout_p=0.0)

    def make_params(self, cfg=None, seed=13):
        cfg = cfg or self.CFG
        return init_mixer_params(cfg, np.random.default_rng(seed), np.float64)

    def test_single_layer_zero_weights_identity(self):
        rng = np.random.default_rng(14)
        Hd, Ht = rng.normal(size=(2, 4, 6))
        params = zero_mixer_weights(self.make_params())
        od, ot = forward_stack(Hd, Ht, params, self.CFG)
        np.testing.assert_array_equal(od, Hd)
        np.testing.assert_array_equal(ot, Ht)

    def test_eval_mode_deterministic(self):
        rng = np.random.default_rng(15)
        Hd, Ht = rng.normal(size=(2, 4, 6))
        params = self.make_params()
        a = forward_stack(Hd, Ht, params, self.CFG)
        b = forward_stack(Hd, Ht, params, self.CFG)
        assert a[0].tobytes() == b[0].tobytes()
        assert a[1].tobytes() == b[1].tobytes()

    def test_two_layers_equal_composition(self):
        """A 2-layer stack equals two single-layer stacks run in sequence."""
        cfg2 = MixerConfig(u=4, d_h=6, n_layers=2, dropout_p=0.0)
        params2 = init_mixer_params(cfg2, np.random.default_rng(16), np.float64)
        rng = np.random.default_rng(17)
        Hd, Ht = rng.normal(size=(2, 4, 6))
        full_d, full_t = forward_stack(Hd, Ht, params2, cfg2)

        cfg1 = MixerConfig(u=4, d_h=6, n_layers=1, dropout_p=0.0)
        layer0 = {k.replace("mixer.0.", "mixer.0."): v for k, v in params2.items()
                  if k.startswith("mixer.0.")}
        layer1 = {k.replace("mixer.1.", "mixer.0."): v for k, v in params2.items()
                  if k.startswith("mixer.1.")}
        mid_d, mid_t = forward_stack(Hd, Ht, layer0, cfg1)
        out_d, out_t = forward_stack(mid_d, mid_t, layer1, cfg1)
        np.testing.assert_allclose(full_d, out_d, atol=1e-14)
        np.testing.assert_allclose(full_t, out_t, atol=1e-14)

    def test_train_mode_dropout_reproducible_from_seed(self):
        cfg = MixerConfig(u=4, d_h=6, n_layers=1, dropout_p=0.5)
        params = init_mixer_params(cfg, np.random.default_rng(18), np.float64)
        rng = np.random.default_rng(19)
        Hd, Ht = rng.normal(size=(2, 4, 6))
        a = forward_stack(Hd, Ht, params, cfg, train_mode=True,
                          rng=np.random.default_rng(99))
        b = forward_stack(Hd, Ht, params, cfg, train_mode=True,
                          rng=np.random.default_rng(99))
        c = forward_stack(Hd, Ht, params, cfg, train_mode=True,
                          rng=np.random.default_rng(100))
        assert a[0].tobytes() == b[0].tobytes()
        assert a[0].tobytes() != c[0].tobytes()

    def test_train_mode_without_rng_rejected(self):
        cfg = MixerConfig(u=4, d_h=6, n_layers=1, dropout_p=0.5)
        params = init_mixer_params(cfg, np.random.default_rng(20), np.float64)
        with pytest.raises(ConfigError):
            forward_stack(np.zeros((4, 6)), np.zeros((4, 6)), params, cfg, train_mode=True)

    def test_values_finite_for_bounded_inputs(self):
        cfg = MixerConfig(u=6, d_h=10, n_layers=3, dropout_p=0.0)
        params = init_mixer_params(cfg, np.random.default_rng(21), np.float64)
        rng = np.random.default_rng(22)
        for _ in range(10):
            Hd = rng.uniform(-10, 10, size=(6, 10))
            Ht = rng.uniform(-10, 10, size=(6, 10))
            od, ot = forward_stack(Hd, Ht, params, cfg)
            assert np.isfinite(od).all() and np.isfinite(ot).all()

    def test_shape_mismatch_fatal(self):
        params = self.make_params()
        with pytest.raises(ConfigError):
            forward_stack(np.zeros((3, 6)), np.zeros((3, 6)), params, self.CFG)

    def test_batched_equals_per_example(self):
        rng = np.random.default_rng(23)
        params = self.make_params()
        Hd = rng.normal(size=(3, 4, 6))
        Ht = rng.normal(size=(3, 4, 6))
        batch_d, batch_t = forward_stack(Hd, Ht, params, self.CFG)
        for i in range(3):
            od, ot = forward_stack(Hd[i], Ht[i], params, self.CFG)
            np.testing.assert_allclose(batch_d[i], od, atol=1e-14)
            np.testing.assert_allclose(batch_t[i], ot, atol=1e-14)


class TestMixerConfig:
    def test_default_hidden_dims(self):
        cfg = MixerConfig(u=6, d_h=32)
        assert cfg.seq_hidden == 12
        assert cfg.chan_hidden == 64

    def test_invalid_dropout_rejected(self):
        with pytest.raises(ConfigError):
            MixerConfig(dropout_p=1.0).validate()

    def test_invalid_activation_rejected(self):
        with pytest.raises(ConfigError):
            MixerConfig(activation="tanh").validate()
