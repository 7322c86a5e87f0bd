"""Frame-wise inference runtime: layer oracles, causality and streaming equivalence."""

import numpy as np
import pytest

from tbnn_aec.errors import ConfigurationError, ContractError
from tbnn_aec.nn import (FTLSTM, GRU, LSTM, BatchNorm, Conv1x1, Conv2d, GConv, Linear, PReLU,
                         TrConv2d, UNetBlock, seed_init)
from tbnn_aec.nn import functional as F
from tbnn_aec.nn.functional import run_frames


def _bound(layer, seed=0, perturb_bn=True):
    """Bind seeded weights; BN stats get random values so they are not identities."""
    arrays = seed_init(layer, seed).arrays()
    rng = np.random.default_rng(seed + 100)
    if perturb_bn:
        for name, a in arrays.items():
            if name.endswith("running_var"):
                arrays[name] = rng.uniform(0.5, 2.0, a.shape).astype(np.float32)
            elif name.endswith("running_mean") or name.endswith(".bn.bias"):
                arrays[name] = rng.normal(0, 0.3, a.shape).astype(np.float32)
    return layer.bind(arrays)


def _conv_oracle(x, w, b, stride, pad=(0, 0)):
    """Nested-loop causal conv: kernel time index 0 multiplies frame t-1."""
    cin, T, Fb = x.shape
    cout, _, kt, kf = w.shape
    xp = np.zeros((cin, T + kt - 1, Fb + pad[0] + pad[1]))
    xp[:, kt - 1:, pad[0]:pad[0] + Fb] = x
    fo = (Fb + pad[0] + pad[1] - kf) // stride + 1
    out = np.zeros((cout, T, fo))
    for co in range(cout):
        for t in range(T):
            for f in range(fo):
                acc = b[co]
                for ci in range(cin):
                    for dt in range(kt):
                        for df in range(kf):
                            acc += w[co, ci, dt, df] * xp[ci, t + dt, f * stride + df]
                out[co, t, f] = acc
    return out


def _tconv_oracle(x, w, b, stride, out_bins):
    cin, T, Fb = x.shape
    _, cout, kt, kf = w.shape
    out = np.zeros((cout, T, out_bins)) + b[:, None, None]
    for t in range(T):
        for dt in range(kt):
            src = t - (kt - 1) + dt
            if src < 0:
                continue
            for f in range(Fb):
                for df in range(kf):
                    fo = f * stride + df
                    if fo < out_bins:
                        out[:, t, fo] += w[:, :, dt, df].T @ x[:, src, f]
    return out


# ---------------------------------------------------------------------------
# Convolutions
# ---------------------------------------------------------------------------


class TestConv:
    @pytest.mark.parametrize("stride,pad", [(2, (0, 0)), (1, (1, 1)), (2, (1, 0))])
    def test_conv_matches_nested_loops(self, rng, stride, pad):
        x = rng.standard_normal((3, 5, 11)).astype(np.float32)
        w = rng.standard_normal((4, 3, 2, 3)).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)
        y = F.conv2d(x, w, b, stride=(1, stride), freq_pad=pad)
        np.testing.assert_allclose(y, _conv_oracle(x, w, b, stride, pad), rtol=1e-5, atol=1e-5)

    def test_output_bins(self):
        assert Conv2d("c", 1, 1, 321).out_bins == 160
        assert Conv2d("c", 1, 1, 160).out_bins == 79

    def test_time_stride_rejected(self):
        with pytest.raises(ConfigurationError):
            Conv2d("c", 1, 1, 10, stride=(2, 2))

    def test_wrong_input_shape(self, rng):
        layer = _bound(Conv2d("c", 2, 2, 9))
        with pytest.raises(ContractError):
            layer.step(rng.standard_normal((2, 8)).astype(np.float32), layer.init_state())

    def test_gconv_gate(self, rng):
        x = rng.standard_normal((2, 4, 9)).astype(np.float32)
        w = rng.standard_normal((6, 2, 2, 3)).astype(np.float32)
        y = F.gconv(x, w)
        full = _conv_oracle(x, w, np.zeros(6), 2)
        np.testing.assert_allclose(y, full[:3] / (1 + np.exp(-full[3:])), rtol=1e-5, atol=1e-6)

    def test_gconv_odd_channels(self, rng):
        with pytest.raises(ContractError):
            F.gconv(np.zeros((1, 2, 9)), np.zeros((3, 1, 2, 3)))

    def test_gconv_layer_matches_functional(self, rng):
        layer = _bound(GConv("g", 2, 3, 9))
        x = rng.standard_normal((2, 4, 9)).astype(np.float32)
        w = layer.conv.params["weight"]
        np.testing.assert_allclose(run_frames(layer, x)[0],
                                   F.gconv(x, w, layer.conv.params["bias"]), atol=1e-6)

    def test_conv1x1(self, rng):
        layer = _bound(Conv1x1("s", 3, 2, 7))
        x = rng.standard_normal((3, 7)).astype(np.float32)
        w = layer.params["weight"][:, :, 0, 0]
        np.testing.assert_allclose(layer.step(x), w @ x + layer.params["bias"][:, None], atol=1e-6)


class TestTransposedConv:
    @pytest.mark.parametrize("out_bins", [None, 16])
    def test_matches_scatter_oracle(self, rng, out_bins):
        x = rng.standard_normal((3, 5, 7)).astype(np.float32)
        w = rng.standard_normal((3, 2, 2, 3)).astype(np.float32)
        b = rng.standard_normal(2).astype(np.float32)
        full = (7 - 1) * 2 + 3
        ob = full if out_bins is None else out_bins
        y = F.tconv2d(x, w, b, out_bins=out_bins)
        np.testing.assert_allclose(y, _tconv_oracle(x, w, b, 2, ob), rtol=1e-5, atol=1e-5)

    def test_beyond_full_extent_is_bias(self, rng):
        x = rng.standard_normal((2, 3, 79)).astype(np.float32)
        w = rng.standard_normal((2, 1, 2, 3)).astype(np.float32)
        y = F.tconv2d(x, w, np.array([0.7], np.float32), out_bins=160)
        np.testing.assert_allclose(y[0, :, 159], 0.7)

    def test_adjoint_of_conv(self, rng):
        # <conv(x), y> == <x, R tconv(R y)> with R reversing time
        x = rng.standard_normal((3, 6, 13)).astype(np.float64)
        w = rng.standard_normal((4, 3, 2, 3))
        y = rng.standard_normal((4, 6, 6))
        lhs = np.sum(_conv_oracle(x, w, np.zeros(4), 2) * y)
        # conv weight (cout, cin, ...) is read as a tconv weight (cin', cout', ...) as is
        back = F.tconv2d(y[:, ::-1], w, out_bins=13)[:, ::-1]
        rhs = np.sum(x * back)
        assert lhs == pytest.approx(rhs, rel=1e-4)

    def test_single_frame_adjoint(self, rng):
        x = rng.standard_normal((2, 1, 9))
        y = rng.standard_normal((3, 1, 4))
        w = rng.standard_normal((3, 2, 1, 3))
        lhs = np.sum(_conv_oracle(x, w, np.zeros(3), 2) * y)
        rhs = np.sum(x * F.tconv2d(y, w, out_bins=9))
        assert lhs == pytest.approx(rhs, rel=1e-4)

    def test_bad_mapping(self):
        with pytest.raises(ConfigurationError):
            TrConv2d("t", 1, 1, 4, 40)


# ---------------------------------------------------------------------------
# Recurrent layers
# ---------------------------------------------------------------------------


def _sig(v):
    return 1 / (1 + np.exp(-v))


class TestRecurrent:
    def test_gru_equations(self, rng):
        layer = _bound(GRU("gru", 5, 4))
        p = {k: v.astype(np.float64) for k, v in layer.params.items()}
        h = np.zeros(4)
        seq = rng.standard_normal((6, 5)).astype(np.float32)
        out, h_last = F.gru_forward(seq, layer.params)
        for t in range(6):
            gi = p["weight_ih"] @ seq[t] + p["bias_ih"]
            gh = p["weight_hh"] @ h + p["bias_hh"]
            r = _sig(gi[:4] + gh[:4])
            z = _sig(gi[4:8] + gh[4:8])
            n = np.tanh(gi[8:] + r * gh[8:])
            h = (1 - z) * n + z * h
            np.testing.assert_allclose(out[t], h, atol=1e-5)
        np.testing.assert_allclose(h_last, h, atol=1e-5)

    def test_gru_initial_hidden(self, rng):
        layer = _bound(GRU("gru", 3, 2))
        with pytest.raises(ContractError):
            F.gru_forward(np.zeros((2, 3)), layer.params, hidden=np.zeros(5))

    def test_lstm_equations(self, rng):
        layer = _bound(LSTM("lstm", 3, 4))
        p = {k: v.astype(np.float64) for k, v in layer.params.items()}
        h, c = np.zeros(4), np.zeros(4)
        st = layer.init_state()
        for _ in range(5):
            x = rng.standard_normal(3).astype(np.float32)
            g = p["weight_ih"] @ x + p["bias_ih"] + p["weight_hh"] @ h + p["bias_hh"]
            i, f, gg, o = _sig(g[:4]), _sig(g[4:8]), np.tanh(g[8:12]), _sig(g[12:])
            c = f * c + i * gg
            h = o * np.tanh(c)
            np.testing.assert_allclose(layer.step(x, st), h, atol=1e-5)

    def test_ftlstm_shape_and_residual(self, rng):
        layer = _bound(FTLSTM("ft", 4, 9, 3, 3))
        x = rng.standard_normal((4, 3, 9)).astype(np.float32)
        y = run_frames(layer, x)[0]
        assert y.shape == x.shape
        # zeroing both projections makes the block an identity
        layer.f_proj.params["weight"][:] = 0
        layer.f_proj.params["bias"][:] = 0
        layer.t_proj.params["weight"][:] = 0
        layer.t_proj.params["bias"][:] = 0
        layer.f_proj._prepare()
        layer.t_proj._prepare()
        np.testing.assert_array_equal(run_frames(layer, x)[0], x)

    def test_ftlstm_frequency_is_bidirectional(self, rng):
        layer = _bound(FTLSTM("ft", 2, 8, 3, 3))
        x = rng.standard_normal((2, 1, 8)).astype(np.float32)
        y0 = run_frames(layer, x)[0]
        x2 = x.copy()
        x2[:, 0, 7] += 1.0
        y1 = run_frames(layer, x2)[0]
        assert np.any(y0[:, 0, 0] != y1[:, 0, 0])


# ---------------------------------------------------------------------------
# Normalization, activations, dropout, linear
# ---------------------------------------------------------------------------


class TestPointwise:
    def test_batchnorm(self, rng):
        x = rng.standard_normal((3, 4, 5)).astype(np.float32)
        g, b = np.array([1.0, 2.0, 0.5]), np.array([0.0, -1.0, 3.0])
        m, v = np.array([0.1, 0.2, -0.3]), np.array([1.0, 4.0, 0.25])
        y = F.batchnorm_inference(x, g, b, m, v)
        ref = (x - m[:, None, None]) / np.sqrt(v[:, None, None] + 1e-5) * g[:, None, None] \
            + b[:, None, None]
        np.testing.assert_allclose(y, ref, rtol=1e-5, atol=1e-5)

    def test_batchnorm_layer(self, rng):
        layer = _bound(BatchNorm("bn", 2))
        x = rng.standard_normal((2, 6)).astype(np.float32)
        p = layer.params
        ref = (x - p["running_mean"][:, None]) / np.sqrt(p["running_var"][:, None] + 1e-5) \
            * p["weight"][:, None] + p["bias"][:, None]
        np.testing.assert_allclose(layer.step(x), ref, rtol=1e-5, atol=1e-6)

    def test_prelu(self):
        x = np.array([[-2.0, 3.0], [-1.0, 0.0]])
        np.testing.assert_allclose(F.prelu(x, [0.25, 0.5]), [[-0.5, 3.0], [-0.5, 0.0]])
        layer = PReLU("p", 2).bind({"p.weight": np.array([0.1, 0.2])})
        np.testing.assert_allclose(layer.step(np.array([[-1.0], [-1.0]], np.float32)),
                                   [[-0.1], [-0.2]], rtol=1e-6)

    def test_elu(self):
        np.testing.assert_allclose(F.elu([-1.0, 0.0, 2.0]), [np.exp(-1) - 1, 0, 2], rtol=1e-6)

    def test_dropout_identity_at_inference(self, rng):
        x = rng.standard_normal((4, 5)).astype(np.float32)
        np.testing.assert_array_equal(F.dropout(x, 0.25), x)

    def test_dropout_training_seeded(self):
        x = np.ones((200, 200), np.float32)
        a = F.dropout(x, 0.25, training=True, seed=5)
        b = F.dropout(x, 0.25, training=True, seed=5)
        np.testing.assert_array_equal(a, b)
        assert set(np.unique(a)) <= {0.0, np.float32(1 / 0.75)}
        assert np.mean(a == 0) == pytest.approx(0.25, abs=0.01)

    def test_linear(self, rng):
        layer = _bound(Linear("l", 4, 3))
        x = rng.standard_normal((2, 4)).astype(np.float32)
        ref = x @ layer.params["weight"].T + layer.params["bias"]
        np.testing.assert_allclose(layer.step(x), ref, atol=1e-6)


# ---------------------------------------------------------------------------
# Causality and streaming
# ---------------------------------------------------------------------------


def _layers():
    return {
        "conv": Conv2d("c", 2, 3, 17),
        "gconv": GConv("g", 2, 3, 17),
        "tconv": TrConv2d("t", 2, 3, 8, 17),
        "ftlstm": FTLSTM("f", 2, 9, 3, 3),
        "unet": UNetBlock("u", 2, 17, 2),
    }


class TestCausality:
    @pytest.mark.parametrize("kind", ["conv", "gconv", "tconv", "ftlstm", "unet"])
    def test_future_frames_do_not_leak(self, rng, kind):
        layer = _bound(_layers()[kind])
        cin = layer.children["conv"].cin if kind == "gconv" else getattr(layer, "cin", 2)
        bins = layer.in_bins if hasattr(layer, "in_bins") else layer.bins
        x = rng.standard_normal((cin, 8, bins)).astype(np.float32)
        y = run_frames(layer, x)[0]
        for t in range(8):
            x2 = x.copy()
            x2[:, t:] = rng.standard_normal(x2[:, t:].shape)
            y2 = run_frames(layer, x2)[0]
            np.testing.assert_array_equal(y2[:, :t], y[:, :t])
            if t < 7:
                assert np.any(y2[:, t] != y[:, t])

    @pytest.mark.parametrize("kind", ["conv", "tconv", "ftlstm", "unet"])
    def test_state_split_is_bit_identical(self, rng, kind):
        layer = _bound(_layers()[kind])
        cin = getattr(layer, "cin", 2)
        bins = layer.in_bins if hasattr(layer, "in_bins") else layer.bins
        x = rng.standard_normal((cin, 10, bins)).astype(np.float32)
        whole = run_frames(layer, x)[0]
        a, st = run_frames(layer, x[:, :4])
        b, _ = run_frames(layer, x[:, 4:], st)
        np.testing.assert_array_equal(np.concatenate([a, b], axis=1), whole)

    def test_unet_functional_matches_layer(self, rng):
        layer = _bound(UNetBlock("unet", 2, 17, 2))
        x = rng.standard_normal((2, 5, 17)).astype(np.float32)
        weights = {k[len("unet."):]: v for k, v in seed_init(layer, 0).arrays().items()}
        plain = _bound(UNetBlock("unet", 2, 17, 2), perturb_bn=False)
        np.testing.assert_array_equal(F.unet_block(x, weights), run_frames(plain, x)[0])

    def test_unet_too_few_bins(self):
        with pytest.raises(ConfigurationError):
            UNetBlock("u", 2, 4, 2)
