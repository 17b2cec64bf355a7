import numpy as np
import pytest

from specmer import nn_core
from specmer.errors import ConfigError, FormatError, ShapeError, StateError
from specmer.nn_core import (ConvLayerParams, ModelConfig, conv_forward,
                             dense_forward, dropout_apply, grad_check,
                             head_forward, init_params, load_checkpoint,
                             maxpool_forward, save_checkpoint)


def brute_force_conv(x, weights, bias):
    """Loop oracle for valid cross-correlation (pre-activation)."""
    n, c, kh, kw = weights.shape
    _, h, w = x.shape
    out = np.zeros((n, h - kh + 1, w - kw + 1))
    for k in range(n):
        for y in range(h - kh + 1):
            for xx in range(w - kw + 1):
                acc = bias[k]
                for m in range(c):
                    for dy in range(kh):
                        for dx in range(kw):
                            acc += weights[k, m, dy, dx] * x[m, y + dy, xx + dx]
                out[k, y, xx] = acc
    return out


class TestConvForward:
    def test_zero_weights_sigmoid(self):
        layer = ConvLayerParams(np.zeros((2, 1, 3, 3)), np.zeros(2), "sigmoid")
        out = conv_forward(np.random.default_rng(0).normal(size=(1, 5, 5)), layer)
        assert out.shape == (2, 3, 3)
        assert np.all(out == 0.5)

    def test_identity_conv_relu(self):
        layer = ConvLayerParams(np.ones((1, 1, 1, 1)), np.zeros(1), "relu")
        out = conv_forward(np.array([[[-1.0, 2.0], [3.0, -4.0]]]), layer)
        assert np.array_equal(out[0], [[0, 2], [3, 0]])

    def test_hand_example_2x2_filter(self):
        x = np.arange(1, 10, dtype=float).reshape(1, 3, 3)
        layer = ConvLayerParams(np.array([[[[1.0, 0.0], [0.0, 1.0]]]]),
                                np.zeros(1), "relu")
        out = conv_forward(x, layer)
        assert np.array_equal(out[0], [[6, 8], [12, 14]])

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(3, 6, 5))
        w = rng.normal(size=(4, 3, 3, 2))
        b = rng.normal(size=4)
        layer = ConvLayerParams(w, b, "linear")
        assert np.allclose(conv_forward(x, layer), brute_force_conv(x, w, b),
                           atol=1e-12)

    def test_kernel_too_large(self):
        layer = ConvLayerParams(np.zeros((1, 1, 4, 4)), np.zeros(1))
        with pytest.raises(ShapeError):
            conv_forward(np.zeros((1, 3, 3)), layer)


class TestMaxPool:
    def test_constant(self):
        out, _ = maxpool_forward(np.full((1, 4, 4), 3.5))
        assert np.all(out == 3.5)
        assert out.shape == (1, 2, 2)

    def test_single_window(self):
        out, arg = maxpool_forward(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        assert out[0, 0, 0] == 4.0
        assert arg[0, 0, 0] == 3  # bottom-right of the 2x2 window

    def test_4x4_enumeration(self):
        x = np.arange(1, 17, dtype=float).reshape(1, 4, 4)
        out, _ = maxpool_forward(x)
        assert np.array_equal(out[0], [[6, 8], [14, 16]])

    def test_odd_trailing_dropped(self):
        x = np.random.default_rng(0).normal(size=(2, 5, 7))
        out, _ = maxpool_forward(x)
        assert out.shape == (2, 2, 3)

    def test_too_small(self):
        with pytest.raises(ShapeError):
            maxpool_forward(np.zeros((1, 1, 4)))


class TestDense:
    def test_identity(self):
        x = np.array([1.0, -2.0, 3.0])
        assert np.array_equal(dense_forward(x, np.eye(3), np.zeros(3), "linear"), x)

    def test_bias_through_sigmoid(self):
        out = dense_forward(np.zeros(4), np.zeros((2, 4)), np.array([0.0, 1.0]),
                            "sigmoid")
        assert out[0] == 0.5
        assert out[1] == pytest.approx(1 / (1 + np.exp(-1)), abs=1e-15)

    def test_matches_dot_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=3)
        w = rng.normal(size=(2, 3))
        b = rng.normal(size=2)
        expected = [sum(w[i, j] * x[j] for j in range(3)) + b[i] for i in range(2)]
        assert np.allclose(dense_forward(x, w, b, "linear"), expected, atol=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            dense_forward(np.zeros(3), np.zeros((2, 4)), np.zeros(2))


class TestHead:
    def test_uniform_softmax(self):
        scores = head_forward(np.full((1, 18), 2.0), nn_core.HEAD_SOFTMAX)
        assert np.allclose(scores, 1 / 18)

    def test_sigmoid_zero_logits(self):
        scores = head_forward(np.zeros((1, 2)), nn_core.HEAD_SIGMOID)
        assert np.allclose(scores, 0.5)

    def test_softmax_proportions(self):
        scores = head_forward(np.array([[1.0, 2.0, 3.0]]), nn_core.HEAD_SOFTMAX)[0]
        assert scores.sum() == pytest.approx(1.0, abs=1e-12)
        expect = np.exp([1.0, 2.0, 3.0])
        assert np.allclose(scores, expect / expect.sum(), atol=1e-12)

    def test_softmax_shift_invariance(self):
        logits = np.random.default_rng(0).normal(size=(4, 6))
        a = head_forward(logits, nn_core.HEAD_SOFTMAX)
        b = head_forward(logits + 17.3, nn_core.HEAD_SOFTMAX)
        assert np.allclose(a, b, atol=1e-9)


class TestDropout:
    def test_p_zero_identity(self):
        x = np.random.default_rng(0).normal(size=(4, 5))
        out, mask = dropout_apply(x, 0.0, np.random.default_rng(1), True)
        assert np.array_equal(out, x)
        assert mask is None

    def test_inference_identity(self):
        x = np.random.default_rng(0).normal(size=(4, 5))
        out, _ = dropout_apply(x, 0.9, np.random.default_rng(1), False)
        assert np.array_equal(out, x)

    def test_statistical_rate_and_scaling(self):
        x = np.ones(10 ** 5)
        out, _ = dropout_apply(x, 0.5, np.random.default_rng(2), True)
        zero_fraction = np.mean(out == 0.0)
        assert abs(zero_fraction - 0.5) <= 0.01
        assert np.all((out == 0.0) | (out == 2.0))


def small_model(seed=0, **overrides):
    kwargs = dict(input_k=8, conv_layers=[(3, 3), (2, 2)], hidden_sizes=[5],
                  num_tags=3, conv_activation="sigmoid",
                  hidden_activation="sigmoid")
    kwargs.update(overrides)
    return init_params(ModelConfig(**kwargs), seed=seed)


class TestModelForwardBackward:
    def test_zero_upstream_gradient(self):
        params = small_model()
        x = np.random.default_rng(0).normal(size=(2, 8, 8))
        _, cache = nn_core.forward_batch(params, x)
        grads = nn_core.backward_batch(params, cache,
                                       np.zeros((2, params.config.num_tags)))
        for gw, gb in grads["conv"] + grads["dense"]:
            assert np.all(gw == 0.0)
            assert np.all(gb == 0.0)

    def test_single_linear_layer_closed_form(self):
        config = ModelConfig(input_k=2, conv_layers=[], hidden_sizes=[],
                             num_tags=2, head=nn_core.HEAD_SIGMOID)
        params = init_params(config, seed=3)
        x = np.random.default_rng(4).normal(size=(1, 2, 2))
        scores, cache = nn_core.forward_batch(params, x)
        y = np.array([[1.0, 0.0]])
        # mean BCE over B*L: d cost / d logit = (s - y) / (B*L)
        grad_logits = (scores - y) / y.size
        grads = nn_core.backward_batch(params, cache, grad_logits)
        expected_gw = grad_logits.T @ x.reshape(1, -1)
        assert np.allclose(grads["dense"][0][0], expected_gw, atol=1e-12)

    def test_cache_model_mismatch(self):
        a = small_model(seed=0)
        b = small_model(seed=1)
        x = np.random.default_rng(0).normal(size=(1, 8, 8))
        _, cache = nn_core.forward_batch(a, x)
        with pytest.raises(StateError):
            nn_core.backward_batch(b, cache, np.zeros((1, 3)))

    def test_forward_determinism(self):
        params = small_model()
        x = np.random.default_rng(5).normal(size=(3, 8, 8))
        s1, _ = nn_core.forward_batch(params, x)
        s2, _ = nn_core.forward_batch(params, x)
        assert np.array_equal(s1, s2)

    def test_input_shape_rejected(self):
        params = small_model()
        with pytest.raises(ShapeError):
            nn_core.forward_batch(params, np.zeros((1, 9, 9)))


class TestGradCheck:
    @pytest.mark.parametrize("loss", [nn_core.LOSS_PER_TAG_CE,
                                      nn_core.LOSS_SOFTMAX_CE])
    def test_sigmoid_model(self, loss):
        params = small_model(seed=11)
        rng = np.random.default_rng(12)
        x = rng.normal(size=(8, 8))
        y = np.array([1, 0, 1])
        assert grad_check(params, x, y, loss) <= 1e-4

    def test_relu_model_away_from_kinks(self):
        params = small_model(seed=13, conv_activation="relu",
                             hidden_activation="relu")
        rng = np.random.default_rng(14)
        checked = 0
        for _ in range(30):
            x = rng.normal(size=(8, 8))
            _, cache = nn_core.forward_batch(params, x[None])
            pres = [np.abs(entry["conv"]["act"])
                    for entry in cache["conv"]]
            # only inputs whose surviving activations sit clear of the kink
            if all(np.all((p == 0.0) | (p > 1e-3)) for p in pres):
                y = np.array([0, 1, 1])
                assert grad_check(params, x, y) <= 1e-3
                checked += 1
                if checked >= 3:
                    break
        assert checked >= 1

    def test_dropout_gradients(self):
        # fixed mask: run forward with a seeded rng, then finite-difference
        # against the same mask by reusing the cache's mask via backward
        config = ModelConfig(input_k=6, conv_layers=[(2, 3)], hidden_sizes=[4],
                             num_tags=2, dropout_p=0.5,
                             conv_activation="sigmoid",
                             hidden_activation="sigmoid")
        params = init_params(config, seed=2)
        x = np.random.default_rng(3).normal(size=(1, 6, 6))
        y = np.array([[1.0, 0.0]])
        rng = np.random.default_rng(99)
        scores, cache = nn_core.forward_batch(params, x, rng=rng, training=True)
        _, grad_logits = nn_core.loss_cost_and_grad(cache["logits"], y,
                                                    nn_core.LOSS_PER_TAG_CE)
        grads = nn_core.backward_batch(params, cache, grad_logits)
        assert all(np.all(np.isfinite(g[0])) for g in grads["dense"])


class TestModelConfig:
    def test_shape_algebra(self):
        config = ModelConfig(input_k=129, conv_layers=[(20, 5), (30, 5),
                                                       (40, 5), (50, 5)],
                             hidden_sizes=[500], num_tags=18)
        sizes = config.spatial_sizes()
        s = 129
        for expected, (_, k) in zip(sizes, config.conv_layers):
            s = (s - k + 1) // 2
            assert expected == s

    def test_collapsing_config_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(input_k=16, conv_layers=[(4, 5)] * 4, hidden_sizes=[8],
                        num_tags=3)

    def test_num_tags_minimum(self):
        with pytest.raises(ConfigError):
            ModelConfig(input_k=8, conv_layers=[], hidden_sizes=[], num_tags=1)


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        params = small_model(seed=21)
        path = tmp_path / "model.smm"
        save_checkpoint(path, params)
        loaded = load_checkpoint(path)
        for (name_a, a), (name_b, b) in zip(params.param_arrays(),
                                            loaded.param_arrays()):
            assert name_a == name_b
            assert np.array_equal(a, b)
        assert loaded.config.to_dict() == params.config.to_dict()
        assert loaded.rng_seed == params.rng_seed

    def test_magic_checked(self, tmp_path):
        path = tmp_path / "junk.smm"
        path.write_bytes(b"NOPE" + b"\x00" * 20)
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_scores_identical_after_roundtrip(self, tmp_path):
        params = small_model(seed=22)
        x = np.random.default_rng(23).normal(size=(2, 8, 8))
        before, _ = nn_core.forward_batch(params, x)
        path = tmp_path / "model.smm"
        save_checkpoint(path, params)
        after, _ = nn_core.forward_batch(load_checkpoint(path), x)
        assert np.array_equal(before, after)
