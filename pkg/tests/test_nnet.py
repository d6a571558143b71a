import numpy as np
import pytest

from diffbc import nnet
from diffbc.errors import (ConfigError, DomainError, ShapeError, StateError,
                           TrainingError)
from diffbc.rng import substream

from helpers import fd_gradcheck


def small_mlp(activation="gelu", seed=0, sizes=(5, 12, 8, 3)):
    return nnet.init_mlp(list(sizes), activation, substream(seed, "init"))


class TestForward:
    def test_zero_model_maps_anything_to_zero(self):
        layers = [nnet.Layer(np.zeros((4, 3)), np.zeros(4)),
                  nnet.Layer(np.zeros((2, 4)), np.zeros(2))]
        model = nnet.MlpModel(layers, "gelu")
        out = model.forward(np.array([1.5, -2.0, 0.25]))
        assert np.array_equal(out, np.zeros(2))

    def test_identity_layer_returns_input(self):
        model = nnet.MlpModel([nnet.Layer(np.eye(4), np.zeros(4))], "identity")
        x = np.array([0.1, -0.7, 3.0, 0.0])
        assert np.array_equal(model.forward(x), x)

    def test_matches_scalar_loop_recomputation(self):
        model = small_mlp(sizes=(3, 6, 2), seed=4)
        x = np.ones(3)
        # independent scalar re-evaluation of the same arithmetic
        h = [0.0] * 6
        l0 = model.layers[0]
        from scipy.special import erf

        for i in range(6):
            z = sum(l0.w[i, j] * x[j] for j in range(3)) + l0.b[i]
            h[i] = 0.5 * z * (1.0 + erf(z / np.sqrt(2.0)))
        l1 = model.layers[1]
        expected = [sum(l1.w[i, j] * h[j] for j in range(6)) + l1.b[i] for i in range(2)]
        np.testing.assert_allclose(model.forward(x), expected, rtol=1e-12)

    def test_dimension_mismatch_raises(self):
        with pytest.raises(ShapeError):
            small_mlp().forward(np.zeros(4))

    def test_nonfinite_input_raises(self):
        with pytest.raises(DomainError):
            small_mlp().forward(np.array([1.0, np.nan, 0.0, 0.0, 0.0]))

    def test_noncomposing_layers_rejected(self):
        with pytest.raises(ShapeError):
            nnet.MlpModel([nnet.Layer(np.zeros((4, 3)), np.zeros(4)),
                           nnet.Layer(np.zeros((2, 5)), np.zeros(2))], "gelu")


class TestBackward:
    def test_linear_squared_error_closed_form(self):
        rng = substream(1, "t")
        w = rng.standard_normal((3, 4))
        model = nnet.MlpModel([nnet.Layer(w, np.zeros(3))], "identity")
        x = rng.standard_normal(4)
        y = rng.standard_normal(3)
        cache = nnet.MlpCache()
        out = model.forward(x, cache)
        input_grad = model.backward(cache, 2.0 * (out - y))
        expected = 2.0 * w.T @ (w @ x - y)
        np.testing.assert_allclose(input_grad, expected, rtol=1e-12)

    @pytest.mark.parametrize("activation", ["gelu", "leaky_relu", "identity"])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gradients_match_finite_differences(self, activation, seed):
        model = small_mlp(activation, seed)
        rng = substream(seed, "data")
        x = rng.standard_normal((6, 5))
        target = rng.standard_normal((6, 3))

        def loss():
            out = model.forward(x)
            return float(((out - target) ** 2).sum(axis=1).mean())

        cache = nnet.MlpCache()
        out = model.forward(x, cache)
        model.zero_grads()
        model.backward(cache, (2.0 / 6) * (out - target))
        assert fd_gradcheck(loss, model.parameters()) < 1e-4

    def test_zero_upstream_gives_zero_gradients(self):
        model = small_mlp()
        x = substream(2, "x").standard_normal((4, 5))
        cache = nnet.MlpCache()
        model.forward(x, cache)
        model.zero_grads()
        input_grad = model.backward(cache, np.zeros((4, 3)))
        assert np.array_equal(input_grad, np.zeros((4, 5)))
        for p in model.parameters():
            assert np.array_equal(p.grad, np.zeros_like(p.grad))

    def test_backward_without_forward_raises(self):
        model = small_mlp()
        with pytest.raises(StateError):
            model.backward(None, np.zeros((1, 3)))
        with pytest.raises(StateError):
            model.backward(nnet.MlpCache(), np.zeros((1, 3)))

    def test_cache_single_use(self):
        model = small_mlp()
        cache = nnet.MlpCache()
        model.forward(np.zeros(5), cache)
        model.backward(cache, np.zeros(3))
        with pytest.raises(StateError):
            model.backward(cache, np.zeros(3))


class TestAdam:
    def test_zero_gradient_leaves_parameters(self):
        model = small_mlp()
        before = [p.value.copy() for p in model.parameters()]
        opt = nnet.AdamState(model.parameters())
        model.zero_grads()
        opt.step(model.parameters())
        assert opt.step_count == 1
        for p, prev in zip(model.parameters(), before):
            assert np.array_equal(p.value, prev)

    def test_constant_gradient_moves_against_sign(self):
        model = small_mlp(seed=5)
        opt = nnet.AdamState(model.parameters(), lr=1e-3)
        start = [p.value.copy() for p in model.parameters()]
        g = [substream(6, "g", i).standard_normal(p.grad.shape) + 0.5
             for i, p in enumerate(model.parameters())]
        for _ in range(50):
            for p, gi in zip(model.parameters(), g):
                p.grad[:] = gi
            opt.step(model.parameters())
        for p, s, gi in zip(model.parameters(), start, g):
            moved = p.value - s
            assert (np.sign(moved) == -np.sign(gi)).all()

    def test_first_step_magnitude_is_learning_rate(self):
        # by-hand evaluation of the very first update: mhat/sqrt(vhat) = sign(g)
        model = small_mlp(seed=7)
        opt = nnet.AdamState(model.parameters(), lr=2e-3)
        start = [p.value.copy() for p in model.parameters()]
        for p in model.parameters():
            p.grad[:] = substream(8, "g").standard_normal(p.grad.shape)
        opt.step(model.parameters())
        for p, s in zip(model.parameters(), start):
            step = np.abs(p.value - s)
            np.testing.assert_allclose(step, 2e-3, rtol=1e-4)

    def test_nonfinite_gradient_names_layer(self):
        model = small_mlp()
        opt = nnet.AdamState(model.parameters())
        model.zero_grads()
        model.layers[1].gw[0, 0] = np.inf
        with pytest.raises(TrainingError, match="layer1"):
            opt.step(model.parameters())

    def test_training_sanity_two_hundred_steps(self):
        model = nnet.init_mlp([1, 32, 1], "gelu", substream(3, "init"))
        opt = nnet.AdamState(model.parameters(), lr=1e-2)
        xs = np.linspace(-1.0, 1.0, 64)[:, None]
        ys = np.sin(3.0 * xs)
        losses = []
        for _ in range(200):
            cache = nnet.MlpCache()
            pred = model.forward(xs, cache)
            resid = pred - ys
            losses.append(float((resid**2).sum(axis=1).mean()))
            model.zero_grads()
            model.backward(cache, (2.0 / 64) * resid)
            opt.step(model.parameters())
        assert np.isfinite(losses).all()
        assert np.mean(losses[-20:]) < np.mean(losses[:20])
        assert losses[-1] < losses[0]


class TestDeterminism:
    def test_bit_identical_training_given_same_seed(self):
        def run():
            model = small_mlp(seed=11)
            opt = nnet.AdamState(model.parameters(), lr=1e-3)
            rng = substream(12, "data")
            for _ in range(5):
                x = rng.standard_normal((8, 5))
                t = rng.standard_normal((8, 3))
                cache = nnet.MlpCache()
                out = model.forward(x, cache)
                model.zero_grads()
                model.backward(cache, (2.0 / 8) * (out - t))
                opt.step(model.parameters())
            return [p.value.copy() for p in model.parameters()]

        a, b = run(), run()
        for pa, pb in zip(a, b):
            assert np.array_equal(pa, pb)


class TestInit:
    def test_uniform_bounds(self):
        model = small_mlp(seed=13)
        for layer in model.layers:
            bound = np.sqrt(6.0 / (layer.in_dim + layer.out_dim))
            assert np.abs(layer.w).max() <= bound
            assert np.array_equal(layer.b, np.zeros_like(layer.b))


class TestSinusoidalEmbedding:
    def test_tau_zero_alternates_zero_one(self):
        emb = nnet.TimeEmbedding(8)
        np.testing.assert_array_equal(nnet.sinusoidal_embed(0, emb),
                                      [0, 1, 0, 1, 0, 1, 0, 1])

    def test_injective_over_first_fifty_steps(self):
        emb = nnet.TimeEmbedding(128)
        vecs = nnet.sinusoidal_embed_batch(np.arange(1, 51), emb)
        diffs = np.linalg.norm(vecs[:, None, :] - vecs[None, :, :], axis=2)
        diffs[np.diag_indices(50)] = np.inf
        assert diffs.min() > 1e-6

    def test_components_bounded_by_one(self):
        emb = nnet.TimeEmbedding(64, base=500.0)
        for tau in [1, 7, 50, 12345]:
            assert np.abs(nnet.sinusoidal_embed(tau, emb)).max() <= 1.0

    def test_odd_dimension_rejected(self):
        with pytest.raises(ConfigError):
            nnet.TimeEmbedding(7)
