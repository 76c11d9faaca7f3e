import numpy as np
import pytest

from conftest import numeric_grad, rel_err
from npas import autodiff as ad
from npas import metrics as mt
from npas.optim import Adam, AdamConfig, optimizer_update
from npas.shaper import (
    ConditionalSource,
    ShaperParams,
    gumbel_softmax_sample,
    init_params,
    initial_state,
    load_checkpoint,
    sample_block,
    save_checkpoint,
    shaper_step,
    start_input,
    zero_params,
)


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_reference(p: ShaperParams, x, h, c):
    """Textbook LSTM cell written independently of the tape code."""
    H = p.hidden
    z = np.concatenate([x, h], axis=-1) @ p.W + p.b
    i, f, g, o = z[:, :H], z[:, H : 2 * H], z[:, 2 * H : 3 * H], z[:, 3 * H :]
    c = _sig(f) * c + _sig(i) * np.tanh(g)
    h = _sig(o) * np.tanh(c)
    return h @ p.W_out + p.b_out, h, c


@pytest.fixture
def params(rng):
    return init_params(5, 6, rng)


class TestLstmCell:
    def test_matches_reference(self, params, rng):
        x = start_input(params, 3)
        h, c = rng.standard_normal((2, 3, 6))
        logits, (h2, c2) = shaper_step(params, x, (h, c))
        ref = lstm_reference(params, x, h, c)
        np.testing.assert_allclose(logits, ref[0], atol=1e-14)
        np.testing.assert_allclose(h2, ref[1], atol=1e-14)
        np.testing.assert_allclose(c2, ref[2], atol=1e-14)

    def test_init_forget_bias(self, params):
        np.testing.assert_array_equal(params.b[6:12], 1.0)
        assert params.n_parameters() == (5 + 1 + 6) * 24 + 24 + 6 * 5 + 5

    def test_input_width_checked(self, params):
        with pytest.raises(ValueError, match="input width"):
            shaper_step(params, np.zeros((1, 3)), initial_state(params, 1))

    def test_backprop_through_time(self, params, rng):
        noise = rng.gumbel(size=(2, 3, 5))
        w = rng.standard_normal((2, 3, 5))

        def loss(b_out):
            p = ShaperParams(params.W, params.b, params.W_out, b_out)
            ro = sample_block(p, 3, 0.7, None, batch=2, noise=noise, relaxed=True)
            return ad.sum(ro.log_probs * w)

        tape = ad.Tape()
        v = tape.var(params.b_out)
        g = ad.backward(tape, loss(v))[v]
        g_num = numeric_grad(lambda b: float(loss(b)), params.b_out)
        assert rel_err(g, g_num) < 1e-6


class TestGumbelSoftmax:
    def test_hard_is_argmax_of_soft(self, rng):
        s = gumbel_softmax_sample(rng.standard_normal((50, 4)), 0.5, rng)
        np.testing.assert_array_equal(np.argmax(ad.value(s.soft), -1), s.index)
        np.testing.assert_array_equal(np.argmax(ad.value(s.hard), -1), s.index)
        np.testing.assert_allclose(ad.value(s.logp), np.take_along_axis(ad.value(s.log_probs), s.index[:, None], -1)[:, 0])

    def test_frequencies_follow_softmax(self):
        logits = np.log(np.array([0.1, 0.2, 0.3, 0.4]))
        s = gumbel_softmax_sample(np.tile(logits, (200_000, 1)), 1.0, np.random.default_rng(3))
        freq = np.bincount(s.index, minlength=4) / s.index.size
        np.testing.assert_allclose(freq, [0.1, 0.2, 0.3, 0.4], atol=4e-3)

    def test_straight_through_gradient_equals_relaxed(self, rng):
        logits0 = rng.standard_normal((3, 4))
        noise = rng.gumbel(size=(3, 4))
        w = rng.standard_normal((3, 4))
        tape = ad.Tape()
        v = tape.var(logits0)
        g_st = ad.backward(tape, ad.sum(gumbel_softmax_sample(v, 0.5, None, noise).hard * w))[v]

        def relaxed(lg):
            return float(np.sum(ad.value(gumbel_softmax_sample(lg, 0.5, None, noise).soft) * w))

        assert rel_err(g_st, numeric_grad(relaxed, logits0)) < 1e-6

    def test_temperature_must_be_positive(self, rng):
        with pytest.raises(ValueError):
            gumbel_softmax_sample(np.zeros((1, 3)), 0.0, rng)


class TestRollout:
    def test_shapes(self, params, rng):
        ro = sample_block(params, 7, 1.0, rng, batch=4)
        assert ad.shape_of(ro.onehots) == (4, 7, 5)
        assert ro.indices.shape == (4, 7)
        assert ad.shape_of(ro.logp) == (4, 7)

    def test_length_one_is_a_pure_marginal(self, params, rng):
        ro = sample_block(params, 1, 1.0, rng, batch=6)
        lp = ad.value(ro.log_probs)[:, 0]
        np.testing.assert_allclose(lp, np.broadcast_to(lp[0], lp.shape))

    def test_conditionals_match_adm_source(self, params, rng):
        ro = sample_block(params, 6, 1.0, rng, batch=3)
        src = ConditionalSource(params)
        for b in range(3):
            seq = list(ro.indices[b])
            for t in range(6):
                np.testing.assert_allclose(np.log(src(seq[:t])), ad.value(ro.log_probs)[b, t], atol=1e-12)

    def test_sampled_entropy_bounded_by_alphabet(self, params, rng):
        ro = sample_block(params, 8, 1.0, rng, batch=500)
        assert mt.sequence_entropy_rate(ro.logp, 8) <= np.log2(5) + 0.05

    def test_zero_params_give_uniform_conditionals(self, rng):
        ro = sample_block(zero_params(4, 3), 5, 1.0, rng, batch=2)
        np.testing.assert_allclose(ad.value(ro.log_probs), np.log(0.25))

    def test_invalid_length(self, params, rng):
        with pytest.raises(ValueError):
            sample_block(params, 0, 1.0, rng)


class TestCheckpoint:
    @pytest.mark.parametrize("width", [4, 8])
    def test_roundtrip(self, params, tmp_path, width):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, params, {"note": "x"}, float_width=width)
        loaded, meta = load_checkpoint(path)
        tol = 0 if width == 8 else 1e-7
        for k, v in params.arrays().items():
            np.testing.assert_allclose(loaded.arrays()[k], v, atol=tol)
        assert meta == {"note": "x"}

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad"
        p.write_bytes(b"XXXX" + bytes(40))
        with pytest.raises(ValueError, match="not a shaper checkpoint"):
            load_checkpoint(p)

    def test_truncated(self, params, tmp_path):
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, params)
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(ValueError):
            load_checkpoint(p)


class TestAdam:
    def test_first_step_is_signed_rate(self):
        opt = Adam(AdamConfig(rate=0.1))
        out = opt.update({"w": np.array([1.0, -2.0])}, {"w": np.array([3.0, -0.5])})
        np.testing.assert_allclose(out["w"], [0.9, -1.9], atol=1e-7)

    def test_matches_reference_over_steps(self, rng):
        c = AdamConfig(rate=0.01, beta1=0.8, beta2=0.99)
        opt = Adam(c)
        p = {"w": rng.standard_normal(3)}
        ref = p["w"].copy()
        m = v = np.zeros(3)
        for t in range(1, 6):
            g = rng.standard_normal(3)
            p = optimizer_update(p, {"w": g}, opt)
            m = c.beta1 * m + (1 - c.beta1) * g
            v = c.beta2 * v + (1 - c.beta2) * g * g
            ref = ref - c.rate * (m / (1 - c.beta1**t)) / (np.sqrt(v / (1 - c.beta2**t)) + c.eps)
        np.testing.assert_allclose(p["w"], ref, rtol=1e-12)

    def test_non_finite_gradient_raises(self):
        with pytest.raises(FloatingPointError):
            Adam().update({"w": np.zeros(2)}, {"w": np.array([np.nan, 0.0])})

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            Adam().update({"w": np.zeros(2)}, {"w": np.zeros(3)})

    def test_minimizes_quadratic(self):
        opt = Adam(AdamConfig(rate=0.05))
        p = {"w": np.array([3.0, -4.0])}
        for _ in range(500):
            p = opt.update(p, {"w": 2 * p["w"]})
        np.testing.assert_allclose(p["w"], 0.0, atol=1e-2)
