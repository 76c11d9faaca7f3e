import numpy as np
import pytest

from npas import baselines as bl
from npas import channel_am as am
from npas.link import DESK_LINK
from npas.matchers.ess import ess_build


@pytest.fixture(scope="module")
def kernels():
    return am.generate_kernels(DESK_LINK, am.required_memory(DESK_LINK))


@pytest.fixture(scope="module")
def trellis():
    return ess_build((1, 3, 5, 7), 16, 300)


class TestGenerators:
    def test_iid_follows_marginal(self, rng):
        p = np.array([0.4, 0.3, 0.2, 0.1])
        a = bl.iid_amplitudes(p, 100_000, rng)
        np.testing.assert_allclose(np.bincount(a, minlength=4) / a.size, p, atol=5e-3)
        with pytest.raises(ValueError):
            bl.iid_amplitudes([0.5, 0.6], 3, rng)

    def test_uniform_and_signs(self, rng):
        a = bl.uniform_amplitudes(16, (10, 8), rng)
        assert a.shape == (10, 8) and a.min() >= 0 and a.max() < 16
        s = bl.random_signs((10, 8), rng)
        assert s.shape == (10, 8, 2)
        assert set(np.unique(s)) == {-1, 1}

    def test_ess_blocks_respect_energy(self, trellis, rng):
        lv = bl.ess_levels(trellis, 50, rng)
        energy = np.sum(np.asarray(trellis.levels)[lv] ** 2, axis=1)
        assert np.all(energy <= trellis.e_max)

    def test_ess_amplitudes_index_layout(self, trellis, qam64, rng):
        a = bl.ess_amplitudes(trellis, 20, 4, rng)
        assert a.shape == (20, 16)
        pts = qam64.amplitude_points()[a]
        scale = qam64.alphabet.levels[0] / pts.real.min()
        e_i = np.sum((pts.real * scale) ** 2, axis=1)
        e_q = np.sum((pts.imag * scale) ** 2, axis=1)
        assert np.all(np.round(e_i) <= trellis.e_max) and np.all(np.round(e_q) <= trellis.e_max)

    def test_signed_symbols(self, qam64, rng):
        amp = rng.integers(0, 16, size=30)
        signs = bl.random_signs(30, rng)
        x = bl.signed_symbols(qam64, amp, signs)
        np.testing.assert_array_equal(np.sign(x.real), signs[:, 0])
        np.testing.assert_array_equal(np.sign(x.imag), signs[:, 1])


class TestCandidates:
    def test_distinct_permutations_of_base(self, rng):
        base = rng.integers(0, 16, size=32)
        cands, perms = bl.generate_candidates(base, 64, rng)
        assert cands.shape == (64, 32)
        np.testing.assert_array_equal(cands[0], base)
        assert len({c.tobytes() for c in cands}) == 64
        np.testing.assert_array_equal(cands, base[perms])
        for c in cands:
            np.testing.assert_array_equal(np.sort(c), np.sort(base))

    def test_too_few_orderings(self, rng):
        with pytest.raises(ValueError, match="distinct"):
            bl.generate_candidates(np.array([1, 1, 2]), 4, rng, max_tries=50)
        with pytest.raises(ValueError):
            bl.generate_candidates(np.arange(3), 0, rng)


class TestSelection:
    def test_metric_zero_without_nonlinearity(self, kernels, rng):
        ext = rng.standard_normal((3, 48)) + 1j * rng.standard_normal((3, 48))
        np.testing.assert_allclose(bl.am_metric(ext, kernels, 0.0, slice(16, 32)), 0.0)

    def test_metric_equals_direct_am_energy(self, kernels, rng):
        ext = rng.standard_normal(48) + 1j * rng.standard_normal(48)
        y = am.am_propagate(ext, kernels, 0.2, 0.0)
        assert bl.am_metric(ext, kernels, 0.2, slice(16, 32)) == pytest.approx(np.sum(np.abs(y - ext)[16:32] ** 2))

    def test_context_must_cover_memory(self, kernels):
        with pytest.raises(ValueError, match="memory"):
            bl.am_metric(np.ones(20, complex), kernels, 0.1, slice(1, 19))

    def test_select_argmin_first_tie(self):
        c = np.arange(12).reshape(4, 3)
        sel, i = bl.select_sequence(c, [3.0, 1.0, 1.0, 2.0])
        assert i == 1
        np.testing.assert_array_equal(sel, c[1])
        with pytest.raises(ValueError):
            bl.select_sequence(c, [])

    def test_stream_selection_lowers_predicted_nlin(self, kernels, qam64, rng):
        L, nb = 16, 12
        amp = bl.uniform_amplitudes(16, (nb, L), rng)
        blocks = bl.signed_symbols(qam64, amp, bl.random_signs((nb, L), rng))
        gamma = DESK_LINK.gamma_w_km * 10 ** 0.6 * 1e-3
        out, perms = bl.select_stream(blocks, kernels, gamma, 16, rng)
        np.testing.assert_array_equal(out, np.take_along_axis(blocks, perms, axis=1))
        e_base = am.am_nlin_energy(blocks.ravel(), kernels, gamma)
        e_sel = am.am_nlin_energy(out.ravel(), kernels, gamma)
        assert e_sel < e_base
