import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from npas.matchers.adm import (
    TOTAL,
    AdmCorruptionError,
    AdmUnderflowError,
    QuantizedCdf,
    adm_decode,
    adm_encode,
    quantize_distribution,
    quantize_many,
)
from npas.matchers.ess import (
    ess_build,
    ess_decode,
    ess_encode,
    find_ess_operating_point,
    load_trellis,
    save_trellis,
    sequence_counts_by_energy,
)


def iid(p):
    p = np.asarray(p, dtype=float)
    return lambda prefix: p


def markov(P, start):
    """First-order source: the next distribution depends on the last symbol."""
    P = np.asarray(P, dtype=float)
    start = np.asarray(start, dtype=float)
    return lambda prefix: start if not prefix else P[prefix[-1]]


@st.composite
def distributions(draw, max_k=6):
    k = draw(st.integers(1, max_k))
    w = draw(st.lists(st.floats(0.0, 1.0), min_size=k, max_size=k))
    w = np.asarray(w) + np.asarray(draw(st.lists(st.sampled_from([0.0, 1e-3]), min_size=k, max_size=k)))
    if w.sum() == 0:
        w[0] = 1.0
    return w / w.sum()


class TestQuantize:
    @given(distributions())
    def test_cdf_invariants(self, p):
        cum = quantize_distribution(p)
        assert cum[0] == 0 and cum[-1] == TOTAL
        counts = np.diff(cum)
        assert np.all((counts > 0) == (p > 0))

    @given(st.lists(distributions(max_k=5).filter(lambda p: p.size == 5), min_size=1, max_size=6))
    def test_vectorized_matches_scalar(self, ps):
        arr = np.stack(ps)
        np.testing.assert_array_equal(quantize_many(arr), [quantize_distribution(p) for p in ps])

    @pytest.mark.parametrize("bad", [[0.5, 0.6], [1.2, -0.2], [float("nan"), 1.0]])
    def test_rejects_invalid(self, bad):
        with pytest.raises(ValueError):
            quantize_distribution(bad)


class TestAdm:
    @settings(max_examples=300, deadline=None)
    @given(p=distributions(), L=st.integers(1, 24), seed=st.integers(0, 2**32 - 1))
    def test_roundtrip_iid(self, p, L, seed):
        bits = list(np.random.default_rng(seed).integers(0, 2, size=64 * L + 64))
        idx, used = adm_encode(bits, iid(p), L)
        assert len(idx) == L
        assert all(p[s] > 0 for s in idx)
        assert adm_decode(idx, iid(p)) == bits[:used]

    def test_roundtrip_markov_stream(self, rng):
        P = [[0.7, 0.2, 0.1], [0.1, 0.1, 0.8], [1 / 3, 1 / 3, 1 / 3]]
        src = markov(P, [0.2, 0.3, 0.5])
        bits = list(rng.integers(0, 2, size=5000))
        pos = 0
        for _ in range(100):
            idx, used = adm_encode(bits[pos:], src, 12)
            assert adm_decode(idx, src) == bits[pos : pos + used]
            pos += used
        assert pos > 0

    def test_rate_approaches_entropy(self, rng):
        p = np.array([0.5, 0.25, 0.125, 0.125])
        bits = list(rng.integers(0, 2, size=200_000))
        idx, used = adm_encode(bits, iid(p), 20_000)
        h = -np.sum(p * np.log2(p))
        assert used / 20_000 == pytest.approx(h, abs=0.01)
        freq = np.bincount(idx, minlength=4) / len(idx)
        np.testing.assert_allclose(freq, p, atol=0.01)

    def test_degenerate_distribution_consumes_nothing(self):
        idx, used = adm_encode([1, 0, 1], iid([0, 0, 1, 0]), 5)
        assert idx == [2, 2, 2, 2, 2]
        assert used == 0

    def test_dyadic_distribution_is_exact(self):
        # each symbol of a uniform 4-ary source carries exactly two bits
        bits = [1, 0, 0, 1, 1, 1, 0, 0]
        idx, used = adm_encode(bits, iid([0.25] * 4), 4)
        assert idx == [2, 1, 3, 0]
        assert used == 8

    def test_underflow(self):
        with pytest.raises(AdmUnderflowError):
            adm_encode([1], iid([0.5, 0.5]), 10)

    def test_corrupt_symbol(self):
        with pytest.raises(AdmCorruptionError):
            adm_decode([0, 3], iid([0.5, 0.5, 0.0, 0.0]))

    def test_accepts_pre_quantized_cdf(self, rng):
        p = [0.6, 0.3, 0.1]
        cdf = QuantizedCdf(quantize_distribution(p))
        bits = list(rng.integers(0, 2, size=200))
        assert adm_encode(bits, lambda _: cdf, 20) == adm_encode(bits, iid(p), 20)


def brute_force_count(levels, n, e_max):
    return sum(1 for s in itertools.product(levels, repeat=n) if sum(x * x for x in s) <= e_max)


class TestEss:
    @pytest.mark.parametrize("levels", [(1, 3), (1, 3, 5, 7)])
    @pytest.mark.parametrize("n", [1, 2, 5])
    def test_counts_match_brute_force(self, levels, n):
        e_top = n * levels[-1] ** 2
        for e_max in range(n, e_top + 1, max(1, e_top // 7)):
            if e_max < n:
                continue
            t = ess_build(levels, n, e_max)
            assert t.total == brute_force_count(levels, n, e_max)

    def test_bijection_and_lexicographic_order(self):
        t = ess_build((1, 3, 5, 7), 4, 60)
        seqs = [ess_encode(i, t) for i in range(t.total)]
        assert seqs == sorted(seqs)
        assert len({tuple(s) for s in seqs}) == t.total
        assert all(sum(x * x for x in s) <= 60 for s in seqs)
        assert [ess_decode(s, t) for s in seqs] == list(range(t.total))

    def test_energy_histogram_matches_enumeration(self):
        levels, n = (1, 3, 5), 4
        dist = sequence_counts_by_energy(levels, n)
        brute = np.zeros(len(dist), dtype=int)
        for s in itertools.product(levels, repeat=n):
            brute[sum(x * x for x in s)] += 1
        np.testing.assert_array_equal(dist, brute)

    def test_operating_point(self):
        e_max, rate = find_ess_operating_point((1, 3, 5, 7), 32, 1.93)
        t = ess_build((1, 3, 5, 7), 32, e_max)
        assert t.k_bits == math.floor(math.log2(t.total))
        assert rate == pytest.approx(t.rate)
        assert abs(rate - 1.93) < 1 / 32

    def test_marginal_favours_low_levels(self):
        m = ess_build((1, 3, 5, 7), 16, 300).marginal()
        assert m.sum() == pytest.approx(1.0)
        assert np.all(np.diff(m) < 0)

    def test_errors(self):
        t = ess_build((1, 3), 3, 11)
        with pytest.raises(ValueError):
            ess_encode(t.total, t)
        with pytest.raises(ValueError):
            ess_decode([3, 3, 3], t)
        with pytest.raises(ValueError):
            ess_decode([1, 2, 1], t)
        with pytest.raises(ValueError):
            ess_build((1, 3), 3, 2)
        with pytest.raises(ValueError):
            ess_build((1.5, 3), 3, 20)

    def test_trellis_file_roundtrip(self, tmp_path):
        t = ess_build((1, 3, 5, 7), 32, 600)
        save_trellis(tmp_path / "t.ess", t)
        assert load_trellis(tmp_path / "t.ess", (1, 3, 5, 7)) == t

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**61 - 1))
    def test_large_trellis_roundtrip(self, raw):
        t = _big()
        i = raw % t.total
        assert ess_decode(ess_encode(i, t), t) == i


_BIG = []


def _big():
    if not _BIG:
        _BIG.append(ess_build((1, 3, 5, 7), 32, 600))
    return _BIG[0]
