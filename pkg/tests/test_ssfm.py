import numpy as np
import pytest

from npas.link import DESK_LINK, LinkParams
from npas.ssfm_link import (
    AliasingError,
    ChainConfig,
    SsfmConfig,
    StepSizeError,
    Waveform,
    cd_compensate,
    cpr_pilot,
    edfa,
    load_waveform,
    matched_filter,
    pilot_mask,
    rrc_shape,
    rrc_spectrum,
    rrc_taps,
    save_waveform,
    simulate_link,
    ssfm_propagate,
    wdm_demux,
    wdm_mux,
)


def qpsk(rng, shape):
    return (1 - 2 * rng.integers(0, 2, size=shape) + 1j * (1 - 2 * rng.integers(0, 2, size=shape))) / np.sqrt(2)


def evm_db(y, x):
    return 10 * np.log10(np.mean(np.abs(y - x) ** 2) / np.mean(np.abs(x) ** 2))


def nlin_db(y, x):
    h = np.vdot(x, y) / np.vdot(x, x)
    return 10 * np.log10(np.mean(np.abs(y - h * x) ** 2))


class TestPulseShaping:
    @pytest.mark.parametrize("rolloff", [0.1, 0.25, 1.0])
    def test_taps_unit_energy_and_spectrum(self, rolloff):
        sps, span = 8, 64
        h = rrc_taps(rolloff, sps, span)
        assert np.sum(h**2) == pytest.approx(1.0)
        assert np.argmax(h) == h.size // 2
        # compare the tap spectrum against the analytic response up to a scale
        n = 4096
        H = np.abs(np.fft.fft(h, n))
        ref = rrc_spectrum(np.fft.fftfreq(n, 1 / sps), rolloff)
        H /= H[0]
        assert np.max(np.abs(H - ref)) < 0.03

    def test_matched_filter_has_no_isi(self, rng):
        x = qpsk(rng, 2048)
        wf = rrc_shape(x, 0.1, 4, 64)
        y = matched_filter(wf, 0.1, 4, 64)[0]
        assert evm_db(y, x) < -40

    def test_launch_power_matches_symbol_power(self, rng):
        wf = rrc_shape(qpsk(rng, 8192), 0.1, 4)
        assert wf.power() == pytest.approx(1.0, rel=0.02)

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            rrc_taps(0.0, 4)
        with pytest.raises(ValueError):
            rrc_taps(0.1, 1)


def cw(power_w, n=256, fs=200.0):
    return Waveform(np.full(n, np.sqrt(power_w), dtype=complex), fs)


class TestPropagation:
    def test_energy_conserved_without_loss(self, rng):
        link = LinkParams(span_km=40.0, alpha_db_km=1e-12, symbol_rate_gbd=50.0, launch_dbm=6.0)
        wf = rrc_shape(qpsk(rng, 1024), 0.1, 4, symbol_rate_gbd=50.0)
        wf.samples *= np.sqrt(link.launch_w)
        out = ssfm_propagate(wf, link)
        assert out.energy() == pytest.approx(wf.energy(), rel=1e-9)

    @pytest.mark.parametrize("step", [None, 2.0])
    def test_cw_self_phase_modulation(self, step):
        link = DESK_LINK
        P = 5e-3
        cfg = SsfmConfig(step_km=step, max_phase_rad=1.0)
        out = ssfm_propagate(cw(P), link, cfg)
        phase = np.angle(out.samples[0, 0])
        assert phase == pytest.approx(link.gamma_w_km * P * link.l_eff, abs=1e-6)
        np.testing.assert_allclose(np.abs(out.samples) ** 2, P * np.exp(-link.alpha * link.span_km), rtol=1e-9)

    def test_manakov_phase_uses_joint_power(self):
        P = 2e-3
        wf = Waveform(np.full((2, 64), np.sqrt(P / 2), dtype=complex), 200.0)
        out = ssfm_propagate(wf, DESK_LINK, SsfmConfig(polarization="manakov"))
        expect = 8 / 9 * DESK_LINK.gamma_w_km * P * DESK_LINK.l_eff
        np.testing.assert_allclose(np.angle(out.samples), expect, atol=1e-6)

    def test_manakov_needs_two_rails(self):
        with pytest.raises(ValueError):
            ssfm_propagate(cw(1e-3), DESK_LINK, SsfmConfig(polarization="manakov"))

    def test_linear_roundtrip_with_cd_compensation(self, rng):
        x = qpsk(rng, 2048)
        wf = rrc_shape(x, 0.1, 4, symbol_rate_gbd=DESK_LINK.symbol_rate_gbd)
        out = ssfm_propagate(wf, DESK_LINK, gamma=0.0)
        out = out.copy(out.samples * 10 ** (DESK_LINK.gain_db / 20))
        y = matched_filter(cd_compensate(out, DESK_LINK), 0.1, 4)[0]
        assert evm_db(y, x) < -40

    def test_step_halving_changes_nlin_little(self, rng):
        link = DESK_LINK.with_launch(6.0)
        x = qpsk(rng, 2048)
        runs = []
        for cap in (1e-3, 5e-4):
            c = ChainConfig(ase=False, ssfm=SsfmConfig(max_phase_rad=cap))
            runs.append(simulate_link(x[None, None], link, c, rng)[0, 0])
        assert abs(nlin_db(runs[0], x) - nlin_db(runs[1], x)) < 0.1

    def test_coarse_fixed_step_warns_or_raises(self):
        wf = cw(0.2)
        with pytest.warns(UserWarning, match="exceeds cap"):
            ssfm_propagate(wf, DESK_LINK, SsfmConfig(step_km=10.0))
        with pytest.raises(StepSizeError):
            ssfm_propagate(wf, DESK_LINK, SsfmConfig(step_km=10.0, strict=True))


class TestAmplifier:
    def test_ase_variance_is_psd_times_sample_rate(self, rng):
        wf = Waveform(np.zeros(200_000, dtype=complex), 200.0)
        out = edfa(wf, DESK_LINK.gain_db, DESK_LINK.nf_db, rng, DESK_LINK.carrier_hz)
        expect = DESK_LINK.ase_psd() * 200e9
        assert np.var(out.samples) == pytest.approx(expect, rel=0.01)

    def test_gain_and_noiseless_unity(self, rng):
        wf = cw(1e-3)
        out = edfa(wf, 0.0, 5.0, rng)
        np.testing.assert_allclose(out.samples, wf.samples)
        with pytest.raises(ValueError):
            edfa(wf, -1.0, 5.0, rng)


class TestWdm:
    def test_mux_demux_roundtrip(self, rng):
        sps, n_ch, spacing = 8, 3, 62.5
        xs = [qpsk(rng, 1024) for _ in range(n_ch)]
        chans = [rrc_shape(x, 0.1, sps, symbol_rate_gbd=50.0) for x in xs]
        mux = wdm_mux(chans, spacing)
        for i, x in enumerate(xs):
            ch = wdm_demux(mux, i, n_ch, spacing, 55.0)
            assert evm_db(matched_filter(ch, 0.1, sps)[0], x) < -40

    def test_aliasing_detected(self, rng):
        chans = [rrc_shape(qpsk(rng, 256), 0.1, 2, symbol_rate_gbd=50.0) for _ in range(3)]
        with pytest.raises(AliasingError):
            wdm_mux(chans, 55.0)

    def test_demux_decimation_checked(self):
        with pytest.raises(AliasingError):
            wdm_demux(cw(1e-3, fs=100.0), 0, 1, 55.0, 55.0, decimate=2)


class TestPhaseRecovery:
    def test_pilot_rate(self):
        m = pilot_mask(4000, 0.025)
        assert m.sum() == 100
        assert np.all(np.diff(np.nonzero(m)[0]) == 40)

    def test_recovers_slow_phase_drift(self, rng):
        n = 4000
        x = qpsk(rng, n)
        theta = 0.8 + 0.2 * np.sin(2 * np.pi * np.arange(n) / n)
        y = x * np.exp(1j * theta) + 0.01 * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        m = pilot_mask(n)
        z = cpr_pilot(y, x, m, 400)
        assert evm_db(z, x) < -30

    def test_block_without_pilots(self):
        with pytest.raises(ValueError, match="no pilots"):
            cpr_pilot(np.ones(100), np.ones(100), np.zeros(100, bool), 50)


class TestChain:
    def test_linear_low_power_tracks_ase(self, rng):
        link = DESK_LINK.with_launch(-6.0)
        x = qpsk(rng, (1, 1, 4096))
        y = simulate_link(x, link, ChainConfig(ssfm=SsfmConfig(max_step_km=5.0)), rng)
        snr = -evm_db(y[0, 0], x[0, 0])
        assert snr == pytest.approx(-10 * np.log10(link.ase_variance_normalized()), abs=0.3)

    def test_channel_count_checked(self, rng):
        with pytest.raises(ValueError):
            simulate_link(qpsk(rng, (2, 1, 64)), DESK_LINK, ChainConfig(), rng)


def test_waveform_file_roundtrip(tmp_path, rng):
    wf = Waveform(rng.standard_normal((2, 33)) + 1j * rng.standard_normal((2, 33)), 123.5)
    save_waveform(tmp_path / "w.bin", wf)
    back = load_waveform(tmp_path / "w.bin")
    np.testing.assert_array_equal(back.samples, wf.samples)
    assert back.sample_rate_ghz == wf.sample_rate_ghz
