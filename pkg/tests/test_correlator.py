import numpy as np
import pytest

from ccotdr.channel import FiberConfig, Reflector, build_fiber, channel_response, propagate
from ccotdr.correlator import (
    CalibrationError,
    CorrelationProfile,
    Correlator,
    FingerprintAccumulator,
    ReferencePeak,
    correlate_frame,
    fingerprint,
    power_trace,
    sidelobe_metric,
)
from ccotdr.dsp import direct_correlate_valid, fft_correlate_valid
from ccotdr.probe import ProbeConfig, generate_code, make_probe
from ccotdr.receiver import FrameCapture, ReceiverConfig, detect


def _probe(order=8, sps=1, rate=100e6, frame=None):
    n_code = 2**order * sps
    frame = frame or 4 * n_code / (rate * sps)
    return make_probe(ProbeConfig(rate, frame, sps, prbs_order=order))


def _echo(probe, h, sigma=0.0, seed=0, leak=0.0):
    r = propagate(probe.waveform, np.asarray(h, complex))
    rng = np.random.default_rng(seed) if sigma else None
    return detect(r, ReceiverConfig(sigma, leak), rng, sample_rate=1.0)


def _tap(n, k, value):
    h = np.zeros(n, complex)
    h[k] = value
    return h


@pytest.mark.parametrize("L", [1, 17, 256, 1024])
def test_fft_matches_direct(L):
    rng = np.random.default_rng(L)
    x = rng.standard_normal(3000) + 1j * rng.standard_normal(3000)
    ref = np.sign(rng.standard_normal(L))
    a, b = fft_correlate_valid(x, ref), direct_correlate_valid(x, ref)
    assert len(a) == 3000 - L + 1
    assert np.max(np.abs(a - b)) <= 1e-9 * np.max(np.abs(b))


def test_direct_matches_definition():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(40) + 1j * rng.standard_normal(40)
    ref = rng.standard_normal(8)
    expected = [sum(x[n + k] * ref[n] for n in range(8)) for k in range(33)]
    assert np.allclose(direct_correlate_valid(x, ref), expected)


def test_correlator_direct_and_fft_agree():
    probe = _probe()
    cap = _echo(probe, np.random.default_rng(1).standard_normal(200) * (1 + 0.5j), sigma=0.1)
    a = correlate_frame(cap, probe.code_waveform)
    b = correlate_frame(cap, probe.code_waveform, direct=True)
    scale = np.max(np.abs(b.rx))
    assert np.max(np.abs(a.rx - b.rx)) <= 1e-9 * scale


def test_peak_at_echo_delay():
    probe = _probe()
    prof = correlate_frame(_echo(probe, _tap(300, 123, 0.01)), probe.code_waveform)
    assert int(np.argmax(power_trace(prof))) == 123


def test_single_tap_phase_recovered():
    probe = _probe(order=10)
    amp = np.sqrt(10 ** (-5.5)) * np.exp(0.7j)
    prof = correlate_frame(_echo(probe, _tap(50, 20, amp)), probe.code_waveform)
    assert np.angle(prof.rx[20]) == pytest.approx(0.7, abs=1e-6)


def test_power_trace_sums_polarisations():
    prof = CorrelationProfile(np.array([3 + 4j]), np.array([0j]), 0, 1.0, 1.468)
    assert power_trace(prof)[0] == 25.0
    prof = CorrelationProfile(np.array([1j]), np.array([2.0 + 0j]), 0, 1.0, 1.468)
    assert power_trace(prof)[0] == 5.0


@pytest.mark.parametrize("sps", [1, 2, 5])
def test_unit_tap_gives_code_energy_squared(sps):
    probe = _probe(order=7, sps=sps)
    n_s = len(probe.code_waveform)
    p = power_trace(correlate_frame(_echo(probe, _tap(40, 9, 1.0)), probe.code_waveform))
    assert p[9] == pytest.approx(n_s**2)


def test_shift_covariance():
    probe = _probe()
    h = np.random.default_rng(3).standard_normal(100) + 0j
    p0 = power_trace(correlate_frame(_echo(probe, h), probe.code_waveform))
    p1 = power_trace(correlate_frame(_echo(probe, np.concatenate([np.zeros(37), h])), probe.code_waveform))
    assert np.allclose(p1[37:], p0[:-37], atol=1e-9 * p0.max())


def test_polarisation_and_phase_invariance():
    probe = _probe()
    h = np.random.default_rng(4).standard_normal(100) + 1j
    p0 = power_trace(correlate_frame(_echo(probe, h), probe.code_waveform))
    p1 = power_trace(correlate_frame(_echo(probe, h * np.exp(1.3j), leak=0.6), probe.code_waveform))
    assert np.allclose(p0, p1, rtol=1e-9, atol=1e-9 * p0.max())


def test_calibrated_reference_reads_level():
    probe = _probe(order=10)
    h = _tap(200, 60, 1e-3) + _tap(200, 150, 3e-3)
    prof = correlate_frame(_echo(probe, h), probe.code_waveform)
    dz = 0.5  # any spacing works; calibration is positional
    fp = fingerprint([prof], ReferencePeak(distance_m=prof.distance[60], level_db=-55.0, search_m=dz))
    assert fp.power_db[60] == -55.0
    # a pure dB shift: the ratio between the reflectors is preserved
    raw = fingerprint([prof])
    assert fp.power_db[150] - fp.power_db[60] == pytest.approx(raw.power_db[150] - raw.power_db[60])
    assert np.allclose(fp.power_db - raw.power_db, fp.calibration_offset_db)


def test_missing_reference_peak():
    probe = _probe()
    prof = correlate_frame(_echo(probe, np.zeros(10, complex), sigma=1.0), probe.code_waveform)
    with pytest.raises(CalibrationError):
        fingerprint([prof], ReferencePeak(prof.distance[5]))
    with pytest.raises(CalibrationError, match="outside"):
        fingerprint([prof], ReferencePeak(1e9))


def test_reflectors_10m_apart_at_2gsps():
    cfg = ProbeConfig(400e6, 25e-6, 5, prbs_order=13)
    probe = make_probe(cfg)
    fib = build_fiber(FiberConfig(20.0, rayleigh_coeff=None, reflectors=(Reflector(5.0, -50.0), Reflector(15.0, -50.0))),
                      cfg.sample_rate, 0)
    r = propagate(probe.waveform, channel_response(fib))
    prof = correlate_frame(detect(r, ReceiverConfig(), sample_rate=cfg.sample_rate), probe.code_waveform)
    p = power_trace(prof)
    k1 = int(np.argmax(p[:150]))
    k2 = 150 + int(np.argmax(p[150:400]))
    assert abs((k2 - k1) - 196) <= 1


def test_averaging_variance_scales_as_one_over_m():
    probe = _probe(order=6, frame=2048 / 100e6)
    corr = Correlator(probe.code_waveform, len(probe.waveform))
    rng = np.random.default_rng(9)

    def norm_var(m):
        acc = FingerprintAccumulator()
        for _ in range(m):
            acc.add(corr(detect(np.zeros(len(probe.waveform), complex), ReceiverConfig(1.0), rng)))
        p = acc.mean_power
        return p.var() / p.mean() ** 2

    v1 = np.mean([norm_var(1) for _ in range(8)])
    for m in (4, 16):
        assert norm_var(m) * m / v1 == pytest.approx(1.0, rel=0.3)


def test_averaging_identical_frames_is_identity():
    probe = _probe()
    prof = correlate_frame(_echo(probe, _tap(20, 5, 0.1)), probe.code_waveform)
    assert np.allclose(fingerprint([prof] * 5).power_db, fingerprint([prof]).power_db)


@pytest.mark.parametrize("order,lo,hi", [(7, 18.0, 24.0), (10, 25.0, 31.0)])
def test_sidelobe_metric_against_theory(order, lo, hi):
    probe = _probe(order=order, sps=2)
    prof = correlate_frame(_echo(probe, _tap(20, 10, 1.0)), probe.code_waveform)
    fp = fingerprint([prof])
    m = sidelobe_metric(fp, 10, len(probe.code_waveform), 2)
    assert lo <= m <= hi


def test_sidelobe_metric_two_equal_reflectors():
    probe = _probe(order=8, sps=1, frame=1500 / 100e6)
    n_s = len(probe.code_waveform)
    h = _tap(700, 20, 1.0) + _tap(700, 20 + n_s + 300, 1.0)
    fp = fingerprint([correlate_frame(_echo(probe, h), probe.code_waveform)])
    single = fingerprint([correlate_frame(_echo(probe, _tap(700, 20, 1.0)), probe.code_waveform)])
    m1 = sidelobe_metric(single, 20, n_s)
    m2 = sidelobe_metric(fp, 20, n_s, other_peaks=[20 + n_s + 300])
    assert m2 == pytest.approx(m1, abs=0.5)


def test_sidelobe_region_empty():
    fp = fingerprint([CorrelationProfile(np.ones(5, complex), np.zeros(5, complex), 0, 1.0, 1.0)])
    with pytest.raises(ValueError, match="empty"):
        sidelobe_metric(fp, 2, 100, 1, other_peaks=[3])


def test_correlator_rejects_wrong_length():
    probe = _probe()
    corr = Correlator(probe.code_waveform, len(probe.waveform))
    with pytest.raises(ValueError):
        corr(FrameCapture(np.zeros((4, 10)), 1.0, 0, 0.0))
