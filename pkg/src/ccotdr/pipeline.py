"""End-to-end simulation and processing of a scenario.

Randomness is drawn from independent streams keyed by (seed, purpose,
frame), so each frame can be produced in any order or thread and the
results stay bit-identical.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from . import analysis as an
from .channel import FiberConfig, Propagator, Reflector, build_fiber, channel_response
from .correlator import (
    CalibrationError,
    CorrelationProfile,
    Correlator,
    Fingerprint,
    FingerprintAccumulator,
    ReferencePeak,
    power_trace,
    sidelobe_metric,
)
from .probe import FrameTiming, make_probe, timing
from .receiver import FrameCapture, ReceiverConfig, detect
from .scenario import Scenario

FIBER, LASER, NOISE, CALIBRATION = 0, 1, 2, 3


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def ordered_map(fn: Callable, items, threads: int = 1) -> Iterator:
    """``map`` over a thread pool, yielding in input order with bounded lookahead."""
    items = iter(items)
    if threads <= 1:
        yield from map(fn, items)
        return
    with ThreadPoolExecutor(threads) as pool:
        pending = []
        for item in items:
            pending.append(pool.submit(fn, item))
            if len(pending) >= 2 * threads:
                yield pending.pop(0).result()
        for fut in pending:
            yield fut.result()


def _as_capture_dtype(cap: FrameCapture) -> FrameCapture:
    # the capture file stores float32; simulating at that precision keeps
    # in-memory runs identical to file round trips
    return FrameCapture(cap.channels.astype(np.float32), cap.sample_rate, cap.frame_index, cap.timestamp)


def _reference_only_power(scenario: Scenario, position: float, reflectance_db: float) -> float:
    probe = make_probe(scenario.probe)
    fs = scenario.probe.sample_rate
    cfg = FiberConfig(position, scenario.fiber.attenuation, scenario.fiber.group_index, None,
                      (Reflector(position, reflectance_db),))
    fiber = build_fiber(cfg, fs, 0)
    r = Propagator(probe.waveform, fiber.n_taps)(channel_response(fiber))
    cap = _as_capture_dtype(detect(r, ReceiverConfig(0.0, scenario.receiver.pol_leak), sample_rate=fs))
    p = power_trace(Correlator(probe.code_waveform, len(probe.waveform), scenario.fiber.group_index)(cap))
    k = fiber.n_taps - 1
    lo, hi = max(k - probe.samples_per_symbol, 0), k + probe.samples_per_symbol + 1
    return float(p[lo:hi].max())


def scenario_calibration_offset(scenario: Scenario) -> float:
    """dB offset that makes the scenario's reference reflector read its level.

    Determined from a noise-free run of the reference reflector alone, so it
    is a property of the scenario rather than of any one capture.
    """
    ref = scenario.reference
    if ref is None:
        return 0.0
    position, level = ref
    return level - 10.0 * math.log10(_reference_only_power(scenario, position, level))


def _noise_only_floor_db(scenario: Scenario, sigma: float, n_frames: int, offset: float) -> float:
    probe = make_probe(scenario.probe)
    n = len(probe.waveform)
    fs = scenario.probe.sample_rate
    corr = Correlator(probe.code_waveform, n, scenario.fiber.group_index)
    acc = FingerprintAccumulator()
    rx_cfg = ReceiverConfig(sigma, scenario.receiver.pol_leak)
    for m in range(n_frames):
        cap = detect(np.zeros(n, complex), rx_cfg, stream(scenario.seed, CALIBRATION, m), sample_rate=fs)
        acc.add(corr(_as_capture_dtype(cap)))
    return 10.0 * math.log10(acc.mean_power.mean()) + offset


def measure_noise_floor(scenario: Scenario, sigma: float, n_frames: int = 1) -> float:
    """Mean calibrated floor (dB of the bin-averaged power) of a signal-free run."""
    return _noise_only_floor_db(scenario, sigma, n_frames, scenario_calibration_offset(scenario))


def calibrate_noise_floor(scenario: Scenario, target_floor_db: float) -> float:
    """Receiver noise sigma that puts the calibrated noise floor at ``target_floor_db``.

    One signal-free frame at sigma = 1 fixes the floor; the post-correlation
    floor scales with sigma squared.
    """
    ref = scenario.reference
    if ref is None:
        raise CalibrationError("noise floor calibration needs a reference reflector")
    if target_floor_db >= ref[1]:
        raise CalibrationError(
            f"target floor {target_floor_db} dB is not below the reference level {ref[1]} dB"
        )
    floor1 = measure_noise_floor(scenario, 1.0)
    return 10.0 ** ((target_floor_db - floor1) / 20.0)


class Simulation:
    """Lazily simulated frame sequence for a scenario.

    ``sim[m]`` returns the float32 capture of frame ``m``.
    """

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.probe = make_probe(scenario.probe)
        self.timing: FrameTiming = timing(scenario.probe)
        self.fiber = build_fiber(scenario.fiber, scenario.probe.sample_rate, stream(scenario.seed, FIBER))
        rc = scenario.receiver
        if rc.target_floor_db is not None:
            self.noise_sigma = calibrate_noise_floor(scenario, rc.target_floor_db)
        else:
            self.noise_sigma = rc.noise_sigma or 0.0
        self.receiver = ReceiverConfig(self.noise_sigma, rc.pol_leak)
        self._prop = Propagator(self.probe.waveform, self.fiber.n_taps)

    def __len__(self) -> int:
        return self.scenario.probe.n_frames

    def __getitem__(self, m: int) -> FrameCapture:
        if not 0 <= m < len(self):
            raise IndexError(m)
        sc = self.scenario
        t = m * sc.probe.frame_duration
        h = channel_response(self.fiber, sc.stimuli, sc.laser, t, stream(sc.seed, LASER, m))
        cap = detect(self._prop(h), self.receiver, stream(sc.seed, NOISE, m),
                     sample_rate=sc.probe.sample_rate, frame_index=m, timestamp=t)
        return _as_capture_dtype(cap)

    def __iter__(self):
        for m in range(len(self)):
            yield self[m]


@dataclass(eq=False)
class Processed:
    scenario: Scenario
    fingerprint: Fingerprint
    profiles: list[CorrelationProfile]
    reference_bin: int | None
    timing: FrameTiming
    peaks: an.PeakSet = field(default_factory=an.PeakSet)


def _section_lags(scenario: Scenario, n_lags: int) -> tuple[int, int]:
    sec = scenario.analysis.section_m
    if sec is None:
        return 0, n_lags
    dz = scenario.bin_m
    margin = scenario.probe.samples_per_symbol
    return max(int(math.floor(sec[0] / dz)) - margin, 0), min(int(math.ceil(sec[1] / dz)) + margin + 1, n_lags)


def process(frames: Sequence[FrameCapture], scenario: Scenario, *, threads: int = 1, direct: bool = False) -> Processed:
    """Correlate every frame, average the fingerprint and keep the analysis section.

    ``frames`` is any indexable frame source (a :class:`Simulation` or a
    :class:`~ccotdr.receiver.CaptureFile`).
    """
    probe = make_probe(scenario.probe)
    n = len(probe.waveform)
    corr = Correlator(probe.code_waveform, n, scenario.fiber.group_index, direct=direct)
    k0, k1 = _section_lags(scenario, corr.n_lags)
    acc = FingerprintAccumulator()
    kept = []
    for prof in ordered_map(lambda m: corr(frames[m]), range(len(frames)), threads):
        acc.add(prof)
        kept.append(prof.crop(k0, k1))
    if len(frames) == 0:
        raise ValueError("no frames to process")

    ref = scenario.reference
    if ref is not None and scenario.reference_is_physical:
        fp = acc.result(ReferencePeak(ref[0], ref[1], search_m=max(1.0, 2 * scenario.bin_m)))
    else:
        fp = acc.result(scenario_calibration_offset(scenario))
    ref_bin = None
    if ref is not None:
        sel = np.flatnonzero(np.abs(fp.distance_m - ref[0]) <= max(1.0, 2 * scenario.bin_m))
        if len(sel):
            ref_bin = fp.bin_offset + int(sel[np.argmax(fp.power_db[sel])])

    a = scenario.analysis
    z_range = a.section_m
    peaks = an.find_peaks(fp, a.n_peaks, a.min_separation_m, a.floor_margin_db,
                          reflectors_m=[r.position for r in scenario.fiber.reflectors], z_range=z_range)
    return Processed(scenario, fp, kept, ref_bin, timing(scenario.probe), peaks)


def select_gauge(result: Processed, peak_a: int | None = None, peak_b: int | None = None) -> an.Gauge:
    """Resolve the gauge end points from 1-based peak ranks or the scenario's windows."""
    a = result.scenario.analysis
    peak_a = a.peak_a if peak_a is None else peak_a
    peak_b = a.peak_b if peak_b is None else peak_b
    fp = result.fingerprint
    if peak_a is not None and peak_b is not None:
        n = len(result.peaks)
        for label, i in (("peak_a", peak_a), ("peak_b", peak_b)):
            if not 1 <= i <= n:
                raise an.AnalysisError(f"{label}={i} is not a valid peak index (1..{n})")
        pa, pb = result.peaks[peak_a - 1], result.peaks[peak_b - 1]
    elif a.gauge_windows_m is not None:
        refl = [r.position for r in result.scenario.fiber.reflectors]
        picks = []
        for w in a.gauge_windows_m:
            found = an.find_peaks(fp, 10_000, a.min_separation_m, a.floor_margin_db, reflectors_m=refl, z_range=w)
            picks.append(found.strongest_in(w[0], w[1], a.gauge_kind))
        pa, pb = picks
    else:
        raise an.AnalysisError("no gauge configured: set peak_a/peak_b or analysis.gauge_windows_m")
    return an.Gauge(pa.bin, pb.bin, abs(pb.distance_m - pa.distance_m))


def gauge_series(result: Processed, gauge: an.Gauge) -> an.PhaseSeries:
    pa = an.extract_phase(result.profiles, gauge.bin_a)
    pb = an.extract_phase(result.profiles, gauge.bin_b)
    return an.diff_phase(pa, pb, 1.0 / result.scenario.probe.frame_duration, gauge)


def noise_floor_db(result: Processed) -> float | None:
    """Mean calibrated level past the last echo of the fibre, if the frame leaves room."""
    sc = result.scenario
    start = sc.n_taps + sc.probe.code_samples
    fp = result.fingerprint
    i0 = fp.index(start)
    if i0 >= len(fp.power_db):
        return None
    lin = 10.0 ** (fp.power_db[max(i0, 0):] / 10.0)
    return 10.0 * math.log10(lin.mean())


@dataclass
class Report:
    name: str
    f_max: float
    delta_f: float
    n_frames: int
    noise_sigma: float | None
    attenuation: an.AttenuationFit | None
    noise_floor_db: float | None
    sidelobe_db: float | None
    gauge: an.Gauge | None
    tone: an.Tone | None
    tone_note: str = ""

    def rows(self) -> list[tuple[str, str]]:
        def fmt(v, spec):
            return "n/a" if v is None else format(v, spec)

        if self.tone is not None:
            tones = f"{self.tone.frequency:.1f} Hz (peak SNR {self.tone.peak_snr_db:.1f} dB)"
        else:
            tones = "none"
        if self.tone_note:
            tones += f" [{self.tone_note}]"
        att = self.attenuation
        return [
            ("scenario", self.name),
            ("frames", str(self.n_frames)),
            ("f_max_hz", f"{self.f_max:.2f}"),
            ("delta_f_hz", f"{self.delta_f:.3f}"),
            ("noise_sigma", fmt(self.noise_sigma, ".6g")),
            ("roundtrip_db_per_km", fmt(att and att.roundtrip_db_per_km, ".4f")),
            ("one_way_db_per_km", fmt(att and att.one_way_db_per_km, ".4f")),
            ("noise_floor_db", fmt(self.noise_floor_db, ".2f")),
            ("sidelobe_db", fmt(self.sidelobe_db, ".2f")),
            ("gauge_m", fmt(self.gauge and self.gauge.gauge_length_m, ".3f")),
            ("detected_tones", tones),
        ]

    def text(self) -> str:
        rows = self.rows()
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows) + "\n"


def tone_for(result: Processed, gauge: an.Gauge, window: str | None = None) -> tuple[an.PhaseSpectrum, an.Tone | None, str]:
    """Spectrum and detected tone of a gauge; the tone is None when nothing clears the threshold."""
    a = result.scenario.analysis
    spec = an.spectrum(gauge_series(result, gauge), window or a.window)
    try:
        tone = an.detect_tone(spec, a.exclude_below_hz)
    except an.AnalysisError as e:
        return spec, None, str(e)
    if tone.peak_snr_db < a.min_snr_db:
        return spec, None, f"strongest bin {tone.frequency:.1f} Hz at {tone.peak_snr_db:.1f} dB is below {a.min_snr_db:g} dB"
    return spec, tone, ""


def build_report(result: Processed, noise_sigma: float | None = None, window: str | None = None) -> Report:
    sc = result.scenario
    a = sc.analysis
    refl = [r.position for r in sc.fiber.reflectors]
    att = None
    if a.fit_range_m is not None:
        att = an.fit_attenuation(result.fingerprint, a.fit_range_m, reflectors_m=refl)
    side = None
    if result.reference_bin is not None:
        dz = sc.bin_m
        others = [int(round(z / dz)) for z in refl if abs(int(round(z / dz)) - result.reference_bin) > 1]
        try:
            side = sidelobe_metric(result.fingerprint, result.reference_bin, sc.probe.code_samples,
                                   sc.probe.samples_per_symbol, others)
        except ValueError:
            side = None
    gauge = tone = None
    note = ""
    if (a.peak_a is not None and a.peak_b is not None) or a.gauge_windows_m is not None:
        gauge = select_gauge(result)
        _, tone, note = tone_for(result, gauge, window)
    return Report(
        name=sc.name,
        f_max=result.timing.f_max,
        delta_f=result.timing.delta_f,
        n_frames=result.fingerprint.n_frames_averaged,
        noise_sigma=noise_sigma,
        attenuation=att,
        noise_floor_db=noise_floor_db(result),
        sidelobe_db=side,
        gauge=gauge,
        tone=tone,
        tone_note=note,
    )


def run(scenario: Scenario, *, threads: int = 1) -> tuple[Simulation, Processed]:
    sim = Simulation(scenario)
    return sim, process(sim, scenario, threads=threads)


def report(scenario: Scenario, *, threads: int = 1, window: str | None = None) -> Report:
    sim, result = run(scenario, threads=threads)
    return build_report(result, sim.noise_sigma, window)
