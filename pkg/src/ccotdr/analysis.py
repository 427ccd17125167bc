"""Fingerprint and phase analysis: peaks, attenuation, gauges and spectra."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import signal

from .correlator import CorrelationProfile, Fingerprint


class AnalysisError(RuntimeError):
    pass


@dataclass(frozen=True)
class Peak:
    bin: int
    distance_m: float
    power_db: float
    kind: str  # "reflector" or "rayleigh"


@dataclass(frozen=True)
class PeakSet:
    peaks: tuple[Peak, ...] = ()

    def __len__(self) -> int:
        return len(self.peaks)

    def __getitem__(self, i: int) -> Peak:
        return self.peaks[i]

    def __iter__(self):
        return iter(self.peaks)

    def of_kind(self, kind: str) -> "PeakSet":
        return PeakSet(tuple(p for p in self.peaks if p.kind == kind))

    def strongest_in(self, z0: float, z1: float, kind: str | None = None) -> Peak:
        for p in self.peaks:
            if z0 <= p.distance_m <= z1 and (kind is None or p.kind == kind):
                return p
        what = f"{kind} peak" if kind else "peak"
        raise AnalysisError(f"no {what} between {z0} m and {z1} m")


@dataclass(frozen=True)
class AttenuationFit:
    roundtrip_db_per_km: float
    one_way_db_per_km: float


@dataclass(frozen=True)
class Gauge:
    bin_a: int
    bin_b: int
    gauge_length_m: float


@dataclass(frozen=True, eq=False)
class PhaseSeries:
    values: np.ndarray
    frame_rate: float
    gauge: Gauge | None = None

    @property
    def delta_f(self) -> float:
        return self.frame_rate / len(self.values)


@dataclass(frozen=True, eq=False)
class PhaseSpectrum:
    freqs: np.ndarray
    magnitude: np.ndarray
    window: str
    normalized: bool = True

    @property
    def delta_f(self) -> float:
        return float(self.freqs[1] - self.freqs[0])


@dataclass(frozen=True)
class Tone:
    frequency: float
    peak_snr_db: float


def _range_mask(fp: Fingerprint, z_range) -> np.ndarray:
    if z_range is None:
        return np.ones(len(fp.power_db), dtype=bool)
    z0, z1 = z_range
    return (fp.distance_m >= z0) & (fp.distance_m <= z1)


def find_peaks(
    fp: Fingerprint,
    n: int = 8,
    min_separation_m: float = 0.5,
    floor_margin_db: float = 3.0,
    *,
    reflectors_m: Iterable[float] = (),
    z_range: tuple[float, float] | None = None,
) -> PeakSet:
    """Up to ``n`` strongest local maxima, at least ``min_separation_m`` apart.

    Only maxima higher than the median level of the searched range plus
    ``floor_margin_db`` qualify. Selection is greedy by height. A peak within
    one bin of a configured reflector position is tagged ``reflector``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    inside = np.flatnonzero(_range_mask(fp, z_range))
    if len(inside) == 0:
        return PeakSet()
    floor = float(np.median(fp.power_db[inside]))
    # one bin of context either side so a maximum on the range edge still counts
    lo, hi = max(inside[0] - 1, 0), min(inside[-1] + 2, len(fp.power_db))
    idx = np.arange(lo, hi)
    p = fp.power_db[idx]
    dz = fp.bin_spacing_m
    distance = max(1, math.ceil(min_separation_m / dz - 1e-9))
    loc, props = signal.find_peaks(p, height=floor + floor_margin_db)
    keep = (idx[loc] >= inside[0]) & (idx[loc] <= inside[-1])
    loc, heights = idx[loc[keep]], props["peak_heights"][keep]
    chosen: list[int] = []
    for j in np.argsort(-heights, kind="stable"):
        if all(abs(loc[j] - c) >= distance for c in chosen):
            chosen.append(int(loc[j]))
            if len(chosen) == n:
                break
    refl_bins = [int(round(z / dz)) for z in reflectors_m]
    peaks = []
    for i in chosen:
        k = fp.bin_offset + int(i)
        kind = "reflector" if any(abs(k - rb) <= 1 for rb in refl_bins) else "rayleigh"
        peaks.append(Peak(k, float(fp.distance_m[i]), float(fp.power_db[i]), kind))
    return PeakSet(tuple(peaks))


def fit_attenuation(
    fp: Fingerprint,
    z_range: tuple[float, float],
    *,
    reflectors_m: Iterable[float] = (),
    block_m: float = 10.0,
) -> AttenuationFit:
    """Slope of the block-maximum envelope of the trace over ``z_range``.

    The trace is cut into ``block_m`` blocks; each contributes its maximum at
    the distance where it occurs. A least-squares line through those points
    gives the round-trip loss in dB/km.
    """
    z0, z1 = z_range
    if z1 - z0 < 1000.0:
        raise AnalysisError("fit range must span at least 1 km")
    if any(z0 <= z <= z1 for z in reflectors_m):
        raise AnalysisError("contaminated fit range")
    idx = np.flatnonzero(_range_mask(fp, z_range))
    nb = max(1, int(round(block_m / fp.bin_spacing_m)))
    n_blocks = len(idx) // nb
    if n_blocks < 2:
        raise AnalysisError("fit range holds fewer than two envelope blocks")
    blocks = fp.power_db[idx[: n_blocks * nb]].reshape(n_blocks, nb)
    arg = blocks.argmax(axis=1)
    env_db = blocks[np.arange(n_blocks), arg]
    env_km = fp.distance_m[idx[: n_blocks * nb]].reshape(n_blocks, nb)[np.arange(n_blocks), arg] / 1e3
    slope = np.polyfit(env_km, env_db, 1)[0]
    return AttenuationFit(float(-slope), float(-slope / 2.0))


def extract_phase(profiles: Sequence[CorrelationProfile], bin: int) -> np.ndarray:
    """Per-frame optical phase at absolute lag ``bin``, in (-pi, pi].

    Uses whichever polarisation carries more mean power at that lag.
    """
    if not profiles:
        raise ValueError("no profiles")
    vx = np.array([p.rx[bin - p.lag_offset] for p in profiles])
    vy = np.array([p.ry[bin - p.lag_offset] for p in profiles])
    v = vy if np.mean(np.abs(vy) ** 2) > np.mean(np.abs(vx) ** 2) else vx
    return np.angle(v)


def diff_phase(a: np.ndarray, b: np.ndarray, frame_rate: float = 1.0, gauge: Gauge | None = None) -> PhaseSeries:
    """Unwrapped, mean-removed phase of ``b`` relative to ``a``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("phase series must have equal length")
    d = np.unwrap(np.angle(np.exp(1j * (b - a))))
    return PhaseSeries(d - d.mean(), frame_rate, gauge)


def spectrum(series: PhaseSeries, window: str = "hann") -> PhaseSpectrum:
    """Windowed FFT magnitude over bins ``1 .. N/2``, scaled to unit maximum.

    An all-zero series is returned unnormalised (``normalized=False``).
    """
    x = np.asarray(series.values, dtype=np.float64)
    n = len(x)
    if n < 8:
        raise ValueError("need at least 8 frames for a spectrum")
    w = np.ones(n) if window in ("rect", "rectangular", "boxcar") else signal.get_window(window, n)
    mag = np.abs(np.fft.rfft(w * x))[1 : n // 2 + 1]
    freqs = np.arange(1, n // 2 + 1) * series.frame_rate / n
    peak = mag.max()
    if peak > 0:
        return PhaseSpectrum(freqs, mag / peak, window, True)
    return PhaseSpectrum(freqs, mag, window, False)


def detect_tone(spec: PhaseSpectrum, exclude_below_hz: float | None = None) -> Tone:
    """Strongest bin at or above ``exclude_below_hz`` (default two bins).

    ``peak_snr_db`` compares the peak power with the median power of the
    other candidate bins.
    """
    if not spec.normalized:
        raise AnalysisError("spectrum is degenerate (no phase variation)")
    if exclude_below_hz is None:
        exclude_below_hz = 2.0 * spec.delta_f
    keep = np.flatnonzero(spec.freqs >= exclude_below_hz - 1e-9 * spec.delta_f)
    if len(keep) == 0:
        raise AnalysisError("all spectral bins fall below the exclusion frequency")
    power = spec.magnitude[keep] ** 2
    j = int(np.argmax(power))
    rest = np.delete(power, j)
    med = float(np.median(rest)) if len(rest) else 0.0
    snr = math.inf if med == 0 else 10.0 * math.log10(power[j] / med)
    return Tone(float(spec.freqs[keep[j]]), snr)


def write_spectrum_csv(spec: PhaseSpectrum, path) -> None:
    np.savetxt(
        path,
        np.column_stack([spec.freqs, spec.magnitude]),
        fmt=("%.6f", "%.8f"),
        delimiter=",",
        header="freq_hz,norm_magnitude",
        comments="",
    )


def write_peaks_csv(peaks: PeakSet, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("bin,distance_m,power_db,kind\n")
        for p in peaks:
            fh.write(f"{p.bin},{p.distance_m:.4f},{p.power_db:.6f},{p.kind}\n")
