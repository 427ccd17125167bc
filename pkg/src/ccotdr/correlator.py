"""Pulse compression of captured frames and the averaged fingerprint."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .channel import tap_spacing
from .dsp import ValidCorrelator, direct_correlate_valid
from .receiver import FrameCapture

# Minimum height of the calibration peak above the median trace level.
REFERENCE_MARGIN_DB = 15.0


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class CorrelationProfile:
    rx: np.ndarray
    ry: np.ndarray
    frame_index: int
    sample_rate: float
    group_index: float
    lag_offset: int = 0

    def __len__(self) -> int:
        return len(self.rx)

    @property
    def distance(self) -> np.ndarray:
        return (self.lag_offset + np.arange(len(self.rx))) * tap_spacing(self.sample_rate, self.group_index)

    def crop(self, k0: int, k1: int) -> "CorrelationProfile":
        """Keep absolute lags ``k0 <= k < k1``."""
        a = max(k0 - self.lag_offset, 0)
        b = min(k1 - self.lag_offset, len(self.rx))
        return CorrelationProfile(
            self.rx[a:b].copy(), self.ry[a:b].copy(), self.frame_index,
            self.sample_rate, self.group_index, self.lag_offset + a,
        )


@dataclass(frozen=True, eq=False)
class Fingerprint:
    power_db: np.ndarray
    distance_m: np.ndarray
    calibration_offset_db: float
    n_frames_averaged: int
    bin_offset: int = 0

    @property
    def bin_spacing_m(self) -> float:
        return float(self.distance_m[1] - self.distance_m[0]) if len(self.distance_m) > 1 else np.nan

    def index(self, k: int) -> int:
        return k - self.bin_offset

    def bin_at(self, z: float) -> int:
        """Absolute lag nearest to distance ``z``."""
        return int(round(z / self.bin_spacing_m))


@dataclass(frozen=True)
class ReferencePeak:
    """A fingerprint feature that defines the dB scale.

    The strongest bin within ``search_m`` of ``distance_m`` is shifted to read
    ``level_db``.
    """

    distance_m: float
    level_db: float = -55.0
    search_m: float = 1.0


class Correlator:
    """Correlates captures against the transmitted code waveform."""

    def __init__(self, reference: np.ndarray, frame_len: int, group_index: float = 1.468, direct: bool = False):
        self.reference = np.asarray(reference, dtype=np.float64)
        if len(self.reference) > frame_len:
            raise ValueError("reference longer than the frame")
        self.frame_len = frame_len
        self.group_index = group_index
        self.direct = direct
        self.n_lags = frame_len - len(self.reference) + 1
        self._fast = None if direct else ValidCorrelator(self.reference, frame_len)

    def _corr(self, x: np.ndarray) -> np.ndarray:
        if self.direct:
            return direct_correlate_valid(x, self.reference)
        return self._fast(x)

    def __call__(self, capture: FrameCapture) -> CorrelationProfile:
        if capture.frame_len != self.frame_len:
            raise ValueError(f"capture length {capture.frame_len} != {self.frame_len}")
        ch = capture.channels.astype(np.float64, copy=False)
        rx = self._corr(ch[0] + 1j * ch[1])
        ry = self._corr(ch[2] + 1j * ch[3])
        return CorrelationProfile(rx, ry, capture.frame_index, capture.sample_rate, self.group_index)


def correlate_frame(
    capture: FrameCapture, reference: np.ndarray, *, group_index: float = 1.468, direct: bool = False
) -> CorrelationProfile:
    """Valid-lag cross-correlation ``rx[k] = sum_n (XI + jXQ)[n + k] s[n]`` and likewise for y."""
    return Correlator(reference, capture.frame_len, group_index, direct)(capture)


def power_trace(profile: CorrelationProfile) -> np.ndarray:
    """Squared correlation magnitude summed over both polarisations."""
    rx, ry = profile.rx, profile.ry
    return rx.real**2 + rx.imag**2 + ry.real**2 + ry.imag**2


class FingerprintAccumulator:
    """Running frame average of the power trace; frames are summed in arrival order."""

    def __init__(self):
        self.total = None
        self.count = 0
        self._meta = None

    def add(self, profile: CorrelationProfile) -> None:
        p = power_trace(profile)
        if self.total is None:
            self.total = p.copy()
            self._meta = (profile.sample_rate, profile.group_index, profile.lag_offset)
        else:
            if len(p) != len(self.total):
                raise ValueError("profiles must all have the same length")
            self.total += p
        self.count += 1

    @property
    def mean_power(self) -> np.ndarray:
        if not self.count:
            raise ValueError("no profiles accumulated")
        return self.total / self.count

    def result(self, calibration: ReferencePeak | float = 0.0) -> Fingerprint:
        p = self.mean_power
        fs, ng, offset = self._meta
        dz = tap_spacing(fs, ng)
        distance = (offset + np.arange(len(p))) * dz
        raw_db = 10.0 * np.log10(np.maximum(p, np.finfo(float).tiny))
        if isinstance(calibration, ReferencePeak):
            cal = calibration_offset(raw_db, distance, calibration)
        else:
            cal = float(calibration)
        return Fingerprint(raw_db + cal, distance, cal, self.count, offset)


def calibration_offset(raw_db: np.ndarray, distance: np.ndarray, ref: ReferencePeak) -> float:
    sel = np.flatnonzero(np.abs(distance - ref.distance_m) <= ref.search_m)
    if len(sel) == 0:
        raise CalibrationError(f"reference at {ref.distance_m} m is outside the trace")
    k = sel[np.argmax(raw_db[sel])]
    floor = np.median(raw_db)
    if raw_db[k] < floor + REFERENCE_MARGIN_DB:
        raise CalibrationError(
            f"reference peak near {ref.distance_m} m not found above the floor "
            f"({raw_db[k] - floor:.1f} dB above median)"
        )
    return ref.level_db - float(raw_db[k])


def fingerprint(profiles: Iterable[CorrelationProfile], calibration: ReferencePeak | float = 0.0) -> Fingerprint:
    """Frame-averaged power trace in dB, shifted so the reference reads its level.

    ``calibration`` is either a :class:`ReferencePeak` located in this trace
    or a fixed dB offset determined elsewhere.
    """
    acc = FingerprintAccumulator()
    for p in profiles:
        acc.add(p)
    return acc.result(calibration)


def sidelobe_metric(
    fp: Fingerprint,
    mainlobe_k: int,
    code_samples: int,
    samples_per_symbol: int = 1,
    other_peaks: Iterable[int] = (),
) -> float:
    """Mainlobe-to-strongest-sidelobe ratio in dB.

    The sidelobe region is every lag within one code length of the mainlobe,
    outside the mainlobe triangle, and farther than one code length from each
    of ``other_peaks``. Lags are absolute.
    """
    lags = fp.bin_offset + np.arange(len(fp.power_db))
    d = np.abs(lags - mainlobe_k)
    region = (d >= samples_per_symbol) & (d < code_samples)
    for k in other_peaks:
        region &= np.abs(lags - k) > code_samples
    if not region.any():
        raise ValueError("sidelobe region is empty")
    return float(fp.power_db[fp.index(mainlobe_k)] - fp.power_db[region].max())


def write_fingerprint_csv(fp: Fingerprint, path) -> None:
    np.savetxt(
        path,
        np.column_stack([fp.distance_m, fp.power_db]),
        fmt=("%.4f", "%.6f"),
        delimiter=",",
        header="distance_m,power_db",
        comments="",
    )
