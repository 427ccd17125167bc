"""Discrete fibre model and per-frame channel synthesis.

The fibre is sampled at the receiver's spatial resolution: tap ``i`` sits at
``z_i = i * c / (2 n_g f_s)`` so a tap is exactly one sample of round-trip
delay. Taps carry Rayleigh scatter (circular Gaussian) plus point reflectors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import fft

from .dsp import direct_convolve, fft_convolve

C = 299_792_458.0


class ChannelError(ValueError):
    pass


@dataclass(frozen=True)
class Reflector:
    position: float  # m
    reflectance_db: float  # power, <= 0


@dataclass(frozen=True)
class FiberConfig:
    length: float
    attenuation: float = 0.19  # dB/km one way
    group_index: float = 1.468
    rayleigh_coeff: float | None = -82.0  # dB/m, None disables scatter
    reflectors: tuple[Reflector, ...] = ()


@dataclass(frozen=True)
class AcousticStimulus:
    """Sinusoidal one-way phase imposed over ``span``.

    The phase grows linearly across the span and stays at ``amplitude`` for
    every point beyond it.
    """

    span: tuple[float, float]
    frequency: float
    amplitude: float
    phase_offset: float = 0.0

    def __post_init__(self):
        z0, z1 = self.span
        if not z0 < z1:
            raise ChannelError("stimulus span must satisfy z0 < z1")
        if self.amplitude < 0 or self.frequency < 0:
            raise ChannelError("stimulus amplitude and frequency must be >= 0")

    def ramp(self, z: np.ndarray) -> np.ndarray:
        z0, z1 = self.span
        return np.clip((z - z0) / (z1 - z0), 0.0, 1.0)

    def phase(self, z: np.ndarray, t: float) -> np.ndarray:
        return self.amplitude * self.ramp(z) * np.sin(2 * np.pi * self.frequency * t + self.phase_offset)


@dataclass(frozen=True)
class LaserModel:
    linewidth: float = 100.0  # Hz, Lorentzian
    enabled: bool = True

    def __post_init__(self):
        if self.linewidth < 0:
            raise ChannelError("laser linewidth must be >= 0")

    @property
    def active(self) -> bool:
        return self.enabled and self.linewidth > 0


@dataclass(frozen=True, eq=False)
class FiberModel:
    length: float
    group_index: float
    attenuation: float
    sample_rate: float
    scatter: np.ndarray
    taps: np.ndarray
    reflectors: tuple[Reflector, ...] = ()
    rayleigh_coeff: float | None = None
    reflector_taps: tuple[int, ...] = field(default=())

    @property
    def tap_spacing(self) -> float:
        return tap_spacing(self.sample_rate, self.group_index)

    @property
    def n_taps(self) -> int:
        return len(self.taps)

    @property
    def distance(self) -> np.ndarray:
        return np.arange(self.n_taps) * self.tap_spacing

    @property
    def roundtrip_amplitude(self) -> np.ndarray:
        """Field amplitude factor for the out-and-back path to each tap."""
        return 10.0 ** (-self.attenuation * self.distance / 1e3 / 10.0)

    @property
    def roundtrip_time(self) -> float:
        return 2.0 * self.group_index * self.length / C


def tap_spacing(sample_rate: float, group_index: float) -> float:
    return C / (2.0 * group_index * sample_rate)


def build_fiber(cfg: FiberConfig, sample_rate: float, seed: int | np.random.Generator) -> FiberModel:
    """Draw the static tap array for one fibre realisation.

    Taps cover ``[0, length]`` inclusive so a reflector at the far end has a
    tap. Scatter taps have ``E|tap|^2 = 10^(rayleigh_coeff/10) * tap_spacing``
    and reflectors add ``sqrt(10^(R/10))`` with zero phase at the nearest tap.
    """
    if cfg.length < 0:
        raise ChannelError("fiber length must be >= 0")
    dz = tap_spacing(sample_rate, cfg.group_index)
    n = int(round(cfg.length / dz)) + 1
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    if cfg.rayleigh_coeff is None:
        scatter = np.zeros(n, dtype=np.complex128)
    else:
        power = 10.0 ** (cfg.rayleigh_coeff / 10.0) * dz
        scatter = np.sqrt(power / 2.0) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))

    taps = scatter.copy()
    idx = []
    for r in cfg.reflectors:
        if not 0.0 <= r.position <= cfg.length:
            raise ChannelError(f"reflector at {r.position} m lies outside [0, {cfg.length}] m")
        if r.reflectance_db > 0:
            raise ChannelError("reflectance must be <= 0 dB")
        k = int(round(r.position / dz))
        taps[k] += np.sqrt(10.0 ** (r.reflectance_db / 10.0))
        idx.append(k)

    positions = sorted(r.position for r in cfg.reflectors)
    if len(positions) > 1 and min(np.diff(positions)) < dz:
        warnings.warn("reflectors unresolvable", stacklevel=2)

    return FiberModel(
        length=cfg.length,
        group_index=cfg.group_index,
        attenuation=cfg.attenuation,
        sample_rate=sample_rate,
        scatter=scatter,
        taps=taps,
        reflectors=tuple(cfg.reflectors),
        rayleigh_coeff=cfg.rayleigh_coeff,
        reflector_taps=tuple(idx),
    )


def laser_phase(n_taps: int, linewidth: float, sample_rate: float, rng: np.random.Generator) -> np.ndarray:
    """Wiener phase along the delay axis, ``var(theta_i) = 2 pi linewidth tau_i``."""
    step = np.sqrt(2.0 * np.pi * linewidth / sample_rate)
    theta = np.empty(n_taps)
    theta[0] = 0.0
    np.cumsum(step * rng.standard_normal(n_taps - 1), out=theta[1:])
    return theta


def channel_response(
    fiber: FiberModel,
    stimuli: Sequence[AcousticStimulus] = (),
    laser: LaserModel | None = None,
    t: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Complex tap vector seen by the frame launched at time ``t``."""
    if t < 0:
        raise ChannelError("t must be >= 0")
    h = fiber.taps * fiber.roundtrip_amplitude
    if stimuli:
        z = fiber.distance
        phi = np.zeros(fiber.n_taps)
        for s in stimuli:
            phi += s.phase(z, t)
        h = h * np.exp(2j * phi)
    if laser is not None and laser.active:
        if rng is None:
            raise ChannelError("laser phase noise needs an rng stream")
        h = h * np.exp(1j * laser_phase(fiber.n_taps, laser.linewidth, fiber.sample_rate, rng))
    return h


def propagate(waveform: np.ndarray, h: np.ndarray, direct: bool = False) -> np.ndarray:
    """Received field ``r[n] = sum_i h[i] s[n - i]``, truncated to the frame."""
    n = len(waveform)
    if len(h) > n:
        raise ChannelError("round-trip exceeds frame")
    if direct:
        return direct_convolve(waveform, h, n)
    return fft_convolve(waveform, h, n)


class Propagator:
    """``propagate`` with the probe spectrum cached for repeated frames."""

    def __init__(self, waveform: np.ndarray, n_taps: int):
        self.n = len(waveform)
        if n_taps > self.n:
            raise ChannelError("round-trip exceeds frame")
        self.n_taps = n_taps
        self.nfft = fft.next_fast_len(self.n + n_taps - 1)
        self._spec = fft.fft(waveform, self.nfft)

    def __call__(self, h: np.ndarray) -> np.ndarray:
        if len(h) != self.n_taps:
            raise ChannelError("tap vector length changed")
        return fft.ifft(self._spec * fft.fft(h, self.nfft))[: self.n]
