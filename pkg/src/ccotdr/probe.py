"""PRBS probe generation and frame timing.

The probe is a maximal-length LFSR sequence, BPSK mapped to +/-1, extended
by one trailing -1 so the burst is DC balanced. A frame is the burst held at
``samples_per_symbol`` samples per symbol followed by a zero fill.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

# Primitive polynomials, listed by their nonzero exponents (the constant term
# is implied). Each entry has been checked to generate a period 2**n - 1.
PRIMITIVE_TAPS: dict[int, tuple[int, ...]] = {
    2: (2, 1),
    3: (3, 2),
    4: (4, 3),
    5: (5, 3),
    6: (6, 5),
    7: (7, 6),
    8: (8, 6, 5, 4),
    9: (9, 5),
    10: (10, 7),
    11: (11, 9),
    12: (12, 11, 10, 4),
    13: (13, 12, 11, 8),
    14: (14, 13, 12, 2),
    15: (15, 14),
    16: (16, 15, 13, 4),
}


class ProbeError(ValueError):
    """Invalid probe code or frame configuration."""


@dataclass(frozen=True)
class ProbeConfig:
    symbol_rate: float
    frame_duration: float
    samples_per_symbol: int = 1
    prbs_order: int = 13
    prbs_seed: int | None = None  # None means all ones
    n_frames: int = 1
    taps: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.symbol_rate <= 0:
            raise ProbeError("symbol_rate must be positive")
        if int(self.samples_per_symbol) != self.samples_per_symbol or self.samples_per_symbol < 1:
            raise ProbeError("samples_per_symbol must be an integer >= 1")
        if self.n_frames < 1:
            raise ProbeError("n_frames must be >= 1")
        if self.frame_duration < self.code_duration * (1 - 1e-12):
            raise ProbeError(
                f"frame_duration {self.frame_duration:g} s is shorter than the code "
                f"duration {self.code_duration:g} s"
            )

    @property
    def sample_rate(self) -> float:
        return self.symbol_rate * self.samples_per_symbol

    @property
    def code_length(self) -> int:
        return 2**self.prbs_order

    @property
    def code_samples(self) -> int:
        return self.code_length * self.samples_per_symbol

    @property
    def code_duration(self) -> float:
        return self.code_length / self.symbol_rate

    @property
    def frame_samples(self) -> int:
        return sample_count(self.frame_duration, self.sample_rate)


@dataclass(frozen=True)
class FrameTiming:
    frame_duration: float
    f_max: float
    delta_f: float
    sample_rate: float


@dataclass(frozen=True)
class ProbeFrame:
    code: np.ndarray
    waveform: np.ndarray
    timing: FrameTiming
    samples_per_symbol: int = field(default=1)

    @property
    def code_waveform(self) -> np.ndarray:
        """The burst part of the frame, used as the correlation reference."""
        return self.waveform[: len(self.code) * self.samples_per_symbol]


def sample_count(duration: float, sample_rate: float) -> int:
    """Number of samples in ``duration``; raises if it is not an integer."""
    exact = duration * sample_rate
    n = int(round(exact))
    if abs(exact - n) > 1e-6 * max(1.0, abs(exact)) or n < 1:
        raise ProbeError("frame duration not sample-aligned")
    return n


@lru_cache(maxsize=32)
def _lfsr_bits(order: int, seed: int, taps: tuple[int, ...]) -> tuple[int, ...]:
    mask = (1 << order) - 1
    period = mask
    # recurrence a[t+n] = XOR of a[t+k] over the polynomial's lower exponents
    lower = [k for k in taps if k != order] + [0]
    if max(lower) >= order:
        raise ProbeError(f"tap exponents must be below the order {order}")
    state = seed
    bits = []
    for t in range(period):
        bits.append(state & 1)
        fb = 0
        for k in lower:
            fb ^= (state >> k) & 1
        state = (state >> 1) | (fb << (order - 1))
        if state == seed and t + 1 < period:
            raise ProbeError(
                f"taps {taps} are not maximal-length: period {t + 1} < {period}"
            )
    if state != seed:
        raise ProbeError(f"taps {taps} are not maximal-length: state does not recur")
    return tuple(bits)


def m_sequence(order: int, seed: int | None = None, taps=None) -> np.ndarray:
    """One period of the LFSR output as 0/1 integers (length ``2**order - 1``)."""
    if order < 2:
        raise ProbeError("order must be >= 2")
    if taps is None:
        if order not in PRIMITIVE_TAPS:
            raise ProbeError(f"no default taps for order {order}")
        taps = PRIMITIVE_TAPS[order]
    taps = tuple(sorted({int(k) for k in taps} | {order}, reverse=True))
    if seed is None:
        seed = (1 << order) - 1
    seed = int(seed) & ((1 << order) - 1)
    if seed == 0:
        raise ProbeError("degenerate LFSR state")
    return np.array(_lfsr_bits(order, seed, taps), dtype=np.int8)


def generate_code(order: int = 13, seed: int | None = None, taps=None) -> np.ndarray:
    """Balanced BPSK probe code of length ``2**order``.

    The m-sequence bits are mapped 1 -> +1 and 0 -> -1 and a single -1 is
    appended. An m-sequence has one more 1 than 0, so the result sums to zero.

    Parameters
    ----------
    order : int
        LFSR register length.
    seed : int, optional
        Initial register contents, bit ``i`` is ``a[i]``. Defaults to all ones.
    taps : iterable of int, optional
        Exponents of the feedback polynomial, e.g. ``(13, 12, 11, 8)`` for
        x^13 + x^12 + x^11 + x^8 + 1.
    """
    bits = m_sequence(order, seed, taps)
    symbols = 2.0 * bits.astype(np.float64) - 1.0
    return np.append(symbols, -1.0)


def build_frame(code: np.ndarray, cfg: ProbeConfig) -> ProbeFrame:
    code = np.asarray(code, dtype=np.float64)
    sps = int(cfg.samples_per_symbol)
    n = sample_count(cfg.frame_duration, cfg.sample_rate)
    n_code = len(code) * sps
    if n_code > n:
        raise ProbeError("frame_duration shorter than code duration")
    waveform = np.zeros(n)
    waveform[:n_code] = np.repeat(code, sps)
    return ProbeFrame(code=code, waveform=waveform, timing=timing(cfg), samples_per_symbol=sps)


def timing(cfg: ProbeConfig) -> FrameTiming:
    """Slow-time sampling limits set by the frame repetition rate."""
    return FrameTiming(
        frame_duration=cfg.frame_duration,
        f_max=1.0 / (2.0 * cfg.frame_duration),
        delta_f=1.0 / (cfg.n_frames * cfg.frame_duration),
        sample_rate=cfg.sample_rate,
    )


def make_probe(cfg: ProbeConfig) -> ProbeFrame:
    return build_frame(generate_code(cfg.prbs_order, cfg.prbs_seed, cfg.taps), cfg)
