"""Coherent receiver front end and the binary capture file format."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

CHANNELS = ("XI", "XQ", "YI", "YQ")

MAGIC = b"CCOT"
VERSION = 1
# magic, version, sample_rate, n_frames, frame_len, n_channels, 36 reserved bytes
_HEADER = struct.Struct("<4sIdIII36x")
HEADER_SIZE = _HEADER.size


class CaptureFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ReceiverConfig:
    noise_sigma: float = 0.0
    pol_leak: float = 0.0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0.0 <= self.pol_leak <= 1.0:
            raise ValueError("pol_leak must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class FrameCapture:
    channels: np.ndarray  # shape (4, frame_len), rows XI, XQ, YI, YQ
    sample_rate: float
    frame_index: int = 0
    timestamp: float = 0.0

    def __post_init__(self):
        if self.channels.ndim != 2 or self.channels.shape[0] != 4:
            raise ValueError("a capture holds exactly four equal-length channels")

    @property
    def frame_len(self) -> int:
        return self.channels.shape[1]

    @property
    def x(self) -> np.ndarray:
        return self.channels[0] + 1j * self.channels[1]

    @property
    def y(self) -> np.ndarray:
        return self.channels[2] + 1j * self.channels[3]


def detect(
    received: np.ndarray,
    cfg: ReceiverConfig,
    rng: np.random.Generator | None = None,
    *,
    sample_rate: float = 1.0,
    frame_index: int = 0,
    timestamp: float = 0.0,
) -> FrameCapture:
    """Split the field over the two polarisations and digitise four channels.

    The x polarisation receives ``sqrt(1 - pol_leak**2)`` of the field
    amplitude and y receives ``pol_leak``. Each channel gets independent
    Gaussian noise of standard deviation ``noise_sigma``.
    """
    r = np.asarray(received)
    if not np.all(np.isfinite(r)):
        raise ValueError("received waveform is not finite")
    ax = np.sqrt(1.0 - cfg.pol_leak**2)
    ay = cfg.pol_leak
    ch = np.empty((4, len(r)))
    ch[0] = ax * r.real
    ch[1] = ax * r.imag
    ch[2] = ay * r.real
    ch[3] = ay * r.imag
    if cfg.noise_sigma > 0:
        if rng is None:
            raise ValueError("receiver noise needs an rng stream")
        ch += cfg.noise_sigma * rng.standard_normal(ch.shape, dtype=np.float32)
    return FrameCapture(ch, sample_rate, frame_index, timestamp)


def write_header(fh, sample_rate: float, n_frames: int, frame_len: int) -> None:
    fh.write(_HEADER.pack(MAGIC, VERSION, float(sample_rate), n_frames, frame_len, 4))


def write_capture(path, captures: Iterable[FrameCapture], n_frames: int) -> Path:
    """Stream ``n_frames`` captures to ``path``; each frame is stored channel-major as float32."""
    path = Path(path)
    written = 0
    with open(path, "wb") as fh:
        for cap in captures:
            if written == 0:
                write_header(fh, cap.sample_rate, n_frames, cap.frame_len)
                frame_len, sample_rate = cap.frame_len, cap.sample_rate
            elif cap.frame_len != frame_len or cap.sample_rate != sample_rate:
                raise CaptureFormatError("all frames must share length and sample rate")
            fh.write(np.ascontiguousarray(cap.channels, dtype="<f4").tobytes())
            written += 1
    if written != n_frames:
        raise CaptureFormatError(f"expected {n_frames} frames, got {written}")
    return path


class CaptureFile:
    """Read-only, memory-mapped view of a capture file.

    Indexing returns :class:`FrameCapture` objects; ``frame_duration`` only
    feeds the timestamps since the file itself does not store it.
    """

    def __init__(self, path, frame_duration: float | None = None):
        self.path = Path(path)
        with open(self.path, "rb") as fh:
            raw = fh.read(HEADER_SIZE)
        if len(raw) < HEADER_SIZE:
            raise CaptureFormatError("file too short for a capture header")
        magic, version, fs, n_frames, frame_len, n_ch = _HEADER.unpack(raw)
        if magic != MAGIC:
            raise CaptureFormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise CaptureFormatError(f"unsupported capture version {version}")
        if n_ch != 4:
            raise CaptureFormatError(f"expected 4 channels, header says {n_ch}")
        expected = HEADER_SIZE + n_frames * n_ch * frame_len * 4
        actual = self.path.stat().st_size
        if actual != expected:
            raise CaptureFormatError(f"file size {actual} != {expected} implied by header")
        self.sample_rate = fs
        self.n_frames = n_frames
        self.frame_len = frame_len
        self.frame_duration = frame_duration
        self._data = np.memmap(
            self.path, dtype="<f4", mode="r", offset=HEADER_SIZE, shape=(n_frames, 4, frame_len)
        )

    def __len__(self) -> int:
        return self.n_frames

    def __getitem__(self, m: int) -> FrameCapture:
        if not 0 <= m < self.n_frames:
            raise IndexError(m)
        ts = m * self.frame_duration if self.frame_duration else 0.0
        return FrameCapture(np.array(self._data[m]), self.sample_rate, m, ts)

    def __iter__(self):
        for m in range(self.n_frames):
            yield self[m]
