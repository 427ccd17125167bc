import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccotdr.receiver import (
    HEADER_SIZE,
    CaptureFile,
    CaptureFormatError,
    FrameCapture,
    ReceiverConfig,
    detect,
    write_capture,
)


def _field(n=256, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def test_noise_free_x_only():
    r = _field()
    cap = detect(r, ReceiverConfig(0.0, 0.0))
    assert np.array_equal(cap.x, r)
    assert np.all(cap.y == 0)


def test_full_leak_moves_everything_to_y():
    r = _field()
    cap = detect(r, ReceiverConfig(0.0, 1.0))
    assert np.allclose(cap.x, 0, atol=1e-15)
    assert np.allclose(cap.y, r)


@settings(max_examples=25, deadline=None)
@given(leak=st.floats(0.0, 1.0))
def test_power_split_conserves_power(leak):
    r = _field(64)
    cap = detect(r, ReceiverConfig(0.0, leak))
    assert np.allclose(np.abs(cap.x) ** 2 + np.abs(cap.y) ** 2, np.abs(r) ** 2)


def test_noise_variance():
    cap = detect(np.zeros(50_000, complex), ReceiverConfig(0.3), np.random.default_rng(2))
    var = cap.channels.var(axis=1)
    assert var == pytest.approx(np.full(4, 0.09), rel=0.05)
    # independent channels
    assert abs(np.corrcoef(cap.channels)[0, 1]) < 0.02


def test_noise_needs_rng():
    with pytest.raises(ValueError):
        detect(np.zeros(4, complex), ReceiverConfig(0.1))


def test_non_finite_field_rejected():
    with pytest.raises(ValueError):
        detect(np.array([1.0, np.nan]), ReceiverConfig())


def test_capture_round_trip(tmp_path):
    caps = [
        FrameCapture(np.random.default_rng(m).standard_normal((4, 100)).astype(np.float32), 1e8, m, m * 1e-6)
        for m in range(3)
    ]
    path = write_capture(tmp_path / "c.bin", iter(caps), 3)
    raw = path.read_bytes()
    assert len(raw) == HEADER_SIZE + 3 * 4 * 100 * 4
    magic, version, fs, n, flen, nch = struct.unpack("<4sIdIII", raw[:28])
    assert (magic, version, fs, n, flen, nch) == (b"CCOT", 1, 1e8, 3, 100, 4)
    f = CaptureFile(path, frame_duration=1e-6)
    assert len(f) == 3 and f.sample_rate == 1e8 and f.frame_len == 100
    for m, c in enumerate(f):
        assert np.array_equal(c.channels, caps[m].channels)
        assert c.frame_index == m and c.timestamp == pytest.approx(m * 1e-6)


def test_capture_bad_magic(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"XXXX" + bytes(60))
    with pytest.raises(CaptureFormatError, match="magic"):
        CaptureFile(p)


def test_capture_truncated(tmp_path):
    cap = FrameCapture(np.zeros((4, 10), np.float32), 1e6, 0, 0.0)
    p = write_capture(tmp_path / "c.bin", [cap, cap], 2)
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(CaptureFormatError, match="file size"):
        CaptureFile(p)
    p.write_bytes(b"CCOT")
    with pytest.raises(CaptureFormatError, match="too short"):
        CaptureFile(p)


def test_capture_frame_count_mismatch(tmp_path):
    cap = FrameCapture(np.zeros((4, 10), np.float32), 1e6, 0, 0.0)
    with pytest.raises(CaptureFormatError):
        write_capture(tmp_path / "c.bin", [cap], 2)
