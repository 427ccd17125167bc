"""FFT convolution and correlation with direct-sum reference versions."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft


def fft_convolve(s: np.ndarray, h: np.ndarray, n_out: int | None = None) -> np.ndarray:
    """Linear convolution ``sum_i h[i] s[n - i]`` truncated to ``n_out`` samples."""
    full = len(s) + len(h) - 1
    n_out = full if n_out is None else n_out
    nfft = fft.next_fast_len(full)
    out = fft.ifft(fft.fft(s, nfft) * fft.fft(h, nfft))[:n_out]
    return out if np.iscomplexobj(s) or np.iscomplexobj(h) else out.real


def direct_convolve(s: np.ndarray, h: np.ndarray, n_out: int | None = None) -> np.ndarray:
    full = len(s) + len(h) - 1
    n_out = full if n_out is None else n_out
    dtype = np.result_type(s, h, np.float64)
    out = np.zeros(max(n_out, full), dtype=dtype)
    for i, hi in enumerate(h):
        if hi != 0:
            out[i : i + len(s)] += hi * s
    return out[:n_out]


def fft_correlate_valid(x: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """``c[k] = sum_n x[n + k] ref[n]`` for ``k = 0 .. len(x) - len(ref)``."""
    n_lags = len(x) - len(ref) + 1
    if n_lags < 1:
        raise ValueError("reference longer than signal")
    nfft = fft.next_fast_len(len(x))
    out = fft.ifft(fft.fft(x, nfft) * np.conj(fft.fft(ref, nfft)))[:n_lags]
    return out if np.iscomplexobj(x) else out.real


def direct_correlate_valid(x: np.ndarray, ref: np.ndarray) -> np.ndarray:
    if len(ref) > len(x):
        raise ValueError("reference longer than signal")
    return sliding_window_view(x, len(ref)) @ ref


class ValidCorrelator:
    """Correlates many equal-length records against one fixed real reference.

    The reference spectrum is computed once; each call costs one forward and
    one inverse FFT.
    """

    def __init__(self, ref: np.ndarray, n: int):
        self.ref = np.asarray(ref, dtype=np.float64)
        self.n = n
        self.n_lags = n - len(self.ref) + 1
        if self.n_lags < 1:
            raise ValueError("reference longer than signal")
        self.nfft = fft.next_fast_len(n)
        self._ref_spec = np.conj(fft.fft(self.ref, self.nfft))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if len(x) != self.n:
            raise ValueError(f"record length {len(x)} != {self.n}")
        return fft.ifft(fft.fft(x, self.nfft) * self._ref_spec)[: self.n_lags]
