"""IIR filter design and zero-phase filtering for the analysis filter bank.

Filters are 4th-order Butterworth cascades expressed as second-order
sections (numerically stable at low normalized corner frequencies).
Zero-phase filtering runs the cascade forward and backward over a
zero-padded copy of the signal with zero initial conditions, so the
result has no group delay and edge transients decay inside the padding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal as _signal

from .errors import ConfigError, NumericalError

# Analysis bands in canonical order (Hz).
BANDS: dict[str, tuple[float, float]] = {
    "delta": (0.5, 4.0),
    "theta": (4.0, 8.0),
    "alpha": (8.0, 13.0),
    "beta": (13.0, 30.0),
    "gamma": (30.0, 40.0),
}
BAND_ORDER: tuple[str, ...] = tuple(BANDS)

# Broadband pre-filter applied to every trial before any feature extraction.
PREPROC_BAND: tuple[float, float] = (0.5, 40.0)

# Lowpass corner for slow movement-related potentials.
MRCP_LOWPASS_HZ = 6.0

DEFAULT_ORDER = 4


@dataclass(frozen=True)
class IirFilter:
    """A cascade of second-order sections.

    Parameters
    ----------
    sos : ndarray, shape (n_sections, 6)
        Sections as ``[b0, b1, b2, 1, a1, a2]`` rows.
    sample_rate : float
        Sampling rate the design targets, Hz.
    label : str
        Human-readable description, e.g. ``"bandpass 4.0-8.0 Hz"``.
    """

    sos: np.ndarray
    sample_rate: float
    label: str = ""

    def __post_init__(self):
        sos = np.asarray(self.sos, dtype=np.float64)
        object.__setattr__(self, "sos", sos)
        if sos.ndim != 2 or sos.shape[1] != 6:
            raise ConfigError(f"sos must be (n_sections, 6), got {sos.shape}")
        if not np.allclose(sos[:, 3], 1.0):
            raise ConfigError("sections must be normalized (a0 == 1)")
        for a1, a2 in sos[:, 4:6]:
            # stability: both poles of z^2 + a1 z + a2 inside the unit circle
            poles = np.roots([1.0, a1, a2])
            if np.any(np.abs(poles) >= 1.0):
                raise NumericalError("unstable filter section")

    @property
    def order(self) -> int:
        return 2 * self.sos.shape[0]

    def response(self, freqs_hz) -> np.ndarray:
        """Complex frequency response H(e^{j 2 pi f / fs}) at the given frequencies."""
        f = np.atleast_1d(np.asarray(freqs_hz, dtype=np.float64))
        z = np.exp(-2j * np.pi * f / self.sample_rate)
        h = np.ones_like(z)
        for b0, b1, b2, _, a1, a2 in self.sos:
            h *= (b0 + b1 * z + b2 * z * z) / (1.0 + a1 * z + a2 * z * z)
        return h


def _check_edge(f: float, fs: float, what: str) -> None:
    if not (0.0 < f < fs / 2.0):
        raise ConfigError(f"{what} {f} Hz outside (0, {fs / 2}) for fs={fs}")


@lru_cache(maxsize=None)
def design_bandpass(lo: float, hi: float, fs: float, order: int = DEFAULT_ORDER) -> IirFilter:
    """Butterworth bandpass of the given overall order (even, default 4).

    The design follows the classic analog-prototype route: bilinear
    transform with corner pre-warping, emitted as ``order / 2`` biquads.
    Passband edges sit at -3 dB by construction.
    """
    if order <= 0 or order % 2 != 0:
        raise ConfigError(f"bandpass order must be a positive even integer, got {order}")
    _check_edge(lo, fs, "low edge")
    _check_edge(hi, fs, "high edge")
    if lo >= hi:
        raise ConfigError(f"band edges inverted: ({lo}, {hi})")
    sos = _signal.butter(order // 2, [lo, hi], btype="bandpass", fs=fs, output="sos")
    return IirFilter(sos=sos, sample_rate=fs, label=f"bandpass {lo:g}-{hi:g} Hz")


@lru_cache(maxsize=None)
def design_lowpass(cut: float, fs: float, order: int = DEFAULT_ORDER) -> IirFilter:
    """Butterworth lowpass, -3 dB at ``cut``; same design route as design_bandpass."""
    if order <= 0:
        raise ConfigError(f"lowpass order must be positive, got {order}")
    _check_edge(cut, fs, "cutoff")
    sos = _signal.butter(order, cut, btype="lowpass", fs=fs, output="sos")
    return IirFilter(sos=sos, sample_rate=fs, label=f"lowpass {cut:g} Hz")


def band_filter(name: str, fs: float) -> IirFilter:
    """Bandpass for a named analysis band (see BANDS)."""
    try:
        lo, hi = BANDS[name]
    except KeyError:
        raise ConfigError(f"unknown band {name!r}; expected one of {BAND_ORDER}") from None
    return design_bandpass(lo, hi, fs)


def zero_phase(x: np.ndarray, filt: IirFilter, pad_len: int | None = None) -> np.ndarray:
    """Forward-backward filtering with zero padding, along the last axis.

    The input is extended by ``pad_len`` zeros on each side (default: one
    second of samples), filtered causally with zero initial conditions,
    reversed, filtered again, reversed back, and trimmed to the original
    length.  The magnitude response is therefore |H|^2 and the phase is
    zero.  Residual edge error from tail truncation decays with pad_len.

    Parameters
    ----------
    x : ndarray, shape (..., n_samples)
    filt : IirFilter
    pad_len : int, optional
        Zeros prepended and appended before filtering.  Must be >= 0.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] == 0:
        raise ConfigError("cannot filter an empty signal")
    if pad_len is None:
        pad_len = int(round(filt.sample_rate))
    if pad_len < 0:
        raise ConfigError(f"pad_len must be >= 0, got {pad_len}")
    pad = [(0, 0)] * (x.ndim - 1) + [(pad_len, pad_len)]
    xp = np.pad(x, pad)
    y = _signal.sosfilt(filt.sos, xp, axis=-1)
    y = _signal.sosfilt(filt.sos, y[..., ::-1], axis=-1)[..., ::-1]
    if pad_len:
        y = y[..., pad_len:-pad_len]
    return np.ascontiguousarray(y)


def preprocess(data: np.ndarray, fs: float, pad_len: int | None = None) -> np.ndarray:
    """Broadband 0.5-40 Hz zero-phase bandpass applied to raw trial data."""
    filt = design_bandpass(*PREPROC_BAND, fs)
    return zero_phase(data, filt, pad_len=pad_len)


def decompose_filter_bank(
    data: np.ndarray,
    fs: float,
    bands: tuple[str, ...] = BAND_ORDER,
    pad_len: int | None = None,
) -> dict[str, np.ndarray]:
    """Split a (channels x samples) array into band-limited copies.

    Returns a dict keyed by band name, in canonical band order.
    """
    out: dict[str, np.ndarray] = {}
    for name in bands:
        out[name] = zero_phase(data, band_filter(name, fs), pad_len=pad_len)
    return out


def mrcp_lowpass(data: np.ndarray, fs: float, pad_len: int | None = None) -> np.ndarray:
    """6 Hz zero-phase lowpass used for slow cortical potential analysis."""
    return zero_phase(data, design_lowpass(MRCP_LOWPASS_HZ, fs), pad_len=pad_len)
