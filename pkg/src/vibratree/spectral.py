"""Node trajectories to spectra, frequency responses, and inference features."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.signal import find_peaks

from .errors import DegenerateSpectrum, DivisionByZero, EmptySeries, InputError

ZERO_MOTION_VARIANCE = 1e-15


@dataclass
class Spectrum:
    """One-sided complex spectrum of a scalar node displacement."""

    values: np.ndarray      # (nfft // 2 + 1,) complex
    bin_hz: float
    nfft: int
    n_samples: int
    node_id: Optional[int] = None

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(self.values.shape[0]) * self.bin_hz

    def amplitude(self) -> np.ndarray:
        return np.abs(self.values)


@dataclass
class SpectralFeatures:
    """Unit-norm amplitude over all bins plus phases at the mode bins."""

    amplitude: np.ndarray
    phase: np.ndarray
    mode_bins: np.ndarray


@dataclass
class ModePeak:
    bin: int
    frequency_hz: float
    height: float  # envelope value (log amplitude) at the mode bin


@dataclass
class EnvelopeModes:
    envelope: np.ndarray          # log-amplitude envelope per bin
    modes: list[ModePeak] = field(default_factory=list)

    @property
    def mode_bins(self) -> np.ndarray:
        return np.array([m.bin for m in self.modes], dtype=int)


def scalarize(traj_xy: np.ndarray) -> tuple[np.ndarray, bool]:
    """Project 2D displacement onto its dominant vibration axis.

    Returns the scalar series and a zero-motion flag; the sign is fixed so
    the first extremum of the series is positive. A node whose total variance
    falls below ``ZERO_MOTION_VARIANCE`` yields the zero series with the flag
    set.
    """
    xy = np.asarray(traj_xy, dtype=float)
    if xy.ndim != 2 or xy.shape[1] != 2 or xy.shape[0] < 2:
        raise EmptySeries("need a (n, 2) series with n >= 2")
    centered = xy - xy.mean(axis=0)
    cov = centered.T @ centered / xy.shape[0]
    if np.trace(cov) < ZERO_MOTION_VARIANCE:
        return np.zeros(xy.shape[0]), True
    _, vecs = np.linalg.eigh(cov)
    axis = vecs[:, -1]  # largest eigenvalue last
    series = xy @ axis
    d = np.diff(series)
    flips = np.nonzero(d[:-1] * d[1:] < 0)[0]
    pivot = flips[0] + 1 if flips.size else int(np.argmax(np.abs(series)))
    if series[pivot] < 0:
        series = -series
    return series, False


def fft_spectrum(series: np.ndarray, sample_rate_hz: float,
                 window: str = "none", node_id: Optional[int] = None) -> Spectrum:
    """One-sided FFT with automatic zero-padding to a power of two."""
    s = np.asarray(series, dtype=float)
    if s.ndim != 1 or s.shape[0] == 0:
        raise EmptySeries("empty input series")
    if window == "hann":
        s = s * np.hanning(s.shape[0])
    elif window != "none":
        raise InputError(f"unknown window {window!r}")
    nfft = 1 << max(1, (s.shape[0] - 1).bit_length())
    values = np.fft.rfft(s, n=nfft)
    return Spectrum(
        values=values,
        bin_hz=sample_rate_hz / nfft,
        nfft=nfft,
        n_samples=series.shape[0],
        node_id=node_id,
    )


def default_epsilon(y_root: Spectrum, rel: float = 1e-3) -> float:
    """Scale-relative Wiener regularization: rel * max |Y_root|."""
    return rel * float(np.abs(y_root.values).max())


def frequency_response(y_node: Spectrum, y_root: Spectrum, epsilon: float) -> Spectrum:
    """Wiener-regularized spectral division Y_i Y_root* / (|Y_root|^2 + eps^2).

    With epsilon = 0 this is plain division wherever the root spectrum is
    nonzero; a zero root bin with nonzero node energy is then an error.
    """
    if y_node.values.shape != y_root.values.shape:
        raise InputError("spectra have different bin counts")
    if epsilon < 0:
        raise InputError("epsilon must be >= 0")
    den = np.abs(y_root.values) ** 2 + epsilon**2
    if epsilon == 0.0:
        bad = (den == 0.0) & (np.abs(y_node.values) != 0.0)
        if np.any(bad):
            raise DivisionByZero(np.nonzero(bad)[0])
    num = y_node.values * np.conj(y_root.values)
    out = np.divide(num, den, out=np.zeros_like(num), where=den != 0.0)
    return Spectrum(
        values=out,
        bin_hz=y_node.bin_hz,
        nfft=y_node.nfft,
        n_samples=y_node.n_samples,
        node_id=y_node.node_id,
    )


def spectral_envelope(spec: Spectrum, order: int = 5) -> EnvelopeModes:
    """Iterative polynomial upper envelope of the log spectrum plus its modes.

    The fit is repeated on the points lying within a tolerance below the
    current envelope until the active set stops changing, which hugs the
    spectral peaks. Modes are envelope maxima of sufficient prominence,
    refined to the nearest strict local maximum of the raw amplitude.
    """
    if order < 1:
        raise InputError("order must be >= 1")
    amp = np.abs(spec.values)
    peak = amp.max()
    if peak == 0.0:
        raise DegenerateSpectrum("all-zero spectrum")
    la = np.log(amp + 1e-12 * peak)
    nbins = la.shape[0]
    x = np.arange(nbins, dtype=float)
    tol = 0.1 * (la.max() - la.min()) + 1e-12
    active = np.ones(nbins, dtype=bool)
    env = la.copy()
    for _ in range(50):
        if active.sum() < order + 2:
            break
        poly = np.polynomial.Polynomial.fit(x[active], la[active], order)
        env = poly(x)
        new_active = la >= env - tol
        if np.array_equal(new_active, active):
            break
        active = new_active
    raw_dyn = la.max() - la.min()
    modes: list[ModePeak] = []
    if raw_dyn > 1e-12:
        # a global degree-5 fit cannot resolve nearby resonances into separate
        # maxima, so modes are prominent maxima of the log spectrum itself,
        # gated to lie near or above the envelope
        peaks, _ = find_peaks(la, prominence=0.1 * raw_dyn)
        for b in peaks:
            if la[b] < env[b] - 0.25 * raw_dyn:
                continue
            modes.append(ModePeak(bin=int(b), frequency_hz=b * spec.bin_hz,
                                  height=float(env[b])))
    return EnvelopeModes(envelope=env, modes=modes)


def extract_features(spec: Spectrum, mode_bins) -> SpectralFeatures:
    """Unit-L2 amplitude over all bins; phases taken at the mode bins."""
    amp = np.abs(spec.values)
    norm = np.linalg.norm(amp)
    if norm == 0.0:
        raise DegenerateSpectrum("all-zero spectrum")
    bins = np.asarray(mode_bins, dtype=int)
    if bins.size and (bins.min() < 0 or bins.max() >= spec.values.shape[0]):
        raise InputError("mode bin out of range")
    phase = np.angle(spec.values[bins]) if bins.size else np.zeros(0)
    return SpectralFeatures(amplitude=amp / norm, phase=phase, mode_bins=bins)


def parseval_ratio(series: np.ndarray, spec: Spectrum, window: str = "none") -> float:
    """Signal energy over spectrum energy; 1.0 when Parseval holds."""
    s = np.asarray(series, dtype=float)
    if window == "hann":
        s = s * np.hanning(s.shape[0])
    sig = float(np.sum(s**2))
    v = spec.values
    spec_e = (np.abs(v[0]) ** 2 + 2 * np.sum(np.abs(v[1:-1]) ** 2)
              + np.abs(v[-1]) ** 2) / spec.nfft
    return sig / spec_e
