"""STFT analysis/synthesis with exact adjoints.

Signals are numpy arrays whose last axis is time; spectrograms put frames on
the second-to-last axis and one-sided frequency bins on the last one, so a
``(C, T)`` multichannel signal maps to a ``(C, L, fft_size // 2 + 1)`` array.

The transform zero-pads ``fft_size - hop_size`` samples on both sides (plus
whatever is needed to land on a frame boundary), which makes every input
sample fully covered by the overlap-add.  With the square-root Hann pair this
makes the analysis a tight frame: ``istft`` is an exact left inverse and the
window-normalised energy of ``stft(x)`` equals ``||x||^2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "DEFAULT_SAMPLE_RATE",
    "StftConfig",
    "Waveform",
    "MultichannelWaveform",
    "stft",
    "istft",
    "stft_adjoint",
    "istft_adjoint",
    "stft_energy",
    "num_frames",
]

DEFAULT_SAMPLE_RATE = 8000


@dataclass(frozen=True)
class StftConfig:
    """STFT geometry.  Both windows are square-root periodic Hann."""

    fft_size: int = 512
    hop_size: int = 64

    def __post_init__(self):
        n, hop = self.fft_size, self.hop_size
        if n < 2 or n & (n - 1):
            raise ValueError(f"fft_size must be a power of two >= 2, got {n}")
        if hop < 1 or n % hop:
            raise ValueError(f"hop_size {hop} must divide fft_size {n}")
        overlap = self.window_overlap
        if not np.allclose(overlap, overlap[0], rtol=1e-12, atol=0.0):
            raise ValueError(
                f"square-root Hann pair is not COLA at hop {hop} for fft {n}"
            )

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @cached_property
    def window(self) -> np.ndarray:
        n = np.arange(self.fft_size)
        return np.sqrt(0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.fft_size))

    @cached_property
    def window_overlap(self) -> np.ndarray:
        """Sum of ``w^2`` over all frame shifts, one value per hop position."""
        w2 = self.window**2
        return w2.reshape(-1, self.hop_size).sum(axis=0)

    @property
    def cola_gain(self) -> float:
        return float(self.window_overlap[0])


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples)
        if x.ndim != 1 or x.size < 1:
            raise ValueError("a Waveform holds a non-empty 1-D sample array")
        if not np.all(np.isfinite(x)):
            raise ValueError("waveform contains non-finite samples")


@dataclass(frozen=True)
class MultichannelWaveform:
    """``samples`` is ``(C, T)``; channel 0 is the reference microphone."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError("a MultichannelWaveform holds a (C, T) sample array")
        if not np.all(np.isfinite(x)):
            raise ValueError("waveform contains non-finite samples")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def channels(self) -> list[Waveform]:
        return [Waveform(ch, self.sample_rate) for ch in self.samples]


def _padding(length: int, cfg: StftConfig) -> tuple[int, int, int]:
    if length < cfg.fft_size:
        raise ValueError(
            f"signal of {length} samples is shorter than one frame ({cfg.fft_size})"
        )
    left = cfg.fft_size - cfg.hop_size
    right = left + (-length) % cfg.hop_size
    frames = (length + left + right - cfg.fft_size) // cfg.hop_size + 1
    return left, right, frames


def num_frames(length: int, cfg: StftConfig) -> int:
    return _padding(length, cfg)[2]


def _frame(x: np.ndarray, cfg: StftConfig, left: int, right: int) -> np.ndarray:
    pad = [(0, 0)] * (x.ndim - 1) + [(left, right)]
    xp = np.pad(x, pad)
    return sliding_window_view(xp, cfg.fft_size, axis=-1)[..., :: cfg.hop_size, :]


def _overlap_add(frames: np.ndarray, cfg: StftConfig) -> np.ndarray:
    hop = cfg.hop_size
    ratio = cfg.fft_size // hop
    n_frames = frames.shape[-2]
    lead = frames.shape[:-2]
    blocks = frames.reshape(*lead, n_frames, ratio, hop)
    out = np.zeros((*lead, n_frames + ratio - 1, hop), dtype=frames.dtype)
    for r in range(ratio):
        out[..., r : r + n_frames, :] += blocks[..., r, :]
    return out.reshape(*lead, -1)


def _check_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains non-finite values")


def stft(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """One-sided STFT of ``x`` along its last axis."""
    x = np.asarray(x, dtype=float)
    _check_finite(x, "signal")
    left, right, _ = _padding(x.shape[-1], cfg)
    return np.fft.rfft(_frame(x, cfg, left, right) * cfg.window, axis=-1)


def istft(S: np.ndarray, cfg: StftConfig, length: int) -> np.ndarray:
    """Weighted overlap-add synthesis; exact inverse of :func:`stft`."""
    S = np.asarray(S)
    _check_finite(S, "spectrogram")
    left, right, frames = _padding(length, cfg)
    if S.shape[-2] != frames or S.shape[-1] != cfg.n_bins:
        raise ValueError(
            f"spectrogram shape {S.shape[-2:]} does not match "
            f"{(frames, cfg.n_bins)} for length {length}"
        )
    seg = np.fft.irfft(S, n=cfg.fft_size, axis=-1) * cfg.window
    y = _overlap_add(seg, cfg) / cfg.cola_gain
    return y[..., left : left + length]


def _bin_weights(cfg: StftConfig) -> np.ndarray:
    # multiplicity of each one-sided bin in the full spectrum
    c = np.full(cfg.n_bins, 2.0)
    c[0] = 1.0
    c[-1] = 1.0
    return c


def stft_adjoint(Y: np.ndarray, cfg: StftConfig, length: int) -> np.ndarray:
    """Adjoint of :func:`stft` under ``<A, B> = Re sum(conj(A) * B)``."""
    Y = np.asarray(Y)
    left, _, frames = _padding(length, cfg)
    if Y.shape[-2] != frames:
        raise ValueError(f"expected {frames} frames, got {Y.shape[-2]}")
    # adjoint of rfft restricted to real inputs: N * irfft with interior bins halved
    seg = cfg.fft_size * np.fft.irfft(Y / _bin_weights(cfg), n=cfg.fft_size, axis=-1)
    y = _overlap_add(seg * cfg.window, cfg)
    return y[..., left : left + length]


def istft_adjoint(y: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Adjoint of :func:`istft` (for the length of ``y``)."""
    y = np.asarray(y, dtype=float)
    left, right, _ = _padding(y.shape[-1], cfg)
    frames = _frame(y, cfg, left, right) * cfg.window
    weights = _bin_weights(cfg) / (cfg.fft_size * cfg.cola_gain)
    return np.fft.rfft(frames, axis=-1) * weights


def stft_energy(S: np.ndarray, cfg: StftConfig) -> float:
    """Energy of a spectrogram normalised so that ``stft_energy(stft(x)) == ||x||^2``."""
    power = (np.abs(S) ** 2 * _bin_weights(cfg)).sum()
    return float(power / (cfg.fft_size * cfg.cola_gain))
