"""RIFF/WAV reading and writing for PCM16 and IEEE float32 data."""

from __future__ import annotations

import warnings
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.io import wavfile

from .dsp import MultichannelWaveform

__all__ = ["WavFormatError", "read_wav", "write_wav"]

_PCM16_SCALE = 32768.0


class WavFormatError(ValueError):
    """Raised for malformed or unsupported WAV files."""


def read_wav(path) -> MultichannelWaveform:
    """Read a PCM16 or float32 WAV file into a ``(C, T)`` float64 waveform."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except (ValueError, wavfile.WavFileWarning, EOFError, UnboundLocalError) as exc:  # scipy leaks UnboundLocalError on truncated headers
        raise WavFormatError(f"{path}: {exc}") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / _PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise WavFormatError(
            f"{path}: unsupported sample format {data.dtype} (PCM16 or float32 only)"
        )
    samples = samples[:, None] if samples.ndim == 1 else samples
    return MultichannelWaveform(np.ascontiguousarray(samples.T), int(rate))


def write_wav(
    path,
    samples: np.ndarray | Sequence[np.ndarray] | MultichannelWaveform,
    sample_rate: int | None = None,
    subtype: str = "float32",
) -> Path:
    """Write channels to ``path``.

    ``samples`` may be a 1-D mono array, a ``(C, T)`` array, a list of
    per-channel arrays (all the same length) or a MultichannelWaveform.
    PCM16 output clips to the representable range.
    """
    if isinstance(samples, MultichannelWaveform):
        sample_rate = samples.sample_rate if sample_rate is None else sample_rate
        samples = samples.samples
    if sample_rate is None:
        raise ValueError("sample_rate is required")
    if isinstance(samples, np.ndarray):
        data = np.atleast_2d(samples)
    else:
        lengths = {len(ch) for ch in samples}
        if len(lengths) != 1:
            raise ValueError(f"channel lengths differ: {sorted(lengths)}")
        data = np.stack([np.asarray(ch) for ch in samples])
    if data.ndim != 2:
        raise ValueError("expected at most two dimensions (channels, samples)")
    if not np.all(np.isfinite(data)):
        raise ValueError("refusing to write non-finite samples")

    if subtype == "float32":
        out = data.T.astype(np.float32)
    elif subtype == "pcm16":
        q = np.round(data.T * _PCM16_SCALE)
        out = np.clip(q, -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown subtype {subtype!r}; use 'float32' or 'pcm16'")
    path = Path(path)
    wavfile.write(path, int(sample_rate), np.ascontiguousarray(out))
    return path
