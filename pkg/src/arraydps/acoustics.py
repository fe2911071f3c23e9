"""Synthetic reverberant scenes: RIRs, source images and noisy mixtures.

RIRs are sparse random reflections under an exponential envelope with a
dominant direct-path tap.  This is not a room model; it only reproduces the
convolutive structure the separation algorithms rely on.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal

from .dsp import DEFAULT_SAMPLE_RATE, MultichannelWaveform
from .wavio import read_wav, write_wav

__all__ = [
    "SceneSpec",
    "Rir",
    "MixtureFixture",
    "synth_rir",
    "convolve",
    "speechlike_source",
    "mix_scene",
    "make_fixture",
    "save_fixture",
    "load_fixture",
    "EARLY_REVERB_SECONDS",
]

EARLY_REVERB_SECONDS = 0.05

# stream tags for counter-based seeding
_RIR_STREAM = 1
_NOISE_STREAM = 2
_SOURCE_STREAM = 3


@dataclass(frozen=True)
class SceneSpec:
    """Scene parameters.  ``snr_db = inf`` means a noiseless mixture."""

    n_sources: int = 2
    n_mics: int = 3
    length: int = 8000
    rir_length: int = 2000
    decay_time_constant: float = 0.05
    direct_delay_range: tuple[int, int] = (0, 40)
    snr_db: float = math.inf
    rng_seed: int = 0
    sample_rate: int = DEFAULT_SAMPLE_RATE
    tap_density: float = 0.2
    reverb_gain: float = 0.4

    def __post_init__(self):
        if self.n_sources < 1 or self.n_mics < 1:
            raise ValueError("need at least one source and one microphone")
        if self.length < 1 or self.rir_length < 1:
            raise ValueError("length and rir_length must be positive")
        lo, hi = self.direct_delay_range
        if not 0 <= lo <= hi < self.rir_length:
            raise ValueError(
                f"direct_delay_range {self.direct_delay_range} must lie in "
                f"[0, rir_length={self.rir_length})"
            )
        if self.decay_time_constant < 0:
            raise ValueError("decay_time_constant must be >= 0")
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ValueError("snr_db must be finite or +inf")
        if not 0.0 <= self.tap_density <= 1.0:
            raise ValueError("tap_density must lie in [0, 1]")

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["direct_delay_range"] = list(self.direct_delay_range)
        d["snr_db"] = None if math.isinf(self.snr_db) else self.snr_db
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SceneSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scene keys: {sorted(unknown)}")
        d = dict(d)
        if "direct_delay_range" in d:
            d["direct_delay_range"] = tuple(int(v) for v in d["direct_delay_range"])
        if "snr_db" in d:
            d["snr_db"] = math.inf if d["snr_db"] in (None, "inf") else float(d["snr_db"])
        return cls(**d)


@dataclass(frozen=True)
class Rir:
    taps: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE
    direct_path_index: int = 0

    def __post_init__(self):
        h = np.asarray(self.taps)
        if h.ndim != 1 or h.size < 1 or not np.all(np.isfinite(h)):
            raise ValueError("RIR taps must be a finite, non-empty 1-D array")
        if not np.any(h):
            raise ValueError("RIR has zero energy")


@dataclass
class MixtureFixture:
    """Ground truth for one scene.  Arrays are ``(K, C, T)`` / ``(C, T)``."""

    mixtures: np.ndarray
    images: np.ndarray
    dry_sources: np.ndarray
    rirs: list[list[Rir]]
    early_images: np.ndarray
    noise: np.ndarray
    spec: SceneSpec
    sample_rate: int = DEFAULT_SAMPLE_RATE
    meta: dict = field(default_factory=dict)

    @property
    def reference_images(self) -> np.ndarray:
        return self.images[:, 0]

    @property
    def mixture(self) -> MultichannelWaveform:
        return MultichannelWaveform(self.mixtures, self.sample_rate)


def synth_rir(spec: SceneSpec, k: int, c: int, rng: np.random.Generator | None = None) -> Rir:
    """Random RIR for source ``k`` at microphone ``c``; deterministic per seed."""
    if rng is None:
        rng = np.random.default_rng([spec.rng_seed, _RIR_STREAM, k, c])
    lo, hi = spec.direct_delay_range
    delay = int(rng.integers(lo, hi + 1))
    taps = np.zeros(spec.rir_length)
    taps[delay] = 1.0

    lag = np.arange(1, spec.rir_length - delay)
    hit = rng.random(lag.size) < spec.tap_density
    amp = rng.standard_normal(lag.size)
    tau = spec.decay_time_constant * spec.sample_rate
    if tau > 0:
        envelope = np.exp(-lag / tau)
    else:
        envelope = np.zeros(lag.size)
    taps[delay + 1 :] = spec.reverb_gain * hit * amp * envelope
    return Rir(taps, spec.sample_rate, delay)


def convolve(x, h) -> np.ndarray:
    """Linear convolution of ``x`` with ``h``, truncated to ``len(x)``.

    Either argument may be an array, a Waveform or a Rir; sample rates are
    checked when both carry one.
    """
    rates = [getattr(a, "sample_rate", None) for a in (x, h)]
    if None not in rates and rates[0] != rates[1]:
        raise ValueError(f"sample rate mismatch: {rates[0]} vs {rates[1]}")
    x = np.asarray(getattr(x, "samples", x), dtype=float)
    h = np.asarray(getattr(h, "taps", h), dtype=float)
    return signal.oaconvolve(x, h)[: x.shape[-1]]


def speechlike_source(length: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Coloured noise with a syllable-rate on/off envelope, RMS 0.1.

    Each syllable gets its own resonance so the spectrum wanders over time,
    and the envelope is shared across frequency, which is what the IVA
    source model assumes.
    """
    out = np.zeros(length)
    t = 0
    while t < length:
        dur = int(rng.uniform(0.08, 0.3) * sample_rate)
        seg = min(dur, length - t)
        if rng.random() < 0.7:
            pole = rng.uniform(0.6, 0.95)
            freq = rng.uniform(200.0, 0.4 * sample_rate)
            r = rng.uniform(0.85, 0.97)
            theta = 2.0 * np.pi * freq / sample_rate
            a = np.convolve([1.0, -pole], [1.0, -2.0 * r * np.cos(theta), r * r])
            noise = signal.lfilter([1.0], a, rng.standard_normal(seg + 200))[200:]
            noise /= np.std(noise) + 1e-12
            out[t : t + seg] = rng.uniform(0.3, 1.0) * noise * np.hanning(seg + 2)[1:-1] ** 0.5
        t += seg
    rms = np.sqrt(np.mean(out**2))
    if rms == 0:
        out = rng.standard_normal(length)
        rms = np.sqrt(np.mean(out**2))
    # breath-level floor, 40 dB down: no digitally silent gaps
    out = out / rms + 0.01 * rng.standard_normal(length)
    return 0.1 * out / np.sqrt(np.mean(out**2))


def mix_scene(
    sources: Sequence[np.ndarray] | np.ndarray,
    spec: SceneSpec,
    rirs: list[list[Rir]] | None = None,
) -> MixtureFixture:
    """Convolve dry ``sources`` with per-microphone RIRs and add sensor noise.

    Noise is white Gaussian, rescaled per channel so that the SNR against the
    sum of images is exactly ``spec.snr_db``.
    """
    arrays = [np.asarray(getattr(s, "samples", s), dtype=float) for s in sources]
    if len({a.shape for a in arrays}) != 1:
        raise ValueError(f"sources differ in length: {[a.shape[-1] for a in arrays]}")
    dry = np.stack(arrays)
    if dry.shape[0] != spec.n_sources:
        raise ValueError(f"expected {spec.n_sources} sources, got {dry.shape[0]}")
    T = dry.shape[1]
    if rirs is None:
        rirs = [[synth_rir(spec, k, c) for c in range(spec.n_mics)] for k in range(spec.n_sources)]

    n_early = int(round(EARLY_REVERB_SECONDS * spec.sample_rate))
    images = np.empty((spec.n_sources, spec.n_mics, T))
    early = np.empty_like(images)
    for k in range(spec.n_sources):
        for c in range(spec.n_mics):
            h = rirs[k][c].taps
            images[k, c] = convolve(dry[k], h)
            early[k, c] = convolve(dry[k], h[:n_early])

    clean = images.sum(axis=0)
    noise = np.zeros_like(clean)
    if math.isfinite(spec.snr_db):
        for c in range(spec.n_mics):
            n = np.random.default_rng([spec.rng_seed, _NOISE_STREAM, c]).standard_normal(T)
            target = np.sum(clean[c] ** 2) / 10.0 ** (spec.snr_db / 10.0)
            noise[c] = n * np.sqrt(target / np.sum(n**2))
    mixtures = clean + noise
    return MixtureFixture(mixtures, images, dry, rirs, early, noise, spec, spec.sample_rate)


def make_fixture(spec: SceneSpec, sources: Sequence[np.ndarray] | None = None) -> MixtureFixture:
    """Build a complete fixture, generating speech-like dry sources if none are given."""
    if sources is None:
        sources = [
            speechlike_source(
                spec.length,
                spec.sample_rate,
                np.random.default_rng([spec.rng_seed, _SOURCE_STREAM, k]),
            )
            for k in range(spec.n_sources)
        ]
    return mix_scene(sources, spec)


def save_fixture(fx: MixtureFixture, out_dir) -> dict:
    """Write a fixture as float32 WAVs plus ``manifest.json``; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rate = fx.sample_rate
    K, C = fx.images.shape[:2]
    files = {
        "mixture": "mixture.wav",
        "noise": "noise.wav",
        "images": [f"image_{k}.wav" for k in range(K)],
        "early_images": [f"early_{k}.wav" for k in range(K)],
        "dry": [f"dry_{k}.wav" for k in range(K)],
        "rirs": [f"rir_{k}.wav" for k in range(K)],
    }
    write_wav(out / files["mixture"], fx.mixtures, rate)
    write_wav(out / files["noise"], fx.noise, rate)
    for k in range(K):
        write_wav(out / files["images"][k], fx.images[k], rate)
        write_wav(out / files["early_images"][k], fx.early_images[k], rate)
        write_wav(out / files["dry"][k], fx.dry_sources[k], rate)
        write_wav(out / files["rirs"][k], [fx.rirs[k][c].taps for c in range(C)], rate)

    # residual check on what was actually written (float32)
    mix = read_wav(out / files["mixture"]).samples
    imgs = sum(read_wav(out / f).samples for f in files["images"])
    noise = read_wav(out / files["noise"]).samples
    rel = float(np.linalg.norm(mix - imgs - noise) / max(np.linalg.norm(mix), 1e-30))
    manifest = {
        "scene": fx.spec.to_json(),
        "sample_rate": rate,
        "n_sources": K,
        "n_mics": C,
        "length": int(fx.mixtures.shape[1]),
        "reference_channel": 0,
        "files": files,
        "direct_path_index": [[r.direct_path_index for r in row] for row in fx.rirs],
        "residual_check": {"relative_residual": rel, "tolerance": 1e-6, "passed": rel <= 1e-6},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_fixture(fixture_dir) -> MixtureFixture:
    root = Path(fixture_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    files = manifest["files"]
    spec = SceneSpec.from_json(manifest["scene"])
    rate = manifest["sample_rate"]
    rir_arrays = [read_wav(root / f).samples for f in files["rirs"]]
    rirs = [
        [Rir(h[c], rate, manifest["direct_path_index"][k][c]) for c in range(h.shape[0])]
        for k, h in enumerate(rir_arrays)
    ]
    return MixtureFixture(
        mixtures=read_wav(root / files["mixture"]).samples,
        images=np.stack([read_wav(root / f).samples for f in files["images"]]),
        dry_sources=np.stack([read_wav(root / f).samples[0] for f in files["dry"]]),
        rirs=rirs,
        early_images=np.stack([read_wav(root / f).samples for f in files["early_images"]]),
        noise=read_wav(root / files["noise"]).samples,
        spec=spec,
        sample_rate=rate,
        meta=manifest,
    )

