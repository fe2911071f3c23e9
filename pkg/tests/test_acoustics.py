import json
import math

import numpy as np
import pytest

from arraydps.acoustics import (
    Rir,
    SceneSpec,
    convolve,
    load_fixture,
    make_fixture,
    mix_scene,
    save_fixture,
    speechlike_source,
    synth_rir,
)
from arraydps.dsp import Waveform


def test_zero_decay_gives_pure_delayed_impulse():
    spec = SceneSpec(decay_time_constant=0.0, direct_delay_range=(7, 7), rir_length=50)
    h = synth_rir(spec, 0, 0).taps
    expected = np.zeros(50)
    expected[7] = 1.0
    assert np.array_equal(h, expected)


def test_rir_is_deterministic_per_seed():
    spec = SceneSpec(rng_seed=4)
    assert np.array_equal(synth_rir(spec, 1, 2).taps, synth_rir(spec, 1, 2).taps)
    assert not np.array_equal(synth_rir(spec, 1, 2).taps, synth_rir(SceneSpec(rng_seed=5), 1, 2).taps)


def test_tap_energy_decays_in_expectation():
    spec = SceneSpec(rir_length=2000, direct_delay_range=(0, 0))
    energy = np.zeros(2000)
    for seed in range(100):
        energy += synth_rir(SceneSpec(**{**spec.to_json(), "snr_db": math.inf, "rng_seed": seed, "direct_delay_range": (0, 0)}), 0, 0).taps ** 2
    blocks = energy[1:1901].reshape(-1, 100).sum(axis=1)
    assert np.all(np.diff(blocks) < 0)


def test_rir_rejects_zero_energy():
    with pytest.raises(ValueError):
        Rir(np.zeros(4))


def test_convolve_identity_delay_and_naive_oracle(rng):
    x = rng.standard_normal(300)
    assert np.allclose(convolve(x, np.array([1.0])), x, atol=1e-12)
    h = np.zeros(10)
    h[4] = 1.0
    assert np.allclose(convolve(x, h), np.r_[np.zeros(4), x[:-4]], atol=1e-12)
    h = rng.standard_normal(37)
    naive = np.array([sum(h[j] * x[t - j] for j in range(len(h)) if t - j >= 0) for t in range(len(x))])
    assert np.max(np.abs(convolve(x, h) - naive)) <= 1e-10


def test_convolve_rate_mismatch():
    with pytest.raises(ValueError, match="sample rate"):
        convolve(Waveform(np.ones(10), 8000), Rir(np.ones(3), 16000))


def test_noiseless_mixture_is_exact_sum():
    fx = make_fixture(SceneSpec(n_sources=2, n_mics=3, length=3000, rng_seed=2))
    assert np.array_equal(fx.mixtures, fx.images.sum(axis=0))
    assert not np.any(fx.noise)


def test_identity_rirs_single_source(rng):
    spec = SceneSpec(n_sources=1, n_mics=2, length=500, snr_db=30.0, rir_length=1, direct_delay_range=(0, 0))
    s = rng.standard_normal(500)
    fx = mix_scene([s], spec, rirs=[[Rir(np.ones(1)), Rir(np.ones(1))]])
    assert np.allclose(fx.mixtures - fx.noise, np.stack([s, s]))


def test_snr_is_exact_per_channel():
    fx = make_fixture(SceneSpec(n_sources=2, n_mics=3, length=4000, snr_db=20.0, rng_seed=8))
    clean = fx.images.sum(axis=0)
    for c in range(3):
        snr = 10 * np.log10(np.sum(clean[c] ** 2) / np.sum(fx.noise[c] ** 2))
        assert 19.9 <= snr <= 20.1
    assert np.array_equal(fx.mixtures, clean + fx.noise)


def test_early_images_use_first_50_ms():
    fx = make_fixture(SceneSpec(n_sources=1, n_mics=2, length=2000, rng_seed=3))
    h = fx.rirs[0][1].taps[:400]
    assert np.allclose(fx.early_images[0, 1], convolve(fx.dry_sources[0], h))


def test_fixture_is_deterministic():
    spec = SceneSpec(length=1000, rng_seed=6, snr_db=10.0)
    a, b = make_fixture(spec), make_fixture(spec)
    assert np.array_equal(a.mixtures, b.mixtures) and np.array_equal(a.dry_sources, b.dry_sources)


def test_length_mismatch_rejected():
    with pytest.raises(ValueError, match="length"):
        mix_scene([np.ones(10), np.ones(11)], SceneSpec(n_sources=2, n_mics=1, rir_length=5, direct_delay_range=(0, 0)))


def test_speechlike_source_has_unit_scale_and_no_silence(rng):
    s = speechlike_source(8000, 8000, rng)
    assert np.sqrt(np.mean(s**2)) == pytest.approx(0.1)
    assert np.all(s != 0)


def test_scene_spec_json(tmp_path):
    spec = SceneSpec(snr_db=15.0, rng_seed=3)
    assert SceneSpec.from_json(json.loads(json.dumps(spec.to_json()))) == spec
    assert SceneSpec.from_json({"snr_db": None}).snr_db == math.inf
    with pytest.raises(ValueError, match="unknown"):
        SceneSpec.from_json({"n_speakers": 2})
    with pytest.raises(ValueError):
        SceneSpec(n_sources=0)


def test_save_and_load_round_trip(tmp_path):
    fx = make_fixture(SceneSpec(n_sources=2, n_mics=3, length=2000, rng_seed=9))
    manifest = save_fixture(fx, tmp_path / "fx")
    assert manifest["residual_check"]["passed"]
    back = load_fixture(tmp_path / "fx")
    assert back.images.shape == (2, 3, 2000)
    assert np.allclose(back.mixtures, fx.mixtures, atol=1e-6)
    assert np.array_equal(back.rirs[1][2].taps, fx.rirs[1][2].taps.astype(np.float32))
    assert back.spec == fx.spec
