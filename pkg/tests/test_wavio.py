import numpy as np
import pytest

from arraydps.dsp import MultichannelWaveform
from arraydps.wavio import WavFormatError, read_wav, write_wav


def test_float32_round_trip_is_bit_exact(tmp_path, rng):
    x = rng.uniform(-1, 1, (3, 1000)).astype(np.float32)
    write_wav(tmp_path / "a.wav", x, 8000)
    w = read_wav(tmp_path / "a.wav")
    assert w.sample_rate == 8000
    assert np.array_equal(w.samples.astype(np.float32), x)


def test_pcm16_error_within_one_lsb(tmp_path, rng):
    x = rng.uniform(-0.99, 0.99, (2, 500))
    write_wav(tmp_path / "p.wav", x, 16000, subtype="pcm16")
    w = read_wav(tmp_path / "p.wav")
    assert np.max(np.abs(w.samples - x)) <= 2.0**-15


def test_mono_and_waveform_inputs(tmp_path):
    write_wav(tmp_path / "m.wav", np.linspace(-0.5, 0.5, 64), 8000)
    assert read_wav(tmp_path / "m.wav").samples.shape == (1, 64)
    mc = MultichannelWaveform(np.zeros((2, 32)), 8000)
    write_wav(tmp_path / "mc.wav", mc)
    assert read_wav(tmp_path / "mc.wav").n_channels == 2


def test_mismatched_channel_lengths_rejected(tmp_path):
    with pytest.raises(ValueError, match="lengths differ"):
        write_wav(tmp_path / "bad.wav", [np.zeros(10), np.zeros(11)], 8000)


def test_malformed_file_rejected(tmp_path):
    p = tmp_path / "junk.wav"
    p.write_bytes(b"RIFF\x00\x00\x00\x00WAVEjunkjunk")
    with pytest.raises(WavFormatError):
        read_wav(p)


def test_unsupported_codec_rejected(tmp_path):
    from scipy.io import wavfile

    wavfile.write(tmp_path / "i32.wav", 8000, np.zeros(16, dtype=np.int32))
    with pytest.raises(WavFormatError, match="unsupported"):
        read_wav(tmp_path / "i32.wav")


def test_non_finite_and_unknown_subtype_rejected(tmp_path):
    with pytest.raises(ValueError):
        write_wav(tmp_path / "n.wav", np.array([0.0, np.nan]), 8000)
    with pytest.raises(ValueError, match="subtype"):
        write_wav(tmp_path / "s.wav", np.zeros(4), 8000, subtype="mp3")
