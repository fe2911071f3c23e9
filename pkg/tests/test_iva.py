import numpy as np
import pytest

from arraydps.acoustics import speechlike_source
from arraydps.dsp import StftConfig, stft
from arraydps.fcp import FcpConfig, apply_filter
from arraydps.iva import (
    IvaConfig,
    auxiva,
    iva_init_filters,
    iva_objective,
    iva_separate,
    iva_separate_waveform,
    projection_back,
)
from arraydps.metrics import align_and_eval, si_sdr


def mixture(seed, T=8000, A=((1.0, 0.5), (0.5, 1.0))):
    rng = np.random.default_rng([seed, 99])
    s = np.stack([speechlike_source(T, 8000, rng) for _ in range(2)])
    A = np.asarray(A)
    return s, A @ s, A[0][:, None] * s


@pytest.mark.parametrize("prior", ["gauss", "laplace"])
def test_objective_is_monotone(prior):
    _, x, _ = mixture(0)
    X = stft(x, StftConfig(1024, 256))
    h = np.array(auxiva(X, 30, prior).objective)
    assert len(h) == 31
    assert np.all(np.diff(h) <= 1e-9 * np.abs(h[:-1]))


def test_objective_matches_history():
    _, x, _ = mixture(1)
    X = stft(x, StftConfig(1024, 256))
    res = auxiva(X, 5)
    assert iva_objective(X, res.demixing) == pytest.approx(res.objective[-1], rel=1e-9)


def test_separates_instantaneous_mixture():
    _, x, imgs = mixture(2, T=16000)
    y = iva_separate_waveform(x, IvaConfig())
    gain = align_and_eval(y, imgs).mean_si_sdr - np.mean([si_sdr(x[0], r) for r in imgs])
    assert gain >= 10.0


def test_projection_back_recovers_reference_images():
    # with the true demixing matrix the projected outputs equal the channel-0 images
    _, x, imgs = mixture(3, T=4096)
    cfg = StftConfig(512, 128)
    X = stft(x, cfg)
    A = np.array([[1.0, 0.5], [0.5, 1.0]])
    W = np.tile(np.linalg.inv(A), (X.shape[2], 1, 1)).astype(complex)
    Y = (W @ X.transpose(2, 0, 1)).transpose(1, 2, 0)
    Z = projection_back(Y, W)
    assert np.allclose(Z, stft(imgs, cfg), atol=1e-10)


def test_unmixed_input_stays_separated():
    s, _, _ = mixture(4, T=16000)
    y = iva_separate_waveform(s, IvaConfig(iterations=20), 2)
    # source 1 never reaches microphone 0, so its projected image vanishes
    assert si_sdr(y[0], s[0]) >= 20.0
    assert np.linalg.norm(y[1]) <= 0.01 * np.linalg.norm(s[1])


def test_overdetermined_uses_leading_channels():
    _, x, _ = mixture(5, T=4096)
    x3 = np.vstack([x, x[0] + 0.1 * x[1]])
    cfg = IvaConfig(iterations=10, stft=StftConfig(512, 128))
    assert np.allclose(iva_separate_waveform(x3, cfg, 2), iva_separate_waveform(x, cfg, 2))


def test_init_filters_single_source_gains():
    # one source seen with gains a: the relative filter to channel c is a[c] / a[0] at lag 0
    s, _, _ = mixture(6, T=4096)
    a = np.array([0.8, -0.4, 1.3])
    X = stft(a[:, None] * s[0], StftConfig())
    S = stft(a[0] * s[:1], StftConfig())
    G = iva_init_filters(X, S, FcpConfig(diag_load=0.0))
    assert G.taps.shape == (1, 3, 257, 14)
    expected = np.zeros((3, 257, 14), complex)
    expected[:, :, 1] = (a / a[0])[:, None]
    assert np.allclose(G.taps[0], expected, atol=1e-8)
    assert np.allclose(apply_filter(G, S[:, None]).sum(axis=0), X, atol=1e-4 * np.abs(X).max())


def test_errors():
    with pytest.raises(ValueError):
        IvaConfig(prior="cauchy")
    with pytest.raises(ValueError):
        IvaConfig(iterations=0)
    X = np.ones((1, 4, 3), complex)
    with pytest.raises(ValueError, match="two channels"):
        auxiva(X)
    with pytest.raises(ValueError, match="cannot separate"):
        iva_separate(np.ones((2, 4, 3), complex), n_sources=3)
    bad = np.ones((2, 4, 3), complex)
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        auxiva(bad)
