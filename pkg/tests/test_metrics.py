import numpy as np
import pytest
from scipy.signal import lfilter

from arraydps.metrics import CLAMP_DB, align_and_eval, recon_snr, sdr_filtered, si_sdr


def test_si_sdr_identity_and_scale_invariance(rng):
    r = rng.standard_normal(1000)
    assert si_sdr(r, r) == CLAMP_DB
    assert si_sdr(3.5 * r, r) == CLAMP_DB


def test_si_sdr_known_value(rng):
    r = rng.standard_normal(4000)
    n = rng.standard_normal(4000)
    n -= np.dot(n, r) / np.dot(r, r) * r  # orthogonal noise
    n *= np.linalg.norm(r) / np.linalg.norm(n) / np.sqrt(10)
    assert si_sdr(r + n, r) == pytest.approx(10.0, abs=1e-9)


def test_si_sdr_independent_formula(rng):
    e, r = rng.standard_normal((2, 500))
    a = e @ r / (r @ r)
    expected = 10 * np.log10(np.sum((a * r) ** 2) / np.sum((e - a * r) ** 2))
    assert si_sdr(e, r) == pytest.approx(expected, abs=1e-10)


def test_sdr_with_one_tap_equals_si_sdr(rng):
    e, r = rng.standard_normal((2, 800))
    assert sdr_filtered(e, r, taps=1) == pytest.approx(si_sdr(e, r), abs=1e-9)


def test_sdr_forgives_short_filters(rng):
    r = rng.standard_normal(4000)
    e = lfilter([1.0, 0.4, -0.2, 0.1], [1.0], r)
    assert sdr_filtered(e, r, taps=8) >= 90.0
    assert si_sdr(e, r) < 20.0


def test_sdr_matches_lstsq_projection(rng):
    r, e = rng.standard_normal((2, 600))
    taps = 5
    A = np.stack([np.r_[np.zeros(d), r[: r.size - d]] for d in range(taps)], axis=1)
    t = A @ np.linalg.lstsq(A, e, rcond=None)[0]
    expected = 10 * np.log10(np.sum(t**2) / np.sum((e - t) ** 2))
    assert sdr_filtered(e, r, taps) == pytest.approx(expected, abs=1e-8)


def test_pit_alignment(rng):
    refs = rng.standard_normal((3, 1000))
    est = refs[[2, 0, 1]] + 0.01 * rng.standard_normal((3, 1000))
    rep = align_and_eval(est, refs, with_sdr=True, sdr_taps=16)
    assert rep.permutation == [1, 2, 0]
    assert all(m.si_sdr_db > 30 and m.sdr_db >= m.si_sdr_db - 1e-9 for m in rep.per_source)
    assert align_and_eval(est[::-1], refs).mean_si_sdr == pytest.approx(rep.mean_si_sdr)
    js = rep.to_json()
    assert set(js) == {"per_source", "permutation", "recon_snr_db", "mean_si_sdr_db"}


def test_recon_snr(rng):
    imgs = rng.standard_normal((2, 500))
    x = imgs.sum(axis=0)
    assert recon_snr(x, imgs) == CLAMP_DB
    assert recon_snr(x, np.zeros_like(imgs)) == pytest.approx(0.0)


def test_errors(rng):
    with pytest.raises(ValueError, match="zero"):
        si_sdr(np.ones(5), np.zeros(5))
    with pytest.raises(ValueError):
        si_sdr(np.ones(5), np.ones(6))
    with pytest.raises(ValueError):
        align_and_eval(np.ones((2, 5)), np.ones((3, 5)))
    with pytest.raises(ValueError, match="refused"):
        align_and_eval(rng.standard_normal((7, 5)), rng.standard_normal((7, 5)))
    with pytest.raises(ValueError):
        sdr_filtered(np.ones(5), np.ones(5), taps=0)
