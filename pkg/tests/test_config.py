import json

import numpy as np
import pytest

from arraydps.acoustics import SceneSpec, make_fixture, save_fixture
from arraydps.config import ConfigError, RunConfig, build_denoiser, load_config
from arraydps.prior import GaussianMixtureDenoiser, GaussianShrinkageDenoiser, OracleDenoiser

FULL = {
    "method": "arraydps",
    "seed": 3,
    "stft": {"fft_size": 256, "hop_size": 32},
    "sampler": {"n_steps": 20, "s_churn": 0},
    "guidance": {"xi": 1.5, "n_ref": 10, "n_fg": 5, "lambda": 0.5},
    "fcp": {"past_taps": 4},
    "iva": {"prior": "laplace", "fft_size": 1024, "hop_size": 128},
    "denoiser": {"kind": "gaussian", "prior_variance": 0.02},
}


def test_defaults_match_published_hyperparameters():
    cfg = RunConfig()
    assert cfg.sampler.n_steps == 400 and cfg.sampler.resolved_sigma_max() == 0.8
    assert (cfg.sampler.sigma_min, cfg.sampler.rho, cfg.sampler.s_churn, cfg.sampler.s_max) == (1e-6, 10.0, 30.0, 50.0)
    assert (cfg.guidance.n_ref, cfg.guidance.n_fg, cfg.guidance.lam) == (200, 100, 1.3)
    assert (cfg.sampler.stft.fft_size, cfg.sampler.stft.hop_size) == (512, 64)
    assert (cfg.iva.stft.fft_size, cfg.iva.stft.hop_size, cfg.iva.iterations, cfg.iva.prior) == (2048, 256, 100, "gauss")
    assert cfg.guidance.fcp.eps == 1e-3


def test_full_document_round_trip():
    cfg = RunConfig.from_dict(FULL)
    assert cfg.seed == 3 and cfg.sampler.n_steps == 20 and cfg.sampler.s_churn == 0
    assert cfg.guidance.lam == 0.5 and cfg.guidance.xi == 1.5 and cfg.guidance.fcp.past_taps == 4
    assert cfg.sampler.stft.fft_size == 256 and cfg.sampler.iva.stft.fft_size == 1024
    assert cfg.iva.prior == "laplace"
    assert isinstance(build_denoiser(cfg, 2, 100), GaussianShrinkageDenoiser)


@pytest.mark.parametrize("section", ["stft", "sampler", "guidance", "fcp", "denoiser", "iva"])
def test_missing_section_is_named(section):
    doc = {k: v for k, v in FULL.items() if k != section}
    with pytest.raises(ConfigError, match=f"missing config section '{section}'"):
        RunConfig.from_dict(doc)


def test_iva_method_needs_only_iva_section():
    assert RunConfig.from_dict({"method": "iva", "iva": {}}).method == "iva"
    with pytest.raises(ConfigError, match="'iva'"):
        RunConfig.from_dict({"method": "iva"})


def test_iva_section_optional_without_iva_init():
    doc = {k: v for k, v in FULL.items() if k != "iva"}
    doc["sampler"] = {"n_steps": 20, "iva_init": False}
    assert not RunConfig.from_dict(doc).sampler.iva_init


@pytest.mark.parametrize(
    "patch, match",
    [
        ({"colour": 1}, "unknown"),
        ({"sampler": {"n_step": 5}}, "unknown"),
        ({"guidance": {"n_ref": 30}}, "n_steps"),
        ({"method": "nmf"}, "method"),
        ({"seed": True}, "seed"),
        ({"n_samples": 0}, "n_samples"),
        ({"stft": {"fft_size": 300}}, "power of two|power of 2"),
        ({"denoiser": {"kind": "unet"}}, "kind"),
        ({"denoiser": {"kind": "gmm", "weights": [1]}}, "gmm"),
        ({"denoiser": {"kind": "oracle"}}, "fixture"),
        ({"denoiser": {"kind": "gaussian", "variance": 1}}, "unknown"),
        ({"fcp": []}, "object"),
    ],
)
def test_invalid_documents(patch, match):
    with pytest.raises(ConfigError, match=match):
        RunConfig.from_dict({**FULL, **patch})


def test_load_config_and_relative_paths(tmp_path):
    fx = make_fixture(SceneSpec(n_sources=2, n_mics=2, length=1000, rir_length=100, rng_seed=1))
    save_fixture(fx, tmp_path / "fx")
    doc = {**FULL, "denoiser": {"kind": "oracle", "fixture": "fx", "target": "reference", "pull": "full"}}
    (tmp_path / "run.json").write_text(json.dumps(doc))
    cfg = load_config(tmp_path / "run.json")
    D = build_denoiser(cfg, 2, 1000)
    assert isinstance(D, OracleDenoiser) and np.isinf(D.pull)
    assert np.allclose(D.targets, fx.reference_images, atol=1e-6)
    with pytest.raises(ConfigError, match="shape"):
        build_denoiser(cfg, 3, 1000)
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(tmp_path / "bad.json")


def test_gmm_denoiser_and_overrides():
    cfg = RunConfig.from_dict({**FULL, "denoiser": {"kind": "gmm", "weights": [1, 1], "means": [0, 0], "variances": [0.1, 0.2]}})
    assert isinstance(build_denoiser(cfg, 2, 10), GaussianMixtureDenoiser)
    cfg.with_overrides(method="iva", seed=9, n_samples=4)
    assert (cfg.method, cfg.seed, cfg.n_samples) == ("iva", 9, 4)
    with pytest.raises(ConfigError):
        cfg.with_overrides(n_samples=0)
