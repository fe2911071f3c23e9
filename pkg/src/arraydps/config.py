"""JSON run configuration for the command-line front end.

A document looks like::

    {
      "method": "arraydps",
      "seed": 0,
      "n_samples": 1,
      "sample_rate": 8000,
      "stft": {"fft_size": 512, "hop_size": 64},
      "sampler": {"n_steps": 400, "s_churn": 30, "iva_init": true},
      "guidance": {"xi": 2.0, "n_ref": 200, "n_fg": 100, "lambda": 1.3},
      "fcp": {"future_taps": 1, "past_taps": 12},
      "iva": {"prior": "gauss", "iterations": 100},
      "denoiser": {"kind": "gaussian", "prior_variance": 0.01}
    }

Every section the chosen method uses must be present (``{}`` keeps all of
its defaults); unknown keys are rejected anywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .dsp import DEFAULT_SAMPLE_RATE, StftConfig
from .fcp import FcpConfig
from .iva import IvaConfig
from .sampler import GuidanceConfig, SamplerConfig

__all__ = ["ConfigError", "RunConfig", "load_config", "build_denoiser", "DENOISER_KINDS"]

METHODS = ("arraydps", "iva")
DENOISER_KINDS = ("gaussian", "gmm", "oracle", "onnx")

_TOP_KEYS = {"method", "seed", "n_samples", "sample_rate", "stft", "sampler", "guidance", "fcp", "iva", "denoiser"}
_SECTION_KEYS = {
    "stft": {"fft_size", "hop_size"},
    "sampler": {"n_steps", "sigma_max", "sigma_min", "rho", "s_churn", "s_min", "s_max", "s_noise", "iva_init"},
    "guidance": {"xi", "n_ref", "n_fg", "lambda"},
    "fcp": {"future_taps", "past_taps", "eps", "diag_load"},
    "iva": {"prior", "iterations", "fft_size", "hop_size"},
}
_DENOISER_KEYS = {
    "gaussian": {"prior_variance"},
    "gmm": {"weights", "means", "variances"},
    "oracle": {"fixture", "target", "pull", "sigma_floor"},
    "onnx": {"model", "vjp_model", "length_multiple"},
}


class ConfigError(ValueError):
    pass


def _check_keys(where: str, d, allowed: set) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"section '{where}' must be a JSON object")
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in '{where}': {', '.join(unknown)}")
    return d


def required_sections(method: str, iva_init: bool = True) -> list[str]:
    if method == "iva":
        return ["iva"]
    sections = ["stft", "sampler", "guidance", "fcp", "denoiser"]
    return sections + ["iva"] if iva_init else sections


@dataclass
class RunConfig:
    method: str = "arraydps"
    seed: int = 0
    n_samples: int = 1
    sample_rate: int = DEFAULT_SAMPLE_RATE
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    iva: IvaConfig = field(default_factory=IvaConfig)
    denoiser: dict = field(default_factory=lambda: {"kind": "gaussian"})
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_dict(cls, doc: dict, base_dir=None) -> "RunConfig":
        """Validate a parsed document.  Relative paths resolve against ``base_dir``."""
        _check_keys("<root>", doc, _TOP_KEYS)
        method = doc.get("method", "arraydps")
        if method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {method!r}")
        sampler_sec = doc.get("sampler", {})
        iva_init = bool(sampler_sec.get("iva_init", True)) if isinstance(sampler_sec, dict) else True
        for name in required_sections(method, iva_init):
            if name not in doc:
                raise ConfigError(f"missing config section '{name}' (required for method '{method}')")
        sec = {k: _check_keys(k, doc.get(k, {}), keys) for k, keys in _SECTION_KEYS.items()}

        try:
            stft_cfg = StftConfig(**sec["stft"])
            iva_sec = dict(sec["iva"])
            iva_stft = StftConfig(iva_sec.pop("fft_size", 2048), iva_sec.pop("hop_size", 256))
            iva_cfg = IvaConfig(stft=iva_stft, **iva_sec)
            sampler = SamplerConfig(stft=stft_cfg, iva=iva_cfg, **sec["sampler"])
            g = dict(sec["guidance"])
            lam = g.pop("lambda", 1.3)
            guidance = GuidanceConfig(lam=lam, fcp=FcpConfig(**sec["fcp"]), **g)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

        denoiser = doc.get("denoiser", {"kind": "gaussian"})
        _validate_denoiser(denoiser)
        cfg = cls(
            method=method,
            seed=_int(doc.get("seed", 0), "seed", 0),
            n_samples=_int(doc.get("n_samples", 1), "n_samples", 1),
            sample_rate=_int(doc.get("sample_rate", DEFAULT_SAMPLE_RATE), "sample_rate", 1),
            sampler=sampler,
            guidance=guidance,
            iva=iva_cfg,
            denoiser=dict(denoiser),
            base_dir=Path(base_dir) if base_dir is not None else Path.cwd(),
        )
        cfg.check_steps()
        return cfg

    def check_steps(self) -> None:
        n = self.sampler.n_steps
        if self.guidance.n_ref > n or self.guidance.n_fg > n:
            raise ConfigError(f"guidance n_ref/n_fg must not exceed sampler n_steps={n}")

    def with_overrides(self, method=None, seed=None, n_samples=None) -> "RunConfig":
        if method is not None:
            if method not in METHODS:
                raise ConfigError(f"method must be one of {METHODS}, got {method!r}")
            self.method = method
        if seed is not None:
            self.seed = int(seed)
        if n_samples is not None:
            self.n_samples = _int(n_samples, "n_samples", 1)
        return self

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p


def _int(v, name: str, lo: int) -> int:
    if isinstance(v, bool) or not isinstance(v, int) or v < lo:
        raise ConfigError(f"'{name}' must be an integer >= {lo}, got {v!r}")
    return v


def _validate_denoiser(d) -> None:
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigError("section 'denoiser' must be an object with a 'kind'")
    kind = d["kind"]
    if kind not in DENOISER_KINDS:
        raise ConfigError(f"denoiser kind must be one of {DENOISER_KINDS}, got {kind!r}")
    _check_keys("denoiser", d, _DENOISER_KEYS[kind] | {"kind"})
    if kind == "oracle" and "fixture" not in d:
        raise ConfigError("oracle denoiser needs 'fixture' (a fixture directory)")
    if kind == "onnx" and "model" not in d:
        raise ConfigError("onnx denoiser needs 'model'")
    if kind == "gmm" and not {"weights", "means", "variances"} <= set(d):
        raise ConfigError("gmm denoiser needs 'weights', 'means' and 'variances'")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return RunConfig.from_dict(doc, base_dir=path.parent)


def build_denoiser(cfg: RunConfig, n_sources: int, length: int):
    """Instantiate the configured denoiser for a ``(n_sources, length)`` state."""
    from . import prior
    from .acoustics import load_fixture

    d = cfg.denoiser
    kind = d["kind"]
    if kind == "gaussian":
        return prior.GaussianShrinkageDenoiser(d.get("prior_variance", 0.01))
    if kind == "gmm":
        return prior.GaussianMixtureDenoiser(d["weights"], d["means"], d["variances"])
    if kind == "onnx":
        vjp = d.get("vjp_model")
        return prior.ExternalDenoiser(
            cfg.resolve(d["model"]),
            cfg.resolve(vjp) if vjp else None,
            d.get("length_multiple", 1),
        )
    fx = load_fixture(cfg.resolve(d["fixture"]))
    which = d.get("target", "dry")
    if which == "dry":
        targets = fx.dry_sources
    elif which == "reference":
        targets = fx.reference_images
    else:
        raise ConfigError(f"oracle target must be 'dry' or 'reference', got {which!r}")
    if targets.shape != (n_sources, length):
        raise ConfigError(
            f"oracle fixture has targets of shape {targets.shape}, need {(n_sources, length)}"
        )
    return prior.OracleDenoiser(targets, d.get("pull", 1.0), d.get("sigma_floor", 1e-3))
