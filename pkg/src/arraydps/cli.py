"""``arraydps`` command line: simulate fixtures, separate mixtures, evaluate estimates.

Inputs to ``separate`` may be a WAV file, a fixture directory (its
``mixture.wav`` is used) or a batch directory written by
``simulate --n-fixtures``.  An oracle denoiser may name ``"@input"`` as its
fixture to use the fixture being separated.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .acoustics import SceneSpec, load_fixture, make_fixture, save_fixture
from .config import ConfigError, RunConfig, build_denoiser, load_config
from .iva import iva_separate_waveform
from .metrics import align_and_eval, recon_snr, si_sdr
from .report import write_report
from .sampler import separate, separate_best_of
from .wavio import WavFormatError, read_wav, write_wav

log = logging.getLogger("arraydps")

EXIT_INVALID = 2
EXIT_FAILED = 1


class CliError(Exception):
    pass


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise CliError(f"{path}: not found") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc})") from exc


# -- simulate ----------------------------------------------------------------

def cmd_simulate(args) -> int:
    doc = _read_json(args.scene)
    try:
        spec = SceneSpec.from_json(doc)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid scene spec: {exc}") from exc
    if args.seed is not None:
        spec = SceneSpec.from_json({**spec.to_json(), "rng_seed": args.seed})
    out = Path(args.out_dir)
    if args.n_fixtures == 1:
        manifest = save_fixture(make_fixture(spec), out)
        log.info("wrote fixture to %s", out)
        return 0 if manifest["residual_check"]["passed"] else EXIT_FAILED
    items = []
    ok = True
    for i in range(args.n_fixtures):
        item_spec = SceneSpec.from_json({**spec.to_json(), "rng_seed": spec.rng_seed + i})
        name = f"fixture_{i:03d}"
        manifest = save_fixture(make_fixture(item_spec), out / name)
        ok &= manifest["residual_check"]["passed"]
        items.append({"name": name, "seed": item_spec.rng_seed})
    _dump(out / "batch.json", {"scene": spec.to_json(), "items": items})
    log.info("wrote %d fixtures to %s", len(items), out)
    return 0 if ok else EXIT_FAILED


# -- separate ----------------------------------------------------------------

def _inputs(path: Path) -> list[tuple[str, Path, Path | None]]:
    """``(name, mixture_wav, fixture_dir)`` for every item under ``path``."""
    if path.is_file():
        return [(path.stem, path, None)]
    if (path / "batch.json").exists():
        batch = _read_json(path / "batch.json")
        return [(it["name"], path / it["name"] / "mixture.wav", path / it["name"]) for it in batch["items"]]
    if (path / "manifest.json").exists():
        return [(path.name, path / "mixture.wav", path)]
    raise CliError(f"{path}: not a WAV file, fixture directory or batch directory")


def _load_mixture(wav: Path, cfg: RunConfig, K: int) -> np.ndarray:
    try:
        w = read_wav(wav)
    except (OSError, WavFormatError) as exc:
        raise CliError(f"{wav}: {exc}") from exc
    if w.sample_rate != cfg.sample_rate:
        raise CliError(f"{wav}: sample rate {w.sample_rate} Hz, expected {cfg.sample_rate} Hz")
    C = w.samples.shape[0]
    if (cfg.method == "iva" or cfg.sampler.iva_init) and not 2 <= K <= C:
        raise CliError(f"{wav}: IVA needs 2 <= sources <= channels, got {K} sources and {C} channel(s)")
    return w.samples


def _uses_input_oracle(cfg: RunConfig) -> bool:
    return cfg.method == "arraydps" and cfg.denoiser["kind"] == "oracle" and cfg.denoiser["fixture"] == "@input"


def _run_one(x, K, cfg: RunConfig, fixture: Path | None, trace: bool):
    if cfg.method == "iva":
        images = iva_separate_waveform(x, cfg.iva, K)
        return {"image": images}, {"method": "iva", "recon_snr_db": recon_snr(x[0], images)}, None
    if _uses_input_oracle(cfg):
        cfg = RunConfig(**{**cfg.__dict__, "denoiser": {**cfg.denoiser, "fixture": str(fixture.resolve())}})
    denoiser = build_denoiser(cfg, K, x.shape[-1])
    if cfg.n_samples > 1:
        res, snrs = separate_best_of(x, K, denoiser, cfg.sampler, cfg.guidance, cfg.seed, cfg.n_samples, trace)
    else:
        res = separate(x, K, denoiser, cfg.sampler, cfg.guidance, cfg.seed, trace)
        snrs = [res.recon_snr_db]
    result = {
        "method": "arraydps",
        "recon_snr_db": res.recon_snr_db,
        "selected_seed": res.seed,
        "sample_recon_snr_db": snrs,
    }
    return {"image": res.ref_images, "virtual": res.virtual_sources}, result, (res.trace_json() if trace else None)


def cmd_separate(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg.with_overrides(method=args.method, seed=args.seed, n_samples=args.n_samples)
    if cfg.method == "arraydps" and cfg.denoiser["kind"] == "oracle" and cfg.denoiser["fixture"] != "@input":
        if not cfg.resolve(cfg.denoiser["fixture"]).is_dir():
            raise CliError(f"oracle fixture directory {cfg.denoiser['fixture']} not found")
    K = args.n_sources
    if K < 1:
        raise CliError("--n-sources must be >= 1")
    items = _inputs(Path(args.input))
    # validate every input before writing anything
    mixtures = [_load_mixture(wav, cfg, K) for _, wav, _ in items]
    if _uses_input_oracle(cfg) and any(fx is None for _, _, fx in items):
        raise CliError("oracle fixture '@input' needs a fixture or batch directory as input")

    out = Path(args.out_dir)
    batch = len(items) > 1 or (Path(args.input) / "batch.json").exists()
    for (name, _, fixture), x in zip(items, mixtures):
        dest = out / name if batch else out
        dest.mkdir(parents=True, exist_ok=True)
        signals, result, trace = _run_one(x, K, cfg, fixture, args.trace)
        for kind, arr in signals.items():
            for k in range(K):
                write_wav(dest / f"{kind}_{k}.wav", arr[k], cfg.sample_rate)
        result.update({"n_sources": K, "seed": cfg.seed, "n_samples": cfg.n_samples})
        _dump(dest / "result.json", result)
        if trace is not None:
            _dump(dest / "trace.json", trace)
        log.info("%s: recon SNR %.2f dB", name, result["recon_snr_db"])
    if batch:
        _dump(out / "batch.json", {"items": [{"name": n} for n, _, _ in items]})
    return 0


# -- evaluate ----------------------------------------------------------------

def _estimates(est_dir: Path) -> np.ndarray:
    files = sorted(est_dir.glob("image_*.wav"), key=lambda p: int(p.stem.split("_")[1]))
    if not files:
        raise CliError(f"{est_dir}: no image_*.wav estimates")
    return np.stack([read_wav(f).samples[0] for f in files])


def _evaluate_item(est_dir: Path, fixture_dir: Path, sdr_taps: int) -> dict:
    fx = load_fixture(fixture_dir)
    est = _estimates(est_dir)
    ref = fx.reference_images
    if est.shape != ref.shape:
        raise CliError(f"{est_dir}: estimates {est.shape} do not match fixture references {ref.shape}")
    rep = align_and_eval(est, ref, with_sdr=True, sdr_taps=sdr_taps)
    rep.recon_snr_db = recon_snr(fx.mixtures[0], est)
    rep.extra["mixture_si_sdr_db"] = [si_sdr(fx.mixtures[0], r) for r in ref]
    return rep.to_json()


def _median(vals):
    vals = [v for v in vals if v is not None]
    return float(np.median(vals)) if vals else None


def cmd_evaluate(args) -> int:
    est_root, fx_root = Path(args.est_dir), Path(args.fixture_dir)
    if (fx_root / "batch.json").exists():
        names = [it["name"] for it in _read_json(fx_root / "batch.json")["items"]]
        pairs = [(n, est_root / n, fx_root / n) for n in names]
    elif (fx_root / "manifest.json").exists():
        pairs = [(fx_root.name, est_root, fx_root)]
    else:
        raise CliError(f"{fx_root}: no manifest.json or batch.json")
    for _, e, _ in pairs:
        if not e.is_dir():
            raise CliError(f"{e}: estimate directory missing")

    items = [(n, _evaluate_item(e, f, args.sdr_taps)) for n, e, f in pairs]
    per_source = [m for _, r in items for m in r["per_source"]]
    report = {
        "items": {n: r for n, r in items},
        "aggregate": {
            "n_items": len(items),
            "median_si_sdr_db": _median([m["si_sdr_db"] for m in per_source]),
            "median_sdr_db": _median([m["sdr_db"] for m in per_source]),
            "median_mean_si_sdr_db": _median([r["mean_si_sdr_db"] for _, r in items]),
            "median_recon_snr_db": _median([r["recon_snr_db"] for _, r in items]),
        },
    }
    out = Path(args.out) if args.out else est_root / "report.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    _dump(out, report)
    if args.report_dir:
        traces = []
        for n, e, _ in pairs:
            if (e / "trace.json").exists():
                traces.append((n, _read_json(e / "trace.json")))
        write_report(args.report_dir, items, traces)
    agg = report["aggregate"]
    log.info("%d item(s): median SI-SDR %.2f dB", agg["n_items"], agg["median_si_sdr_db"])
    return 0


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="arraydps", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write synthetic fixture(s)")
    s.add_argument("scene", help="JSON scene spec")
    s.add_argument("out_dir")
    s.add_argument("--seed", type=int, help="override the spec's rng_seed")
    s.add_argument("--n-fixtures", type=int, default=1, help="write a batch with consecutive seeds")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("separate", help="separate a mixture, fixture or batch")
    s.add_argument("input")
    s.add_argument("out_dir")
    s.add_argument("-k", "--n-sources", type=int, required=True)
    s.add_argument("--config", help="JSON run config (defaults if omitted)")
    s.add_argument("--method", choices=("arraydps", "iva"))
    s.add_argument("--seed", type=int)
    s.add_argument("--n-samples", type=int, help="best-of-N selection by mixture fit")
    s.add_argument("--trace", action="store_true", help="write a per-step trace.json")
    s.set_defaults(func=cmd_separate)

    s = sub.add_parser("evaluate", help="score estimates against fixture references")
    s.add_argument("est_dir")
    s.add_argument("fixture_dir")
    s.add_argument("--out", help="report JSON path (default: EST_DIR/report.json)")
    s.add_argument("--report-dir", help="also write metrics.csv and figures here")
    s.add_argument("--sdr-taps", type=int, default=512)
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if getattr(args, "n_fixtures", 1) < 1:
            raise CliError("--n-fixtures must be >= 1")
        return args.func(args)
    except (CliError, ConfigError) as exc:
        print(f"arraydps: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, RuntimeError) as exc:
        print(f"arraydps: failed: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
