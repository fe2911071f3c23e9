"""CSV tables and figures for ``arraydps evaluate --report-dir``."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["write_report"]

# fixed metadata keeps the PNG bytes reproducible
_PNG_META = {"Software": None}


def _fmt(v) -> str:
    return "" if v is None else f"{v:.6f}"


def _write_csv(path: Path, items: list[tuple[str, dict]]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["item", "source", "estimate", "si_sdr_db", "sdr_db", "recon_snr_db"])
        for name, rep in items:
            for k, m in enumerate(rep["per_source"]):
                w.writerow([name, k, rep["permutation"][k], _fmt(m["si_sdr_db"]), _fmt(m["sdr_db"]), _fmt(rep.get("recon_snr_db"))])


def _bar_figure(path: Path, items: list[tuple[str, dict]]) -> None:
    K = max(len(rep["per_source"]) for _, rep in items)
    x = np.arange(len(items))
    width = 0.8 / K
    fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(items) + 2), 3.2))
    for k in range(K):
        vals = [rep["per_source"][k]["si_sdr_db"] if k < len(rep["per_source"]) else np.nan for _, rep in items]
        ax.bar(x + (k - (K - 1) / 2) * width, vals, width, label=f"source {k}")
    ax.set_xticks(x)
    ax.set_xticklabels([n for n, _ in items], rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("SI-SDR (dB)")
    ax.axhline(0.0, color="k", lw=0.5)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def _trace_figure(path: Path, traces: list[tuple[str, dict]]) -> None:
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(5.0, 4.5), sharex=True)
    for name, tr in traces:
        steps = [r["step"] for r in tr["steps"]]
        ax0.semilogy(steps, [np.nan if r["residual_norm"] is None else max(r["residual_norm"], 1e-12) for r in tr["steps"]], label=name, lw=0.8)
        ax1.semilogy(steps, [max(r["guidance_norm"], 1e-12) for r in tr["steps"]], lw=0.8)
    ax0.set_ylabel("mixture residual")
    ax1.set_ylabel("guidance norm")
    ax1.set_xlabel("step")
    if len(traces) <= 8:
        ax0.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def write_report(out_dir, items: list[tuple[str, dict]], traces: list[tuple[str, dict]] | None = None) -> list[Path]:
    """Write ``metrics.csv``, ``si_sdr.png`` and, given traces, ``trace.png``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "metrics.csv", out / "si_sdr.png"]
    _write_csv(written[0], items)
    _bar_figure(written[1], items)
    traces = [t for t in (traces or []) if t[1].get("steps")]
    if traces:
        written.append(out / "trace.png")
        _trace_figure(written[-1], traces)
    return written
