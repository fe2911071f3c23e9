"""Forward convolutive prediction: multi-frame STFT filters by weighted least squares.

A filter ``G`` maps a source spectrogram ``S`` to an image spectrogram by
convolution along frames, independently per frequency::

    (G * S)(l, f) = sum_{j=-F}^{P} G(j, f) S(l - j, f)

``F`` future and ``P`` past taps.  Taps are stored with the ``j`` axis last,
at position ``j + F``.  Frames outside ``[0, L)`` count as zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "FcpConfig",
    "FilterTaps",
    "FcpError",
    "DegenerateRegressorError",
    "fcp_weights",
    "fcp_estimate",
    "apply_filter",
    "apply_filter_adjoint",
    "mix_filters",
    "mix_filters_adjoint",
    "weighted_residual",
]


class FcpError(ValueError):
    pass


class DegenerateRegressorError(FcpError):
    """The source estimate carries no energy, so no filter is identifiable."""


@dataclass(frozen=True)
class FcpConfig:
    """``diag_load`` is relative: the ridge added at frequency ``f`` is
    ``diag_load * trace(M_f) / n_taps`` where ``M_f`` is the normal matrix."""

    future_taps: int = 1
    past_taps: int = 12
    eps: float = 1e-3
    diag_load: float = 1e-5

    def __post_init__(self):
        if self.future_taps < 0 or self.past_taps < 0:
            raise ValueError("tap counts must be non-negative")
        if not self.eps > 0:
            raise ValueError("eps must be > 0")
        if self.diag_load < 0:
            raise ValueError("diag_load must be >= 0")

    @property
    def n_taps(self) -> int:
        return self.future_taps + self.past_taps + 1


@dataclass(frozen=True)
class FilterTaps:
    """Complex taps of shape ``(..., n_bins, F + P + 1)``."""

    taps: np.ndarray
    future_taps: int
    past_taps: int

    def __post_init__(self):
        if self.taps.shape[-1] != self.future_taps + self.past_taps + 1:
            raise ValueError(
                f"last axis has {self.taps.shape[-1]} taps, expected "
                f"{self.future_taps + self.past_taps + 1}"
            )
        if not np.all(np.isfinite(self.taps)):
            raise ValueError("filter taps must be finite")

    @property
    def offsets(self) -> range:
        return range(-self.future_taps, self.past_taps + 1)

    def __getitem__(self, idx) -> "FilterTaps":
        return FilterTaps(self.taps[idx], self.future_taps, self.past_taps)

    @classmethod
    def identity(cls, n_bins: int, future_taps: int = 0, past_taps: int = 0) -> "FilterTaps":
        taps = np.zeros((n_bins, future_taps + past_taps + 1), dtype=complex)
        taps[:, future_taps] = 1.0
        return cls(taps, future_taps, past_taps)


def _regressors(S: np.ndarray, future: int, past: int) -> np.ndarray:
    """Design matrices ``A[..., f, l, j + F] = S[..., l - j, f]``, shape ``(..., n_bins, L, n_taps)``."""
    S = np.swapaxes(S, -1, -2)
    pad = [(0, 0)] * (S.ndim - 1) + [(past, future)]
    win = sliding_window_view(np.pad(S, pad), future + past + 1, axis=-1)
    return win[..., ::-1]


def _correlators(R: np.ndarray, future: int, past: int) -> np.ndarray:
    """``B[..., f, l, j + F] = R[..., l + j, f]``, the adjoint counterpart of :func:`_regressors`."""
    R = np.swapaxes(R, -1, -2)
    pad = [(0, 0)] * (R.ndim - 1) + [(future, past)]
    return sliding_window_view(np.pad(R, pad), future + past + 1, axis=-1)


def fcp_weights(X_all: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """Per-bin weights ``mean_c |X_c|^2 + eps * max(mean_c |X_c|^2)``.

    ``X_all`` is ``(C, L, n_bins)`` or a single ``(L, n_bins)`` spectrogram.
    """
    X_all = np.asarray(X_all)
    if X_all.ndim == 2:
        X_all = X_all[None]
    power = np.mean(np.abs(X_all) ** 2, axis=0)
    peak = power.max()
    if not peak > 0:
        raise FcpError("all-zero mixture: FCP weights are degenerate")
    return power + eps * peak


def fcp_estimate(
    X: np.ndarray,
    S_hat: np.ndarray,
    weights: np.ndarray,
    cfg: FcpConfig = FcpConfig(),
) -> FilterTaps:
    """Filter minimising ``sum_l |X - G * S_hat|^2 / weights`` per frequency.

    ``X`` may carry leading target axes, e.g. ``(C, L, n_bins)``; the normal
    matrix depends only on ``S_hat`` and ``weights`` so it is factored once
    and reused for every target.
    """
    X = np.asarray(X)
    S_hat = np.asarray(S_hat)
    if X.shape[-2:] != S_hat.shape or weights.shape != S_hat.shape:
        raise ValueError(
            f"shape mismatch: X {X.shape}, S_hat {S_hat.shape}, weights {weights.shape}"
        )
    if np.any(weights <= 0):
        raise ValueError("weights must be strictly positive")
    if not np.any(S_hat):
        raise DegenerateRegressorError("source estimate is identically zero")

    J = cfg.n_taps
    A = np.ascontiguousarray(_regressors(S_hat, cfg.future_taps, cfg.past_taps))  # (Fb, L, J)
    AwH = np.ascontiguousarray((A * (1.0 / weights.T)[:, :, None]).conj().transpose(0, 2, 1))
    M = AwH @ A  # (Fb, J, J)

    lead = X.shape[:-2]
    Xf = np.ascontiguousarray(X.reshape(-1, *X.shape[-2:]).transpose(2, 1, 0))  # (Fb, L, n_targets)
    b = AwH @ Xf  # (Fb, J, n_targets)

    trace = np.trace(M, axis1=1, axis2=2).real
    silent = trace <= 0
    if np.any(silent):
        if cfg.diag_load == 0:
            raise FcpError(
                "singular normal matrix (silent frequency band); use diag_load > 0"
            )
        M[silent] = np.eye(J)
        b[silent] = 0.0
    if cfg.diag_load > 0:
        M = M + (cfg.diag_load * trace / J)[:, None, None] * np.eye(J)
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise FcpError(
            "normal matrix is not positive definite; use diag_load > 0"
        ) from exc
    g = np.linalg.solve(M, b)  # (Fb, J, n_targets)
    taps = g.transpose(2, 0, 1).reshape(*lead, S_hat.shape[-1], J)
    return FilterTaps(taps, cfg.future_taps, cfg.past_taps)


def _out_shape(G: FilterTaps, S: np.ndarray) -> tuple[int, ...]:
    return np.broadcast_shapes(G.taps.shape[:-2] + S.shape[-2:], S.shape)


def apply_filter(G: FilterTaps, S: np.ndarray) -> np.ndarray:
    """Frame-axis convolution ``sum_j G(j, f) S(l - j, f)``; broadcasts leading axes."""
    shape = _out_shape(G, S)
    A = _regressors(np.asarray(S, dtype=complex), G.future_taps, G.past_taps)
    out = (A @ G.taps[..., None])[..., 0]
    return np.broadcast_to(np.swapaxes(out, -1, -2), shape).copy()


def apply_filter_adjoint(G: FilterTaps, R: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`apply_filter` in ``S`` (frame correlation with conjugate taps)."""
    shape = _out_shape(G, R)
    B = _correlators(np.asarray(R, dtype=complex), G.future_taps, G.past_taps)
    out = (B @ np.conj(G.taps)[..., None])[..., 0]
    return np.broadcast_to(np.swapaxes(out, -1, -2), shape).copy()


def mix_filters(G: FilterTaps, S: np.ndarray) -> np.ndarray:
    """``sum_k G[k, c] * S[k]`` for taps ``(K, C, n_bins, J)`` and sources ``(K, L, n_bins)``.

    Returns ``(C, L, n_bins)``; equivalent to ``apply_filter(G, S[:, None]).sum(0)``.
    """
    K, C, Fb, J = G.taps.shape
    A = _regressors(np.asarray(S, dtype=complex), G.future_taps, G.past_taps)  # (K, Fb, L, J)
    A = A.transpose(1, 2, 0, 3).reshape(Fb, -1, K * J)
    taps = G.taps.transpose(2, 0, 3, 1).reshape(Fb, K * J, C)
    return (A @ taps).transpose(2, 1, 0)


def mix_filters_adjoint(G: FilterTaps, R: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`mix_filters`: ``(C, L, n_bins)`` residuals to ``(K, L, n_bins)``."""
    K, C, Fb, J = G.taps.shape
    B = _correlators(np.asarray(R, dtype=complex), G.future_taps, G.past_taps)  # (C, Fb, L, J)
    B = B.transpose(1, 2, 0, 3).reshape(Fb, -1, C * J)
    taps = np.conj(G.taps).transpose(2, 1, 3, 0).reshape(Fb, C * J, K)
    return (B @ taps).transpose(2, 1, 0)


def weighted_residual(X: np.ndarray, G: FilterTaps, S: np.ndarray, weights: np.ndarray) -> float:
    """The FCP objective ``sum |X - G * S|^2 / weights``."""
    return float(np.sum(np.abs(X - apply_filter(G, S)) ** 2 / weights))
