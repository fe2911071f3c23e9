"""Denoisers ``D(s, sigma)`` with vector-Jacobian products, and Tweedie scores.

A denoiser receives a ``(K, T)`` batch whose rows are independent sources
(a 1-D array is treated as a single row) and must provide:

* ``apply(s, sigma)`` -- the posterior-mean estimate of the clean signal;
* ``vjp(s, sigma, cotangent)`` -- ``J^T cotangent`` with ``J = dD/ds`` at ``s``.

The sampler uses nothing else.  The analytic denoisers here have exact
VJPs, so the guided sampler can be verified without any trained network.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

__all__ = [
    "Denoiser",
    "GaussianShrinkageDenoiser",
    "GaussianMixtureDenoiser",
    "EmpiricalDenoiser",
    "OracleDenoiser",
    "ExternalDenoiser",
    "tweedie_score",
    "vjp_check",
]


@runtime_checkable
class Denoiser(Protocol):
    def apply(self, s: np.ndarray, sigma: float) -> np.ndarray: ...

    def vjp(self, s: np.ndarray, sigma: float, cotangent: np.ndarray) -> np.ndarray: ...


class GaussianShrinkageDenoiser:
    """Exact denoiser for an i.i.d. ``N(0, prior_variance)`` signal prior."""

    def __init__(self, prior_variance: float = 0.01):
        if not prior_variance > 0:
            raise ValueError("prior_variance must be > 0")
        self.prior_variance = float(prior_variance)

    def gain(self, sigma: float) -> float:
        return self.prior_variance / (self.prior_variance + sigma**2)

    def apply(self, s, sigma):
        return self.gain(sigma) * np.asarray(s, dtype=float)

    def vjp(self, s, sigma, cotangent):
        return self.gain(sigma) * np.asarray(cotangent, dtype=float)

    def score(self, s, sigma):
        """Closed-form score of the prior smoothed by ``N(0, sigma^2)``."""
        return -np.asarray(s, dtype=float) / (self.prior_variance + sigma**2)


class GaussianMixtureDenoiser:
    """Exact denoiser for an i.i.d. scalar Gaussian-mixture prior.

    Non-linear, but every quantity is closed form, which makes it a useful
    check of the score and VJP plumbing.
    """

    def __init__(self, weights: Sequence[float], means: Sequence[float], variances: Sequence[float]):
        self.weights = np.asarray(weights, dtype=float)
        self.means = np.asarray(means, dtype=float)
        self.variances = np.asarray(variances, dtype=float)
        if not (self.weights.shape == self.means.shape == self.variances.shape):
            raise ValueError("weights, means and variances must have equal length")
        if np.any(self.weights <= 0) or np.any(self.variances <= 0):
            raise ValueError("mixture weights and variances must be positive")
        self.weights = self.weights / self.weights.sum()

    def _parts(self, s, sigma):
        s = np.asarray(s, dtype=float)[..., None]
        var = self.variances + sigma**2
        logp = np.log(self.weights) - 0.5 * np.log(2 * np.pi * var) - 0.5 * (s - self.means) ** 2 / var
        resp = np.exp(logp - logp.max(axis=-1, keepdims=True))
        resp /= resp.sum(axis=-1, keepdims=True)
        return s, var, logp, resp

    def log_density(self, s, sigma):
        """Log-density of the smoothed prior, summed over all samples."""
        _, _, logp, _ = self._parts(s, sigma)
        m = logp.max(axis=-1, keepdims=True)
        return float(np.sum(m[..., 0] + np.log(np.exp(logp - m).sum(axis=-1))))

    def score(self, s, sigma):
        s_, var, _, resp = self._parts(s, sigma)
        return np.sum(resp * (self.means - s_) / var, axis=-1)

    def apply(self, s, sigma):
        return np.asarray(s, dtype=float) + sigma**2 * self.score(s, sigma)

    def vjp(self, s, sigma, cotangent):
        s_, var, _, resp = self._parts(s, sigma)
        g = (self.means - s_) / var
        score = np.sum(resp * g, axis=-1)
        dscore = np.sum(resp * (g**2 - 1.0 / var), axis=-1) - score**2
        # diagonal Jacobian
        return (1.0 + sigma**2 * dscore) * np.asarray(cotangent, dtype=float)


class EmpiricalDenoiser:
    """Exact denoiser for a prior spread uniformly over a finite set of waveforms.

    Every row is denoised against the same ``(M, T)`` candidate set:
    ``D(s) = sum_m r_m t_m`` with ``r = softmax(-||s - t_m||^2 / (2 sigma^2))``.
    The Jacobian is the posterior covariance over ``sigma^2``, hence symmetric.
    """

    def __init__(self, candidates):
        self.candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
        if self.candidates.shape[0] < 1:
            raise ValueError("need at least one candidate")

    def _resp(self, s, sigma):
        s2 = np.atleast_2d(s)
        if s2.shape[-1] != self.candidates.shape[1]:
            raise ValueError(f"input length {s2.shape[-1]} != candidate length {self.candidates.shape[1]}")
        d2 = (
            np.sum(s2**2, axis=1)[:, None]
            - 2.0 * s2 @ self.candidates.T
            + np.sum(self.candidates**2, axis=1)[None, :]
        )
        logits = -d2 / (2.0 * sigma**2)
        logits -= logits.max(axis=1, keepdims=True)
        r = np.exp(logits)
        return r / r.sum(axis=1, keepdims=True)

    def apply(self, s, sigma):
        s = np.asarray(s, dtype=float)
        return (self._resp(s, sigma) @ self.candidates).reshape(s.shape)

    def vjp(self, s, sigma, cotangent):
        s = np.asarray(s, dtype=float)
        r = self._resp(s, sigma)
        D = r @ self.candidates
        u = np.atleast_2d(np.asarray(cotangent, dtype=float))
        proj = u @ self.candidates.T - np.sum(u * D, axis=1, keepdims=True)  # (t_m - D) . u
        w = r * proj
        return ((w @ self.candidates - w.sum(axis=1, keepdims=True) * D) / sigma**2).reshape(s.shape)


class OracleDenoiser:
    """Pulls each row toward its ground-truth target.

    ``D(s, sigma) = target + w(sigma) (s - target)`` with
    ``w(sigma) = (sigma_floor / (sigma + sigma_floor)) ** pull``.  ``pull=1`` is
    the partial pull; ``pull="full"`` (infinite exponent) returns the target
    for any input.
    """

    def __init__(self, targets, pull: float | str = 1.0, sigma_floor: float = 1e-3):
        self.targets = np.atleast_2d(np.asarray(targets, dtype=float))
        if pull == "full":
            pull = math.inf
        elif pull == "partial":
            pull = 1.0
        self.pull = float(pull)
        if not self.pull >= 0:
            raise ValueError("pull exponent must be >= 0")
        self.sigma_floor = float(sigma_floor)

    def blend(self, sigma: float) -> float:
        return (self.sigma_floor / (sigma + self.sigma_floor)) ** self.pull

    def _target_for(self, s: np.ndarray) -> np.ndarray:
        t = self.targets if s.ndim == 2 else self.targets[0]
        if t.shape != s.shape:
            raise ValueError(f"oracle targets have shape {t.shape}, input has {s.shape}")
        return t

    def apply(self, s, sigma):
        s = np.asarray(s, dtype=float)
        t = self._target_for(s)
        return t + self.blend(sigma) * (s - t)

    def vjp(self, s, sigma, cotangent):
        self._target_for(np.asarray(s))
        return self.blend(sigma) * np.asarray(cotangent, dtype=float)


class ExternalDenoiser:
    """Denoiser backed by an ONNX model (requires ``onnxruntime``).

    The model takes a ``(batch, T)`` float32 waveform and a noise level (a
    float32 tensor with one element) and returns the denoised waveform.
    ONNX Runtime has no autodiff, so an exact VJP needs a second exported
    graph taking ``(waveform, sigma, cotangent)``.  Without one, the VJP falls
    back to passing the cotangent through unchanged (Jacobian treated as the
    identity), a common approximation in posterior sampling.
    """

    def __init__(self, model_path, vjp_model_path=None, length_multiple: int = 1):
        try:
            import onnxruntime as ort
        except ImportError as exc:  # pragma: no cover - depends on environment
            raise ImportError(
                "ExternalDenoiser needs onnxruntime; install the 'onnx' extra"
            ) from exc
        self.model_path = Path(model_path)
        self._session = ort.InferenceSession(str(self.model_path), providers=["CPUExecutionProvider"])
        self._vjp_session = None
        if vjp_model_path is not None:
            self._vjp_session = ort.InferenceSession(str(vjp_model_path), providers=["CPUExecutionProvider"])
        self.length_multiple = int(length_multiple)

    @property
    def exact_vjp(self) -> bool:
        return self._vjp_session is not None

    def _feeds(self, session, arrays):
        names = [i.name for i in session.get_inputs()]
        if len(names) != len(arrays):
            raise ValueError(f"model expects inputs {names}")
        return dict(zip(names, arrays))

    def _prepare(self, s):
        s = np.asarray(s, dtype=float)
        if s.shape[-1] % self.length_multiple:
            raise ValueError(
                f"input length {s.shape[-1]} is not a multiple of {self.length_multiple}"
            )
        return s, np.atleast_2d(s).astype(np.float32)

    def _sigma(self, sigma):
        return np.array([sigma], dtype=np.float32)

    def apply(self, s, sigma):
        s, batch = self._prepare(s)
        (out,) = self._session.run(None, self._feeds(self._session, [batch, self._sigma(sigma)]))
        return np.asarray(out, dtype=float).reshape(s.shape)

    def vjp(self, s, sigma, cotangent):
        s, batch = self._prepare(s)
        cot = np.asarray(cotangent, dtype=float)
        if self._vjp_session is None:
            return cot.copy()
        feeds = [batch, self._sigma(sigma), np.atleast_2d(cot).astype(np.float32)]
        (out,) = self._vjp_session.run(None, self._feeds(self._vjp_session, feeds))
        return np.asarray(out, dtype=float).reshape(s.shape)


def tweedie_score(D: Denoiser, s_tau, sigma: float) -> np.ndarray:
    """Score of the noisy marginal from a denoiser: ``(D(s, sigma) - s) / sigma^2``."""
    if not sigma > 0:
        raise ValueError("Tweedie's formula needs sigma > 0")
    s_tau = np.asarray(s_tau, dtype=float)
    return (D.apply(s_tau, sigma) - s_tau) / sigma**2


def vjp_check(
    D: Denoiser,
    s,
    sigma: float,
    n_probes: int = 4,
    step: float | None = None,
    seed: int = 0,
) -> float:
    """Worst relative mismatch between ``<u, J v>`` by central differences and ``<J^T u, v>``.

    The mismatch is relative to the larger of the two values, floored at
    ``1e-9 * ||u|| ||v||`` so a (near-)zero Jacobian does not read as an error.
    """
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    s = np.asarray(s, dtype=float)
    rng = np.random.default_rng(seed)
    if step is None:
        step = 1e-5 * max(1.0, float(np.sqrt(np.mean(s**2))))
    worst = 0.0
    for _ in range(n_probes):
        v = rng.standard_normal(s.shape)
        u = rng.standard_normal(s.shape)
        jv = (D.apply(s + step * v, sigma) - D.apply(s - step * v, sigma)) / (2.0 * step)
        fd = float(np.sum(u * jv))
        an = float(np.sum(D.vjp(s, sigma, u) * v))
        floor = 1e-9 * float(np.linalg.norm(u) * np.linalg.norm(v))
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), floor))
    return worst
