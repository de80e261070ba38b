"""Denoiser contract, condition handling and closed-form Gaussian denoisers.

A denoiser is any callable ``predict(z_t, t, cond) -> eps_hat`` returning an
array shaped like ``z_t``.  The closed-form denoisers here are exact MMSE
noise predictors for simple video distributions and serve as oracles.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .schedule import NoiseSchedule
from .tensor import DTYPE, SeededRng, ShapeError, check_video


@dataclass(frozen=True)
class ConditionPair:
    """Video condition ``c_v`` (b, c, f, h, w) and prompt embedding ``c_t`` (b, L, d).

    Either may be ``None``; a null video is an all-zero tensor and a null
    prompt is the embedding of the empty prompt when a network consumes it.
    """

    c_v: Optional[np.ndarray] = None
    c_t: Optional[np.ndarray] = None

    def without_text(self) -> "ConditionPair":
        return replace(self, c_t=None)

    def unconditional(self) -> "ConditionPair":
        return ConditionPair(None, None)

    def frames(self, start: int, stop: int) -> "ConditionPair":
        """Slice the video condition along the frame axis."""
        if self.c_v is None:
            return self
        return replace(self, c_v=np.ascontiguousarray(self.c_v[:, :, start:stop]))


Denoiser = Callable[[np.ndarray, int, ConditionPair], np.ndarray]


def condition_dropout(cond: ConditionPair, rng: SeededRng, p_v: float = 0.05, p_t: float = 0.05) -> ConditionPair:
    """Independently null the video condition with prob ``p_v`` and the prompt with ``p_t``."""
    for p in (p_v, p_t):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"dropout probability {p} outside [0, 1]")
    u_v, u_t = rng.random(2)
    c_v = None if u_v < p_v else cond.c_v
    c_t = None if u_t < p_t else cond.c_t
    return ConditionPair(c_v, c_t)


def analytic_gaussian_predict(z_t, t: int, s: NoiseSchedule, mu, sigma0: float) -> np.ndarray:
    """MMSE noise estimate when clean data is N(mu, sigma0^2 I)."""
    mu = np.broadcast_to(np.asarray(mu, dtype=np.float64), z_t.shape)
    ab = float(s.alpha_bar[t])
    num = np.sqrt(1.0 - ab) * (z_t.astype(np.float64) - np.sqrt(ab) * mu)
    return (num / (ab * sigma0**2 + 1.0 - ab)).astype(DTYPE)


class AnalyticGaussianDenoiser:
    """Closed-form denoiser for iid Gaussian data; ignores both conditions."""

    def __init__(self, schedule: NoiseSchedule, mu, sigma0: float):
        self.schedule = schedule
        self.mu = np.asarray(mu, dtype=np.float64)
        self.sigma0 = float(sigma0)

    def __call__(self, z_t, t, cond=None):
        return analytic_gaussian_predict(z_t, t, self.schedule, self.mu, self.sigma0)


def smooth_spectrum(h: int, w: int, corr_px: float) -> np.ndarray:
    """Gaussian low-pass power spectrum on an (h, w) torus, normalised to unit pixel variance."""
    ky = np.fft.fftfreq(h)[:, None]
    kx = np.fft.fftfreq(w)[None, :]
    lam = np.exp(-2.0 * (np.pi * corr_px) ** 2 * (kx**2 + ky**2))
    return lam * (h * w) / lam.sum()


class PanningGaussianDenoiser:
    """Exact denoiser for videos ``x[f] = mu[f] + sigma0 * roll(xi, f * pan)``.

    ``xi`` is one smooth Gaussian field per channel shared by every frame of
    the window and carried along by an integer camera pan.  ``mu`` is
    ``edit(c_v)``, or zero for a null video condition.  The prompt is ignored.
    Each call is a fresh window, so separately sampled windows draw
    independent ``xi`` -- the source of batch-boundary seams.
    """

    def __init__(self, schedule: NoiseSchedule, sigma0: float, pan: tuple[int, int] = (0, 0),
                 corr_px: float = 3.0, edit: Callable[[np.ndarray], np.ndarray] | None = None):
        self.schedule = schedule
        self.sigma0 = float(sigma0)
        self.pan = (int(pan[0]), int(pan[1]))
        self.corr_px = float(corr_px)
        self.edit = edit

    def mean(self, z_t: np.ndarray, cond: ConditionPair | None) -> np.ndarray:
        if cond is None or cond.c_v is None:
            return np.zeros(z_t.shape)
        if cond.c_v.shape != z_t.shape:
            raise ShapeError(f"video condition {cond.c_v.shape} must match latent {z_t.shape}")
        mu = cond.c_v if self.edit is None else self.edit(cond.c_v)
        return np.asarray(mu, dtype=np.float64)

    def _roll(self, x: np.ndarray, k: int) -> np.ndarray:
        dx, dy = self.pan
        return np.roll(x, (k * dy, k * dx), axis=(-2, -1))

    def __call__(self, z_t, t, cond=None):
        check_video(z_t, "z_t")
        b, c, f, h, w = z_t.shape
        ab = float(self.schedule.alpha_bar[t])
        a, sd = np.sqrt(ab), np.sqrt(1.0 - ab)
        mu = self.mean(z_t, cond)
        resid = z_t.astype(np.float64) - a * mu
        aligned = np.stack([self._roll(resid[:, :, k], -k) for k in range(f)], axis=2)
        ybar = aligned.mean(axis=2)
        lam = smooth_spectrum(h, w, self.corr_px)
        gain = a * self.sigma0 * lam / (ab * self.sigma0**2 * lam + (1.0 - ab) / f)
        xi_hat = np.real(np.fft.ifft2(gain * np.fft.fft2(ybar)))
        x0 = mu + self.sigma0 * np.stack([self._roll(xi_hat, k) for k in range(f)], axis=2)
        return ((z_t - a * x0) / sd).astype(DTYPE)

    def sample_clean(self, mu: np.ndarray, rng: SeededRng) -> np.ndarray:
        """Draw one exact sample of the data distribution (for oracles)."""
        b, c, f, h, w = mu.shape
        lam = smooth_spectrum(h, w, self.corr_px)
        white = rng.normal((b, c, h, w)).astype(np.float64)
        xi = np.real(np.fft.ifft2(np.sqrt(lam) * np.fft.fft2(white)))
        return (mu + self.sigma0 * np.stack([self._roll(xi, k) for k in range(f)], axis=2)).astype(DTYPE)
