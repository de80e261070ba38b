"""Noise schedule, forward diffusion, closed-form noise recovery and DDIM steps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DTYPE, ShapeError


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)

    def coeffs(self, t: int) -> tuple[float, float]:
        """(sqrt(alpha_bar_t), sqrt(1 - alpha_bar_t)) in float64."""
        if not 0 <= t < self.T:
            raise ValueError(f"timestep {t} outside [0, {self.T})")
        ab = float(self.alpha_bar[t])
        return np.sqrt(ab), np.sqrt(1.0 - ab)


def make_schedule(T: int = 1000, beta_min: float = 1e-4, beta_max: float = 2e-2) -> NoiseSchedule:
    """Linear beta schedule with precomputed cumulative alpha products."""
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")
    beta = np.linspace(beta_min, beta_max, T, dtype=np.float64)
    alpha_bar = np.cumprod(1.0 - beta)
    beta.flags.writeable = False
    alpha_bar.flags.writeable = False
    return NoiseSchedule(beta=beta, alpha_bar=alpha_bar)


@dataclass(frozen=True)
class TimestepPlan:
    indices: tuple[int, ...]

    def __post_init__(self):
        idx = self.indices
        if not idx:
            raise ValueError("empty timestep plan")
        if any(a <= b for a, b in zip(idx, idx[1:])):
            raise ValueError(f"plan indices must be strictly decreasing: {idx}")
        if idx[-1] < 0:
            raise ValueError("plan indices must be non-negative")

    @property
    def ddim_steps(self) -> int:
        return len(self.indices)

    def pairs(self):
        """Yield (t, t_prev) with t_prev = -1 for the final step."""
        nxt = self.indices[1:] + (-1,)
        return list(zip(self.indices, nxt))


def make_plan(steps: int, T: int) -> TimestepPlan:
    """Uniformly strided subsequence of [0, T) from T-1 down to 0.

    A one-step plan is just ``(T-1,)``.
    """
    if steps < 1 or steps > T:
        raise ValueError(f"steps must be in [1, {T}], got {steps}")
    if steps == 1:
        return TimestepPlan((T - 1,))
    idx = np.round(np.linspace(T - 1, 0, steps)).astype(int)
    return TimestepPlan(tuple(int(i) for i in idx))


def _same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def forward_diffuse(z0: np.ndarray, eps: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
    _same_shape(z0, eps, "forward_diffuse")
    a, b = s.coeffs(t)
    return (a * z0.astype(np.float64) + b * eps.astype(np.float64)).astype(DTYPE)


def infer_reference_noise(z_t_ref: np.ndarray, z_ref: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
    """Noise that maps clean reference frames onto their noised version at step t."""
    _same_shape(z_t_ref, z_ref, "infer_reference_noise")
    a, b = s.coeffs(t)
    if b == 0.0:
        raise ValueError(f"alpha_bar[{t}] == 1: reference noise is undefined")
    return ((z_t_ref.astype(np.float64) - a * z_ref.astype(np.float64)) / b).astype(DTYPE)


def predict_x0(z_t: np.ndarray, eps_hat: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
    a, b = s.coeffs(t)
    return (z_t.astype(np.float64) - b * eps_hat.astype(np.float64)) / a


def ddim_step(z_t: np.ndarray, eps_hat: np.ndarray, t: int, t_prev: int, s: NoiseSchedule,
              clip: tuple[float, float] | None = None) -> np.ndarray:
    """Deterministic (eta = 0) DDIM update from t to t_prev; t_prev = -1 returns the clean estimate.

    With ``clip`` the clean estimate is clamped to that range and the noise
    estimate is recomputed from it before stepping.
    """
    _same_shape(z_t, eps_hat, "ddim_step")
    if t_prev > t or t_prev < -1:
        raise ValueError(f"DDIM step must move backwards: t={t}, t_prev={t_prev}")
    x0 = predict_x0(z_t, eps_hat, t, s)
    eps = eps_hat.astype(np.float64)
    if clip is not None:
        x0 = np.clip(x0, *clip)
        a_t, b_t = s.coeffs(t)
        eps = (z_t.astype(np.float64) - a_t * x0) / b_t
    if t_prev == -1:
        return x0.astype(DTYPE)
    a, b = s.coeffs(t_prev)
    return (a * x0 + b * eps).astype(DTYPE)
