"""Dual classifier-free guidance, the DDIM sampling loop and the guidance sweep."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .denoisers import ConditionPair, Denoiser
from .schedule import NoiseSchedule, TimestepPlan, ddim_step
from .tensor import DTYPE, SeededRng


@dataclass(frozen=True)
class GuidanceConfig:
    s_v: float = 1.5
    s_t: float = 10.0

    def __post_init__(self):
        if self.s_v < 1 or self.s_t < 1:
            raise ValueError(f"guidance scales must be >= 1, got s_V={self.s_v}, s_T={self.s_t}")


def combine_guidance(e_uncond, e_video, e_full, g: GuidanceConfig) -> np.ndarray:
    e0 = np.asarray(e_uncond, dtype=np.float64)
    e1 = np.asarray(e_video, dtype=np.float64)
    e2 = np.asarray(e_full, dtype=np.float64)
    return (e0 + g.s_v * (e1 - e0) + g.s_t * (e2 - e1)).astype(DTYPE)


def cfg_predict(denoiser: Denoiser, z_t, t: int, cond: ConditionPair, g: GuidanceConfig) -> np.ndarray:
    """Extrapolate from unconditional to video-only to fully conditioned predictions."""
    if cond.c_v is None or cond.c_t is None:
        raise ValueError("guided prediction needs both a video and a prompt condition")
    e_uncond = denoiser(z_t, t, ConditionPair(None, None))
    e_video = denoiser(z_t, t, ConditionPair(cond.c_v, None))
    e_full = denoiser(z_t, t, cond)
    return combine_guidance(e_uncond, e_video, e_full, g)


def initial_noise(shape, seed: int, stream: int = 0) -> np.ndarray:
    return SeededRng(seed, (0x5A3, stream)).normal(shape)


def sample_video(denoiser: Denoiser, cond: ConditionPair, g: GuidanceConfig, plan: TimestepPlan, seed: int,
                 schedule: NoiseSchedule, shape=None, guided: bool = True,
                 clip: tuple[float, float] | None = None) -> np.ndarray:
    """Run DDIM from seeded Gaussian noise down the plan.

    ``shape`` defaults to the video condition's shape.  With ``guided=False``
    the denoiser is called once per step on ``cond`` as given.
    """
    if shape is None:
        if cond.c_v is None:
            raise ValueError("shape is required when there is no video condition")
        shape = cond.c_v.shape
    z = initial_noise(tuple(shape), seed)
    for t, t_prev in plan.pairs():
        eps = cfg_predict(denoiser, z, t, cond, g) if guided else denoiser(z, t, cond)
        z = ddim_step(z, eps, t, t_prev, schedule, clip)
        if not np.all(np.isfinite(z)):
            raise FloatingPointError(f"non-finite latent after step t={t}")
    return z


def resize_video(v: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of the spatial dims of a 5D video."""
    h, w = v.shape[-2:]
    if (h, w) == tuple(size):
        return np.array(v, dtype=DTYPE)
    zoom = (1, 1, 1, size[0] / h, size[1] / w)
    return ndimage.zoom(np.asarray(v, dtype=np.float64), zoom, order=1, mode="nearest", grid_mode=True).astype(DTYPE)


@dataclass(frozen=True)
class SweepGrid:
    s_v: Sequence[float] = (1.2, 1.5, 1.8)
    resolutions: Sequence[tuple[int, int]] = ((32, 32), (48, 48))
    s_t: float = 10.0

    def __post_init__(self):
        if not self.s_v or not self.resolutions:
            raise ValueError("sweep grid needs at least one guidance scale and one resolution")

    def cells(self):
        return [(sv, tuple(r)) for sv in self.s_v for r in self.resolutions]


@dataclass
class SweepCell:
    s_v: float
    resolution: tuple[int, int]
    score: float
    video: np.ndarray = field(repr=False)

    def record(self, path=None) -> dict:
        return {"s_v": self.s_v, "resolution": list(self.resolution), "score": self.score, "output": path}


class SweepError(RuntimeError):
    pass


Scorer = Callable[[np.ndarray, str], float]


def mean_frame_score(video: np.ndarray, prompt: str, scorer: Scorer) -> float:
    v = video[0]
    return float(np.mean([scorer(v[:, k], prompt) for k in range(v.shape[1])]))


def sweep_and_pick(denoiser: Denoiser, cond: ConditionPair, grid: SweepGrid, scorer: Scorer, prompt: str, seed: int,
                   plan: TimestepPlan, schedule: NoiseSchedule, map_fn=map, clip=None):
    """Sample every (s_V, resolution) cell with a shared seed and keep the best-scoring one.

    Returns ``(video, (s_v, resolution), cells)``.  Ties go to the first cell
    in s_V-major enumeration order.  ``map_fn`` may be a pool's ``map``.
    """

    def run(cell):
        sv, res = cell
        c = ConditionPair(resize_video(cond.c_v, res), cond.c_t)
        video = sample_video(denoiser, c, GuidanceConfig(sv, grid.s_t), plan, seed, schedule, clip=clip)
        try:
            score = mean_frame_score(video, prompt, scorer)
        except Exception as exc:
            raise SweepError(f"scorer failed on cell s_V={sv}, resolution={res}: {exc}") from exc
        return SweepCell(sv, res, score, video)

    cells = list(map_fn(run, grid.cells()))
    best = cells[0]
    for c in cells[1:]:
        if c.score > best.score:
            best = c
    return best.video, (best.s_v, best.resolution), cells
