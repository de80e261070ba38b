"""Long-video sampling with reference-frame score correction.

A long video is sampled in windows of at most ``F`` frames.  Every window
after the first starts with the last ``N`` frames already produced; those
reference frames are re-noised at each step, their exact noise is known in
closed form, and the average gap between that noise and the model's
prediction on them is added to the predictions for the new frames.  With
motion compensation the gap is first warped along optical flow from each
reference frame into each new frame.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .denoisers import ConditionPair, Denoiser
from .flow import estimate_flow, frame_consistency, mamse, pair_consistency, warp
from .guidance import GuidanceConfig, cfg_predict, initial_noise, sample_video
from .schedule import NoiseSchedule, TimestepPlan, ddim_step, forward_diffuse, infer_reference_noise
from .tensor import DTYPE, SeededRng, ShapeError

MODES = ("none", "lvsc", "mc")


@dataclass(frozen=True)
class ReferenceWindow:
    z_ref: np.ndarray

    @property
    def n(self) -> int:
        return self.z_ref.shape[2]


@dataclass(frozen=True)
class LongVideoPlan:
    total: int
    frames_per_batch: int = 16
    n_ref: int = 4

    def __post_init__(self):
        if self.frames_per_batch < 1 or self.total < 1:
            raise ValueError("frame counts must be positive")
        if self.total > self.frames_per_batch and not 1 <= self.n_ref < self.frames_per_batch:
            raise ValueError(f"need 1 <= N < F, got N={self.n_ref}, F={self.frames_per_batch}")

    def batches(self) -> list[tuple[int, int, int]]:
        """(ref_start, new_start, new_stop) per batch; ref_start == new_start for the first."""
        F, N = self.frames_per_batch, self.n_ref
        out = [(0, 0, min(F, self.total))]
        while out[-1][2] < self.total:
            s = out[-1][2]
            out.append((s - N, s, min(s + F - N, self.total)))
        return out

    def boundaries(self) -> list[tuple[int, int]]:
        return [(s - 1, s) for _, s, _ in self.batches()[1:]]


def _residual_mean(eps_raw, eps_ref_closed, n):
    if eps_ref_closed.shape[2] != n or eps_raw.shape[2] <= n:
        raise ShapeError(f"expected {n} reference frames and at least one new frame, "
                         f"got raw {eps_raw.shape[2]} / reference {eps_ref_closed.shape[2]} frames")
    r = eps_ref_closed.astype(np.float64) - eps_raw[:, :, :n].astype(np.float64)
    return r


def lvsc_correct(eps_raw: np.ndarray, eps_ref_closed: np.ndarray, n: int) -> np.ndarray:
    """Shift new-frame predictions by the mean reference residual."""
    r = _residual_mean(eps_raw, eps_ref_closed, n)
    corr = r[:, :, 0]
    for i in range(1, n):
        corr = corr + r[:, :, i]
    corr = corr / n
    return (eps_raw[:, :, n:].astype(np.float64) + corr[:, :, None]).astype(DTYPE)


def mc_lvsc_correct(eps_raw: np.ndarray, eps_ref_closed: np.ndarray, flows, n: int, literal: bool = False) -> np.ndarray:
    """Motion-compensated correction; ``flows[i][m]`` carries reference i onto new frame m.

    ``literal=True`` evaluates the alternative reading in which the new-frame
    prediction cancels and only the warped reference noise remains.
    """
    r = _residual_mean(eps_raw, eps_ref_closed, n)
    m_count = eps_raw.shape[2] - n
    h, w = eps_raw.shape[-2:]
    if len(flows) != n or any(len(row) != m_count for row in flows):
        raise ShapeError(f"need {n} x {m_count} flow fields")
    src = eps_ref_closed.astype(np.float64) if literal else r
    out = np.empty(eps_raw[:, :, n:].shape, dtype=np.float64)
    for m in range(m_count):
        acc = None
        for i in range(n):
            fl = flows[i][m]
            if np.shape(fl) != (h, w, 2):
                raise ShapeError(f"flow {i}->{m} has shape {np.shape(fl)}, expected {(h, w, 2)}")
            wi = warp(src[:, :, i], fl)
            acc = wi if acc is None else acc + wi
        corr = acc / n
        out[:, :, m] = corr if literal else eps_raw[:, :, n + m].astype(np.float64) + corr
    return out.astype(DTYPE)


def reference_flows(c_v: np.ndarray, n: int, **kw) -> list[list[np.ndarray]]:
    """Flows from each reference frame to each later frame of a conditioning window."""
    v = np.asarray(c_v)[0]
    f = v.shape[1]
    return [[estimate_flow(v[:, n + m], v[:, i], **kw) for m in range(f - n)] for i in range(n)]


def sample_long_video(denoiser: Denoiser, cond_full: ConditionPair, g: GuidanceConfig, plan: TimestepPlan,
                      lplan: LongVideoPlan, seed: int, schedule: NoiseSchedule, mode: str = "lvsc",
                      latent_channels: int | None = None, guided: bool = True, literal_mc: bool = False,
                      observer: Callable[[str, int, int], None] | None = None, flows_out: dict | None = None,
                      clip: tuple[float, float] | None = None) -> np.ndarray:
    """Sample ``lplan.total`` frames batch by batch.

    ``mode`` is ``"none"`` (windows sampled independently, reference slots
    drawn from noise and discarded), ``"lvsc"`` or ``"mc"``.  ``observer``
    receives ``(event, batch, t)`` for ``predict``, ``correct`` and ``ddim``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if cond_full.c_v is None:
        raise ValueError("long-video sampling needs a video condition")
    b, c, total, h, w = cond_full.c_v.shape
    if total != lplan.total:
        raise ValueError(f"condition has {total} frames but the plan expects {lplan.total}")
    c = latent_channels or c
    notify = observer or (lambda *a: None)

    def predict(z, t, cond):
        e = cfg_predict(denoiser, z, t, cond, g) if guided else denoiser(z, t, cond)
        return e

    out = np.zeros((b, c, total, h, w), dtype=DTYPE)
    for k, (r0, s, e) in enumerate(lplan.batches()):
        cond = cond_full.frames(r0, e)
        n = s - r0
        shape = (b, c, e - r0, h, w)
        if k == 0:
            out[:, :, s:e] = sample_video(denoiser, cond, g, plan, seed, schedule, shape=shape, guided=guided,
                                              clip=clip)
            continue
        z = initial_noise(shape, seed, stream=k)
        if mode == "none":
            for t, t_prev in plan.pairs():
                eps = predict(z, t, cond)
                notify("predict", k, t)
                z = ddim_step(z, eps, t, t_prev, schedule, clip)
                notify("ddim", k, t)
            out[:, :, s:e] = z[:, :, n:]
            continue

        z_ref = out[:, :, r0:s]
        z_new = np.ascontiguousarray(z[:, :, n:])
        flows = reference_flows(cond.c_v, n) if mode == "mc" else None
        if flows_out is not None and flows is not None:
            flows_out[k] = flows
        ref_rng = SeededRng(seed, (0x2EF, k))
        for step, (t, t_prev) in enumerate(plan.pairs()):
            z_t_ref = forward_diffuse(z_ref, ref_rng.child(step).normal(z_ref.shape), t, schedule)
            eps_ref = infer_reference_noise(z_t_ref, z_ref, t, schedule)
            eps = predict(np.concatenate([z_t_ref, z_new], axis=2), t, cond)
            notify("predict", k, t)
            if mode == "mc":
                eps_new = mc_lvsc_correct(eps, eps_ref, flows, n, literal=literal_mc)
            else:
                eps_new = lvsc_correct(eps, eps_ref, n)
            notify("correct", k, t)
            z_new = ddim_step(z_new, eps_new, t, t_prev, schedule, clip)
            notify("ddim", k, t)
        out[:, :, s:e] = z_new
    return out


def boundary_report(video: np.ndarray, lplan: LongVideoPlan, embedder=None) -> list[dict]:
    """Per-boundary motion-aware MSE (and embedding similarity if an embedder is given)."""
    recs = []
    for i, j in lplan.boundaries():
        rec = {"boundary": [i, j], "mamse": mamse(video, (i, j))}
        if embedder is not None:
            v = np.clip(video[0], 0.0, 1.0)
            rec["clip_frame"] = pair_consistency(v[:, i], v[:, j], embedder)
        recs.append(rec)
    return recs


__all__ = [
    "ReferenceWindow", "LongVideoPlan", "lvsc_correct", "mc_lvsc_correct", "reference_flows",
    "sample_long_video", "boundary_report", "frame_consistency", "MODES",
]
