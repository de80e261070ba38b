"""Coarse-to-fine block-matching optical flow, bilinear backward warping and
the two consistency metrics (motion-aware MSE, frame consistency).

Flow convention: ``flow[y, x] = (dx, dy)`` such that sampling ``frame_b`` at
``(x + dx, y + dy)`` reconstructs ``frame_a`` at ``(x, y)``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BLOCK = 8
RADIUS = 4
LEVELS = 3
_LUMA = np.array([0.299, 0.587, 0.114])


def to_gray(frame: np.ndarray) -> np.ndarray:
    f = np.asarray(frame, dtype=np.float64)
    if f.ndim == 2:
        return f
    if f.ndim == 3 and f.shape[0] == 3:
        return np.tensordot(_LUMA, f, axes=1)
    if f.ndim == 3:
        return f.mean(axis=0)
    raise ValueError(f"expected (h, w) or (c, h, w) frame, got shape {f.shape}")


def _downsample(img):
    h, w = img.shape
    h2, w2 = h // 2, w // 2
    return img[:2 * h2, :2 * w2].reshape(h2, 2, w2, 2).mean(axis=(1, 3))


def max_displacement(radius: int = RADIUS, levels: int = LEVELS) -> int:
    """Largest flow component the pyramid search can produce."""
    return radius * (2**levels - 1)


def _match_level(a, b, init, block, radius):
    """Refine an integer flow ``init`` (h, w, 2) by exhaustive block search."""
    h, w = a.shape
    margin = int(np.abs(init).max()) + radius + 1
    bpad = np.pad(b, margin, constant_values=np.nan)
    offs = np.arange(-radius, radius + 1)
    tie = offs[:, None] ** 2 + offs[None, :] ** 2
    flow = np.zeros_like(init)
    for y0 in range(0, h, block):
        for x0 in range(0, w, block):
            y1, x1 = min(y0 + block, h), min(x0 + block, w)
            px, py = (int(v) for v in init[y0, x0])
            ys = y0 + py - radius + margin
            xs = x0 + px - radius + margin
            region = bpad[ys:ys + (y1 - y0) + 2 * radius, xs:xs + (x1 - x0) + 2 * radius]
            cand = sliding_window_view(region, (y1 - y0, x1 - x0))  # (2r+1, 2r+1, bh, bw)
            diff = np.abs(cand - a[y0:y1, x0:x1])
            valid = np.isfinite(diff)
            count = valid.sum(axis=(2, 3))
            cost = np.where(valid, diff, 0.0).sum(axis=(2, 3)) / np.maximum(count, 1)
            cost[count < 0.5 * (y1 - y0) * (x1 - x0)] = np.inf
            best = cost.min()
            if not np.isfinite(best):
                flow[y0:y1, x0:x1] = (px, py)
                continue
            ok = cost <= best + 1e-9
            score = np.where(ok, tie, np.iinfo(np.int64).max)
            iy, ix = np.unravel_index(np.argmin(score), score.shape)
            flow[y0:y1, x0:x1] = (px + offs[ix], py + offs[iy])
    return flow


def estimate_flow(frame_a, frame_b, radius: int = RADIUS, levels: int = LEVELS, block: int = BLOCK) -> np.ndarray:
    """Integer block flow (h, w, 2) mapping ``frame_a`` onto ``frame_b``."""
    a, b = to_gray(frame_a), to_gray(frame_b)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape) < block:
        raise ValueError(f"frames {a.shape} are smaller than the block size {block}")
    pyr = [(a, b)]
    for _ in range(levels - 1):
        na, nb = _downsample(pyr[-1][0]), _downsample(pyr[-1][1])
        if min(na.shape) < block:
            break
        pyr.append((na, nb))
    flow = np.zeros(pyr[-1][0].shape + (2,), dtype=np.int64)
    for lvl in range(len(pyr) - 1, -1, -1):
        la, lb = pyr[lvl]
        if flow.shape[:2] != la.shape:
            up = np.repeat(np.repeat(flow, 2, axis=0), 2, axis=1) * 2
            ph, pw = la.shape[0] - up.shape[0], la.shape[1] - up.shape[1]
            flow = np.pad(up, ((0, ph), (0, pw), (0, 0)), mode="edge")
        flow = _match_level(la, lb, flow, block, radius)
    return flow.astype(np.float32)


def warp(src: np.ndarray, flow: np.ndarray, return_mask: bool = False):
    """Backward bilinear warp: ``out[..., y, x] = src[..., y + dy, x + dx]`` with border clamping."""
    src = np.asarray(src)
    h, w = src.shape[-2:]
    flow = np.asarray(flow, dtype=np.float64)
    if flow.shape != (h, w, 2):
        raise ValueError(f"flow shape {flow.shape} does not match spatial dims {(h, w)}")
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = xx + flow[..., 0]
    sy = yy + flow[..., 1]
    valid = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    sx = np.clip(sx, 0, w - 1)
    sy = np.clip(sy, 0, h - 1)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0).astype(src.dtype)
    fy = (sy - y0).astype(src.dtype)
    tl, tr = src[..., y0, x0], src[..., y0, x1]
    bl, br = src[..., y1, x0], src[..., y1, x1]
    top = tl + fx * (tr - tl)
    bot = bl + fx * (br - bl)
    out = top + fy * (bot - top)
    return (out, valid) if return_mask else out


def mamse(video: np.ndarray, boundary: tuple[int, int], radius: int = RADIUS, levels: int = LEVELS) -> float:
    """Motion-aware MSE (in percent) between two frames of a (1, c, f, h, w) video in [0, 1].

    The second frame is warped onto the first along the estimated flow and
    the squared error is averaged over pixels whose samples fell inside the
    frame.  Values are clipped to [0, 1] first.
    """
    v = np.clip(np.asarray(video, dtype=np.float64), 0.0, 1.0)[0]
    i, j = boundary
    f = v.shape[1]
    if not (0 <= i < f and 0 <= j < f):
        raise IndexError(f"boundary {boundary} outside a {f}-frame video")
    a, b = v[:, i], v[:, j]
    flow = estimate_flow(a, b, radius, levels)
    warped, valid = warp(b, flow, return_mask=True)
    if not valid.any():
        return float("nan")
    err = ((a - warped) ** 2)[:, valid]
    return float(err.mean() * 100.0)


def _embed_fn(embedder):
    return embedder.image if hasattr(embedder, "image") else embedder


def frame_consistency(video: np.ndarray, embedder) -> float:
    """Mean cosine similarity of embeddings of consecutive frames."""
    v = np.asarray(video)[0]
    if v.shape[1] < 2:
        raise ValueError("frame consistency needs at least two frames")
    embed = _embed_fn(embedder)
    e = np.stack([np.asarray(embed(v[:, k]), dtype=np.float64) for k in range(v.shape[1])])
    e = e / np.linalg.norm(e, axis=1, keepdims=True)
    return float(np.mean(np.sum(e[:-1] * e[1:], axis=1)))


def pair_consistency(frame_a, frame_b, embedder) -> float:
    embed = _embed_fn(embedder)
    ea = np.asarray(embed(frame_a), dtype=np.float64)
    eb = np.asarray(embed(frame_b), dtype=np.float64)
    return float(ea @ eb / (np.linalg.norm(ea) * np.linalg.norm(eb)))
