"""5D video tensors, inflation reshapes and the seeded RNG.

Videos and latents are plain ``float32`` numpy arrays laid out as
``(batch, channels, frames, height, width)``.  The reshapes below always
return fresh C-contiguous copies, never views.
"""
from __future__ import annotations

import numpy as np

DTYPE = np.float32


class ShapeError(ValueError):
    """Tensor dimensions do not satisfy an operation's precondition."""


def check_video(v: np.ndarray, name: str = "video") -> np.ndarray:
    """Validate a 5D video tensor and return it unchanged."""
    if not isinstance(v, np.ndarray) or v.ndim != 5:
        raise ShapeError(f"{name} must be a 5D array (b, c, f, h, w), got {getattr(v, 'shape', type(v))}")
    if min(v.shape) < 1:
        raise ShapeError(f"{name} has an empty dimension: {v.shape}")
    return v


def as_video(x, name: str = "video") -> np.ndarray:
    v = np.ascontiguousarray(x, dtype=DTYPE)
    check_video(v, name)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite values")
    return v


def reshape_spatial(v: np.ndarray) -> np.ndarray:
    """(b, c, f, h, w) -> (b*f, c, h, w) so per-frame layers see a 4D batch."""
    b, c, f, h, w = check_video(v).shape
    return np.ascontiguousarray(v.transpose(0, 2, 1, 3, 4)).reshape(b * f, c, h, w)


def inverse_spatial(x: np.ndarray, frames: int) -> np.ndarray:
    bf, c, h, w = x.shape
    if bf % frames:
        raise ShapeError(f"leading dim {bf} is not a multiple of frames={frames}")
    return np.ascontiguousarray(x.reshape(bf // frames, frames, c, h, w).transpose(0, 2, 1, 3, 4))


def reshape_temporal(v: np.ndarray) -> np.ndarray:
    """(b, c, f, h, w) -> (b*h*w, f, c): one length-f token sequence per pixel."""
    b, c, f, h, w = check_video(v).shape
    return np.ascontiguousarray(v.transpose(0, 3, 4, 2, 1)).reshape(b * h * w, f, c)


def inverse_temporal(x: np.ndarray, b: int, h: int, w: int) -> np.ndarray:
    n, f, c = x.shape
    if n != b * h * w:
        raise ShapeError(f"sequence count {n} != b*h*w = {b * h * w}")
    return np.ascontiguousarray(x.reshape(b, h, w, f, c).transpose(0, 4, 3, 1, 2))


def concat_condition(z_t: np.ndarray, c_v: np.ndarray | None, cond_channels: int | None = None) -> np.ndarray:
    """Stack the video condition onto the latent along channels.

    A null condition becomes an all-zero block of ``cond_channels`` channels
    (defaulting to the latent's own channel count).
    """
    check_video(z_t, "z_t")
    b, c, f, h, w = z_t.shape
    if c_v is None:
        cc = c if cond_channels is None else cond_channels
        c_v = np.zeros((b, cc, f, h, w), dtype=z_t.dtype)
    else:
        check_video(c_v, "c_V")
        if (c_v.shape[0],) + c_v.shape[2:] != (b, f, h, w):
            raise ShapeError(f"condition dims {c_v.shape} do not match latent dims {z_t.shape} on (b, f, h, w)")
        if cond_channels is not None and c_v.shape[1] != cond_channels:
            raise ShapeError(f"condition has {c_v.shape[1]} channels, expected {cond_channels}")
    return np.concatenate([z_t, c_v.astype(z_t.dtype, copy=False)], axis=1)


class SeededRng:
    """Counter-based Philox generator addressed by ``(seed, stream)``.

    Distinct stream indices give non-overlapping sequences, so workers can
    draw independently without sharing state.
    """

    algorithm = "philox4x64-10"

    def __init__(self, seed: int, stream: int | tuple[int, ...] = ()):
        if isinstance(stream, int):
            stream = (stream,)
        self.seed = int(seed) & 0xFFFF_FFFF_FFFF_FFFF
        self.stream = tuple(int(s) for s in stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def child(self, *stream: int) -> "SeededRng":
        return SeededRng(self.seed, self.stream + tuple(stream))

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape, dtype=np.float64).astype(DTYPE)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low: int, high: int, size=None):
        """Integers in the closed range [low, high]."""
        return self._gen.integers(low, high, size=size, endpoint=True)

    def random(self, size=None):
        return self._gen.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def raw(self, n: int) -> np.ndarray:
        return self._gen.bit_generator.random_raw(n)
