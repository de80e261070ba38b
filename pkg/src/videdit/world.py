"""Procedural toy video world and a deterministic CLIP-like embedder.

Scenes are one coloured shape over a softly textured background, with an
optional integer-or-fractional camera pan that wraps the world around the
frame.  The embedder maps frames and prompts into one unit-sphere space in
which colour words line up with rendered colours.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .prompts import COLOR_WORDS, SHAPE_WORDS, tokenize
from .tensor import DTYPE

PALETTE = {
    "red": (0.9, 0.1, 0.1),
    "green": (0.1, 0.85, 0.15),
    "blue": (0.1, 0.15, 0.9),
    "yellow": (0.9, 0.85, 0.1),
    "cyan": (0.1, 0.85, 0.9),
    "magenta": (0.9, 0.1, 0.85),
    "white": (0.92, 0.92, 0.92),
    "black": (0.08, 0.08, 0.08),
}
assert set(PALETTE) == set(COLOR_WORDS)


@dataclass(frozen=True)
class SceneSpec:
    shape: str = "circle"
    color: str = "red"
    bg: str = "blue"
    texture: int = 0
    size: float = 0.18          # half-extent as a fraction of the frame width
    pos: tuple[float, float] = (0.5, 0.5)   # normalised (x, y) at frame 0
    velocity: tuple[float, float] = (0.0, 0.0)  # object motion in px/frame
    pan: tuple[float, float] = (0.0, 0.0)       # camera pan in px/frame
    frames: int = 16
    allow_exit: bool = False

    def __post_init__(self):
        if self.shape not in SHAPE_WORDS:
            raise ValueError(f"unknown shape {self.shape!r}")
        for c in (self.color, self.bg):
            if c not in PALETTE:
                raise ValueError(f"unknown colour {c!r}")
        if self.frames < 1 or self.size <= 0:
            raise ValueError("frames and size must be positive")

    def screen_centers(self, h: int, w: int) -> np.ndarray:
        k = np.arange(self.frames)[:, None]
        c0 = np.array([self.pos[0] * w, self.pos[1] * h])
        return c0 + k * (np.array(self.velocity) + np.array(self.pan))

    def check_inside(self, h: int, w: int) -> None:
        """Raise unless the object stays >= 1 px inside the frame (or exits by design)."""
        if self.allow_exit:
            return
        r = self.size * w
        c = self.screen_centers(h, w)
        if (c[:, 0] - r < 1).any() or (c[:, 0] + r > w - 1).any() or (c[:, 1] - r < 1).any() or (c[:, 1] + r > h - 1).any():
            raise ValueError(f"object leaves the {h}x{w} frame; set allow_exit=True if intended")


def _texture(u, v, h, w, texture_id):
    rng = np.random.default_rng(1000 + texture_id)
    out = np.zeros(u.shape)
    for _ in range(4):
        kx, ky = rng.integers(-3, 4, size=2)
        if kx == 0 and ky == 0:
            kx = 1
        phase = rng.uniform(0, 2 * np.pi)
        out += np.cos(2 * np.pi * (kx * u / w + ky * v / h) + phase)
    return 0.04 * out


def _coverage(shape, dx, dy, r):
    if shape == "circle":
        sdf = r - np.sqrt(dx**2 + dy**2)
    elif shape == "square":
        sdf = r - np.maximum(np.abs(dx), np.abs(dy))
    else:
        sdf = (r - (np.abs(dx) + np.abs(dy))) / np.sqrt(2.0)
    return np.clip(sdf + 0.5, 0.0, 1.0)


def render_scene(spec: SceneSpec, resolution: int | tuple[int, int] = 16) -> np.ndarray:
    """Rasterise a scene to a (1, 3, frames, h, w) video with values in [0, 1]."""
    h, w = (resolution, resolution) if np.isscalar(resolution) else resolution
    spec.check_inside(h, w)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    bg = np.array(PALETTE[spec.bg])[:, None, None]
    fg = np.array(PALETTE[spec.color])[:, None, None]
    r = spec.size * w
    cx0, cy0 = spec.pos[0] * w, spec.pos[1] * h
    frames = []
    for k in range(spec.frames):
        u = np.mod(xx - spec.pan[0] * k, w)
        v = np.mod(yy - spec.pan[1] * k, h)
        tex = _texture(u, v, h, w, spec.texture)
        cx = cx0 + spec.velocity[0] * k
        cy = cy0 + spec.velocity[1] * k
        dx = np.mod(u - cx + w / 2, w) - w / 2
        dy = np.mod(v - cy + h / 2, h) - h / 2
        cov = _coverage(spec.shape, dx, dy, r)[None]
        frame = (bg + tex[None]) * (1.0 - cov) + fg * cov
        frames.append(np.clip(frame, 0.0, 1.0))
    return np.stack(frames, axis=1)[None].astype(DTYPE)


def scene_from_prompt(text: str, **kw) -> SceneSpec:
    toks = tokenize(text)
    colors = [t for t in toks if t in PALETTE]
    shapes = [t for t in toks if t in SHAPE_WORDS]
    if len(colors) < 2 or not shapes:
        raise ValueError(f"cannot build a scene from {text!r}")
    return SceneSpec(shape=shapes[0], color=colors[0], bg=colors[1], **kw)


# ----------------------------------------------------------------- embedder

LEVELS = np.array([0.0, 0.5, 1.0])
HIST_BINS = len(LEVELS) ** 3
GRID = 4
FEATURES = HIST_BINS + 3 * GRID * GRID
EMBED_WIDTH = 96
GRID_WEIGHT = 0.35


def _soft_hist(frame: np.ndarray) -> np.ndarray:
    """Soft 3x3x3 colour histogram of a (3, h, w) frame with triangular bin weights."""
    x = np.clip(frame.reshape(3, -1).astype(np.float64), 0.0, 1.0)
    wts = np.clip(1.0 - np.abs(x[:, :, None] - LEVELS) / 0.5, 0.0, None)  # 3, n, 3
    joint = np.einsum("ni,nj,nk->nijk", wts[0], wts[1], wts[2])
    return joint.reshape(len(x[0]), -1).mean(axis=0)


def _grid(frame: np.ndarray) -> np.ndarray:
    c, h, w = frame.shape
    ys = np.array_split(np.arange(h), GRID)
    xs = np.array_split(np.arange(w), GRID)
    g = np.array([[frame[:, y][:, :, x].mean(axis=(1, 2)) for x in xs] for y in ys])  # G, G, 3
    return g.transpose(2, 0, 1).reshape(-1) - 0.5


def _projection() -> np.ndarray:
    m = np.random.default_rng(20240617).standard_normal((EMBED_WIDTH, FEATURES))
    q, _ = np.linalg.qr(m)
    return q  # orthonormal columns: inner products of features are preserved


_PROJ = _projection()


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def image_features(frame: np.ndarray) -> np.ndarray:
    hist = _unit(_soft_hist(frame))
    grid = _unit(_grid(frame)) * GRID_WEIGHT
    return np.concatenate([hist, grid])


def toy_embed_image(frame: np.ndarray) -> np.ndarray:
    """Unit embedding of one (3, h, w) frame."""
    return _unit(_PROJ @ image_features(np.asarray(frame)))


def _color_prototype(name: str) -> np.ndarray:
    rgb = np.array(PALETTE[name])[:, None, None] * np.ones((3, 2, 2))
    return _unit(_soft_hist(rgb))


def text_features(tokens) -> np.ndarray:
    feat = np.zeros(FEATURES)
    for t in tokens:
        if t in PALETTE:
            feat[:HIST_BINS] += _color_prototype(t)
        else:
            r = np.random.default_rng(abs(hash_token(t))).standard_normal(FEATURES)
            feat += 0.05 * _unit(r)
    return feat


def hash_token(t: str) -> int:
    return zlib.crc32(("embed:" + t).encode())


def toy_embed_text(text_or_tokens) -> np.ndarray:
    """Unit embedding of a prompt; colour words map onto their colour's histogram bins."""
    toks = tokenize(text_or_tokens) if isinstance(text_or_tokens, str) else tuple(text_or_tokens)
    return _unit(_PROJ @ text_features(toks))


class ToyEmbedder:
    """Bundles the two embedding functions behind the embedder contract."""

    def image(self, frame):
        return toy_embed_image(frame)

    def text(self, prompt):
        return toy_embed_text(prompt)

    def frames(self, video: np.ndarray) -> np.ndarray:
        """Embeddings of every frame of a (1, 3, f, h, w) video, shape (f, width)."""
        v = np.asarray(video)[0]
        return np.stack([self.image(v[:, k]) for k in range(v.shape[1])])
