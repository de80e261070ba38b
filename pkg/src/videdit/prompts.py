"""Tokenisation, prompt embeddings and the templated prompt-triplet catalog."""
from __future__ import annotations

import json
import re
import zlib
from dataclasses import asdict, dataclass
from difflib import SequenceMatcher
from pathlib import Path

import numpy as np

from .tensor import DTYPE

BOS = "<bos>"
PAD = "<pad>"
MAX_TOKENS = 8
TEXT_WIDTH = 16

_WORD = re.compile(r"[a-z]+")
_STOP = {"a", "an", "the", "on", "of", "with", "into", "to", "it", "is", "and", "in"}


def tokenize(text: str) -> tuple[str, ...]:
    """Lowercase content words; articles and prepositions are dropped."""
    return tuple(w for w in _WORD.findall(text.lower()) if w not in _STOP)


def token_vector(token: str, width: int = TEXT_WIDTH) -> np.ndarray:
    """Fixed pseudo-random unit vector for a token (stable across platforms)."""
    seed = zlib.crc32(token.encode("utf-8"))
    v = np.random.default_rng(seed).standard_normal(width)
    return v / np.linalg.norm(v)


def padded_tokens(tokens, length: int = MAX_TOKENS) -> list[str]:
    toks = [BOS, *tokens][:length]
    return toks + [PAD] * (length - len(toks))


def embed_prompt(text_or_tokens, width: int = TEXT_WIDTH, length: int = MAX_TOKENS) -> np.ndarray:
    """(length, width) matrix of unit token vectors; the empty prompt is BOS + padding."""
    toks = tokenize(text_or_tokens) if isinstance(text_or_tokens, str) else tuple(text_or_tokens)
    return np.stack([token_vector(t, width) for t in padded_tokens(toks, length)]).astype(DTYPE)


def null_embedding(width: int = TEXT_WIDTH, length: int = MAX_TOKENS) -> np.ndarray:
    return embed_prompt((), width, length)


def token_alignment(src: str, dst: str, length: int = MAX_TOKENS) -> np.ndarray:
    """For each padded position of ``dst``, the matching position in ``src`` or -1.

    BOS maps to BOS, shared content tokens are matched with a sequence
    alignment, and padding maps to padding position by position.
    """
    a = padded_tokens(tokenize(src), length)
    b = padded_tokens(tokenize(dst), length)
    out = np.full(length, -1, dtype=int)
    out[0] = 0
    ca = [t for t in a[1:] if t != PAD]
    cb = [t for t in b[1:] if t != PAD]
    for blk in SequenceMatcher(None, ca, cb, autojunk=False).get_matching_blocks():
        for k in range(blk.size):
            out[1 + blk.b + k] = 1 + blk.a + k
    for j in range(1, length):
        if b[j] == PAD and a[j] == PAD:
            out[j] = j
    return out


# ------------------------------------------------------------------ catalog

COLOR_WORDS = ("red", "green", "blue", "yellow", "cyan", "magenta", "white", "black")
SHAPE_WORDS = ("circle", "square", "diamond")


@dataclass(frozen=True)
class PromptTriplet:
    input_prompt: str
    edit_prompt: str
    edited_prompt: str

    def __post_init__(self):
        for name in ("input_prompt", "edit_prompt", "edited_prompt"):
            if not tokenize(getattr(self, name)):
                raise ValueError(f"{name} is empty")
        if tokenize(self.input_prompt) == tokenize(self.edited_prompt) and not self.is_identity:
            raise ValueError("edited prompt equals input prompt for a non-identity edit")

    @property
    def is_identity(self) -> bool:
        return tokenize(self.edit_prompt) in {("keep", "same"), ("unchanged",)}


def scene_prompt(color: str, shape: str, bg: str, pan: str | None = None) -> str:
    s = f"a {color} {shape} on a {bg} background"
    return s + (f" panning {pan}" if pan else "")


def default_catalog() -> list[PromptTriplet]:
    """~60 triplets: object colour, background colour and shape edits."""
    combos = [
        ("red", "circle", "blue"), ("green", "square", "black"), ("yellow", "diamond", "blue"),
        ("blue", "circle", "white"), ("magenta", "square", "green"), ("cyan", "diamond", "black"),
        ("white", "circle", "red"), ("red", "square", "yellow"), ("green", "diamond", "magenta"),
        ("yellow", "circle", "black"), ("blue", "square", "yellow"), ("black", "diamond", "cyan"),
        ("magenta", "circle", "white"), ("cyan", "square", "red"), ("red", "diamond", "green"),
    ]
    out: list[PromptTriplet] = []
    for i, (col, shp, bg) in enumerate(combos):
        others = [c for c in COLOR_WORDS if c not in (col, bg)]
        new_col = others[i % len(others)]
        new_bg = others[(i + 3) % len(others)]
        new_shape = SHAPE_WORDS[(SHAPE_WORDS.index(shp) + 1) % len(SHAPE_WORDS)]
        src = scene_prompt(col, shp, bg)
        out.append(PromptTriplet(src, f"make the {shp} {new_col}", scene_prompt(new_col, shp, bg)))
        out.append(PromptTriplet(src, f"turn the background {new_bg}", scene_prompt(col, shp, new_bg)))
        out.append(PromptTriplet(src, f"make it a {new_shape}", scene_prompt(col, new_shape, bg)))
        alt = others[(i + 5) % len(others)]
        out.append(PromptTriplet(src, f"paint the {shp} {alt}", scene_prompt(alt, shp, bg)))
    return out


def parse_scene_prompt(text: str) -> dict:
    """Recover (color, shape, background) from a catalog-style prompt."""
    toks = tokenize(text)
    colors = [t for t in toks if t in COLOR_WORDS]
    shapes = [t for t in toks if t in SHAPE_WORDS]
    if len(colors) < 2 or not shapes:
        raise ValueError(f"not a scene prompt: {text!r}")
    return {"color": colors[0], "shape": shapes[0], "bg": colors[1]}


def save_catalog(path, triplets) -> None:
    Path(path).write_text(json.dumps([asdict(t) for t in triplets], indent=2) + "\n")


def load_catalog(path) -> list[PromptTriplet]:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, list):
        raise ValueError("catalog must be a JSON list of triplets")
    return [PromptTriplet(**d) for d in data]

