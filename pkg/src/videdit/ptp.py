"""Prompt-to-prompt paired video generation and sample filtering.

Two sampling passes run in lockstep from the same initial noise: the first
follows the input prompt and records the attention probabilities of its
conditional branch; the second follows the edited prompt and, for early
steps, reuses the first pass's self- and temporal-attention matrices and the
cross-attention columns of tokens shared by both prompts.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .denoisers import ConditionPair
from .guidance import initial_noise
from .prompts import PromptTriplet, embed_prompt, token_alignment
from .schedule import NoiseSchedule, TimestepPlan, ddim_step
from .tensor import DTYPE, SeededRng

DEFAULT_STEPS = 30
SELF_CUTOFF_RANGE = (0.3, 0.45)
CROSS_CUTOFF_RANGE = (0.6, 0.85)
CFG_RANGE = (5, 12)
THRESHOLDS = {"text_in": 0.2, "text_out": 0.2, "direction": 0.2, "frame": 0.5}


class TraceMismatch(RuntimeError):
    pass


@dataclass
class AttentionTrace:
    """Post-softmax attention matrices keyed by (step, layer name)."""

    records: dict = field(default_factory=dict)
    kinds: dict = field(default_factory=dict)

    def add(self, step, name, kind, probs):
        self.records[(step, name)] = probs
        self.kinds[name] = kind

    def max_row_error(self) -> float:
        return max((float(np.abs(p.sum(axis=-1, dtype=np.float64) - 1.0).max()) for p in self.records.values()),
                   default=0.0)


class _Recorder:
    def __init__(self):
        self.current = {}

    def __call__(self, name, kind, probs):
        self.current[name] = (kind, probs)
        return probs


class _Injector:
    def __init__(self, source: dict, inject_self: bool, inject_cross: bool, alignment: np.ndarray):
        self.source = source
        self.inject_self = inject_self
        self.inject_cross = inject_cross
        self.mapped = np.flatnonzero(alignment >= 0)
        self.src_cols = alignment[self.mapped]

    def __call__(self, name, kind, probs):
        if name not in self.source:
            raise TraceMismatch(f"layer {name!r} was not recorded in the source pass")
        src_kind, src = self.source[name]
        if src_kind != kind or src.shape[:-1] != probs.shape[:-1]:
            raise TraceMismatch(f"layer {name!r}: recorded {src_kind} {src.shape} vs {kind} {probs.shape}")
        if kind in ("self", "temporal"):
            return src if self.inject_self else probs
        if self.inject_cross:
            out = probs.copy()
            out[..., self.mapped] = src[..., self.src_cols]
            return out
        return probs


@dataclass(frozen=True)
class GenerationConfig:
    self_cutoff: float
    cross_cutoff: float
    cfg_scale: float
    steps: int = DEFAULT_STEPS


def sample_generation_config(rng: SeededRng) -> GenerationConfig:
    """Random PTP cut-offs and guidance scale for one generation attempt."""
    s = float(rng.uniform(*SELF_CUTOFF_RANGE))
    c = float(rng.uniform(*CROSS_CUTOFF_RANGE))
    g = int(rng.integers(*CFG_RANGE))
    return GenerationConfig(s, c, float(g), DEFAULT_STEPS)


def ptp_generate_pair(denoiser, triplet: PromptTriplet, seed: int, self_cutoff: float, cross_cutoff: float,
                      cfg_scale: float, plan: TimestepPlan, schedule: NoiseSchedule, shape,
                      cross_mode: str = "prob", trace: AttentionTrace | None = None, clip=(0.0, 1.0),
                      inject_uncond: bool = False):
    """Return ``(video_input, video_edited)`` sampled from the same noise.

    ``denoiser`` must accept a ``ctrl`` keyword (see :mod:`videdit.toynet`).
    ``cross_mode="embed"`` swaps in the input prompt's embedding during the
    cross window instead of injecting probability columns.
    """
    for cut in (self_cutoff, cross_cutoff):
        if not 0.0 <= cut <= 1.0:
            raise ValueError(f"cutoff {cut} outside [0, 1]")
    if cross_mode not in ("prob", "embed"):
        raise ValueError(f"unknown cross_mode {cross_mode!r}")
    emb_in = embed_prompt(triplet.input_prompt)[None]
    emb_out = embed_prompt(triplet.edited_prompt)[None]
    align = token_alignment(triplet.input_prompt, triplet.edited_prompt)
    uncond = ConditionPair(None, None)
    z1 = initial_noise(tuple(shape), seed)
    z2 = z1.copy()
    steps = plan.ddim_steps
    for i, (t, t_prev) in enumerate(plan.pairs()):
        in_self = i < self_cutoff * steps
        in_cross = i < cross_cutoff * steps
        rec = _Recorder()
        rec_u = _Recorder()
        e1u = denoiser(z1, t, uncond, ctrl=rec_u)
        e1c = denoiser(z1, t, ConditionPair(None, emb_in), ctrl=rec)
        if trace is not None:
            for name, (kind, p) in rec.current.items():
                trace.add(i, name, kind, p)
        c2 = emb_out
        inj_cross = in_cross
        if cross_mode == "embed":
            c2 = emb_in if in_cross else emb_out
            inj_cross = False
        inj = _Injector(rec.current, in_self, inj_cross, align)
        if np.array_equal(z1, z2):
            e2u = e1u
        elif inject_uncond:
            e2u = denoiser(z2, t, uncond, ctrl=_Injector(rec_u.current, in_self, False, align))
        else:
            e2u = denoiser(z2, t, uncond)
        e2c = denoiser(z2, t, ConditionPair(None, c2), ctrl=inj)
        e1 = _guide(e1u, e1c, cfg_scale)
        e2 = _guide(e2u, e2c, cfg_scale)
        z1 = ddim_step(z1, e1, t, t_prev, schedule, clip)
        z2 = ddim_step(z2, e2, t, t_prev, schedule, clip)
    return z1, z2


def _guide(e_u, e_c, s):
    e_u = e_u.astype(np.float64)
    return (e_u + s * (e_c.astype(np.float64) - e_u)).astype(DTYPE)


# ------------------------------------------------------------------ filtering


@dataclass
class PairedSample:
    video_input: np.ndarray
    video_edited: np.ndarray
    triplet: PromptTriplet
    scores: dict | None = None
    kept: bool = False
    meta: dict = field(default_factory=dict)


def _unit_rows(x):
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, n, out=np.zeros_like(x), where=n > 0)


def clip_scores(video_input, video_edited, prompt_in: str, prompt_out: str, embedder) -> dict:
    """Average per-frame text, direction and frame-similarity scores."""
    vi = np.clip(np.asarray(video_input, dtype=np.float64), 0, 1)[0]
    vo = np.clip(np.asarray(video_edited, dtype=np.float64), 0, 1)[0]
    ei = _unit_rows(np.stack([embedder.image(vi[:, k]) for k in range(vi.shape[1])]))
    eo = _unit_rows(np.stack([embedder.image(vo[:, k]) for k in range(vo.shape[1])]))
    ti = embedder.text(prompt_in)
    to = embedder.text(prompt_out)
    d_img = _unit_rows(eo - ei)
    d_txt = _unit_rows((to - ti)[None])[0]
    return {
        "text_in": float(np.mean(ei @ ti)),
        "text_out": float(np.mean(eo @ to)),
        "direction": float(np.mean(d_img @ d_txt)),
        "frame": float(np.mean(np.sum(ei * eo, axis=1))),
    }


def score_and_filter(sample: PairedSample, embedder, thresholds: dict | None = None) -> PairedSample:
    """Attach scores and keep the sample only if every score clears its threshold."""
    th = {**THRESHOLDS, **(thresholds or {})}
    scores = clip_scores(sample.video_input, sample.video_edited, sample.triplet.input_prompt,
                         sample.triplet.edited_prompt, embedder)
    kept = all(scores[k] > th[k] for k in THRESHOLDS)
    return replace(sample, scores=scores, kept=kept)
