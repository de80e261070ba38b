"""Synthetic paired-video dataset: backbone fitting, generation, filtering and storage."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .prompts import PromptTriplet, embed_prompt
from .ptp import PairedSample, ptp_generate_pair, sample_generation_config, score_and_filter
from .schedule import NoiseSchedule, make_plan
from .tensor import SeededRng
from .toynet import ToyDenoiser
from .train import TrainExample, fit
from .vten import read_vten, write_vten
from .world import ToyEmbedder, render_scene, scene_from_prompt

log = logging.getLogger(__name__)


def scene_examples(prompts, seed: int, frames: int = 16, resolution: int = 16, per_prompt: int = 2):
    """Rendered (video, prompt) training pairs with randomised texture and position."""
    out = []
    for i, prompt in enumerate(sorted(set(prompts))):
        for j in range(per_prompt):
            r = SeededRng(seed, (0x5CE, i, j))
            x, y = r.uniform(0.35, 0.65, size=2)
            spec = scene_from_prompt(prompt, texture=int(r.integers(0, 50)), pos=(float(x), float(y)), frames=frames)
            out.append(TrainExample(render_scene(spec, resolution), None, embed_prompt(prompt)))
    return out


def fit_backbone(triplets, steps: int, seed: int, schedule: NoiseSchedule, frames: int = 16, resolution: int = 16,
                 lr: float = 4e-3, batch_size: int = 4, log_fn=None) -> tuple[ToyDenoiser, list[float]]:
    """Fit a text-to-video toy denoiser on rendered scenes for every prompt in the catalog."""
    prompts = [t.input_prompt for t in triplets] + [t.edited_prompt for t in triplets]
    examples = scene_examples(prompts, seed, frames, resolution)
    net = ToyDenoiser.create(seed)
    return fit(net, examples, steps, seed, schedule, lr=lr, batch_size=batch_size, p_v=0.0, p_t=0.1, log=log_fn)


def candidate_seed(master: int, triplet_idx: int, attempt: int) -> int:
    return int(SeededRng(master, (0xCA7, triplet_idx, attempt)).raw(1)[0] & 0x7FFF_FFFF)


def generate_candidate(backbone: ToyDenoiser, triplet: PromptTriplet, idx: int, attempt: int, master: int,
                       schedule: NoiseSchedule, frames: int, resolution: int, steps: int | None,
                       thresholds: dict | None, embedder=None, clip=(0.0, 1.0)) -> PairedSample:
    cfg = sample_generation_config(SeededRng(master, (0xC0F, idx, attempt)))
    n_steps = steps or cfg.steps
    seed = candidate_seed(master, idx, attempt)
    plan = make_plan(n_steps, schedule.T)
    vi, vo = ptp_generate_pair(backbone, triplet, seed, cfg.self_cutoff, cfg.cross_cutoff, cfg.cfg_scale, plan,
                               schedule, (1, 3, frames, resolution, resolution), clip=clip)
    sample = PairedSample(vi, vo, triplet, meta={"triplet_index": idx, "attempt": attempt, "seed": seed,
                                                 "config": {**asdict(cfg), "steps": n_steps}})
    return score_and_filter(sample, embedder or ToyEmbedder(), thresholds)


def generate_dataset(backbone: ToyDenoiser, triplets, master: int, schedule: NoiseSchedule, seeds_per_triplet: int = 2,
                     frames: int = 16, resolution: int = 16, steps: int | None = None, thresholds: dict | None = None,
                     map_fn=map, clip=(0.0, 1.0)) -> list[PairedSample]:
    """Every (triplet, attempt) candidate, scored; order is independent of ``map_fn``."""
    jobs = [(i, a) for i in range(len(triplets)) for a in range(seeds_per_triplet)]

    def run(job):
        i, a = job
        return generate_candidate(backbone, triplets[i], i, a, master, schedule, frames, resolution, steps, thresholds,
                                  clip=clip)

    return list(map_fn(run, jobs))


def write_dataset(out_dir, samples: list[PairedSample]) -> dict:
    """One directory per candidate plus a top-level manifest of the kept subset."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kept = []
    for k, s in enumerate(samples):
        name = f"sample_{k:05d}"
        d = out / name
        d.mkdir(exist_ok=True)
        write_vten(d / "input.vten", s.video_input)
        write_vten(d / "edited.vten", s.video_edited)
        meta = {"triplet": asdict(s.triplet), **s.meta, "scores": s.scores, "kept": s.kept}
        (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        if s.kept:
            kept.append(name)
    manifest = {
        "candidates": len(samples),
        "kept": kept,
        "acceptance_rate": len(kept) / len(samples) if samples else 0.0,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_dataset(directory) -> list[TrainExample]:
    """Training examples (edited video, input video, edit-prompt embedding) for kept samples."""
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    out = []
    for name in manifest["kept"]:
        meta = json.loads((d / name / "meta.json").read_text())
        out.append(TrainExample(read_vten(d / name / "edited.vten"), read_vten(d / name / "input.vten"),
                                embed_prompt(meta["triplet"]["edit_prompt"])))
    return out


def acceptance_rate(samples) -> float:
    return float(np.mean([s.kept for s in samples])) if samples else 0.0
