"""Boundary MAMSE for the three long-video modes on a small panning corpus.

Uses the exact panning Gaussian denoiser, so differences come from the
sampler alone.  ``python demos/long_video_ablation.py [videos]``
"""
import sys

import numpy as np

from videdit.denoisers import ConditionPair, PanningGaussianDenoiser
from videdit.guidance import GuidanceConfig
from videdit.lvsc import LongVideoPlan, boundary_report, sample_long_video
from videdit.prompts import embed_prompt
from videdit.schedule import make_plan, make_schedule
from videdit.world import SceneSpec, ToyEmbedder, render_scene

n = int(sys.argv[1]) if len(sys.argv) > 1 else 6
s = make_schedule()
plan, lp, emb = make_plan(30, s.T), LongVideoPlan(32, 16, 4), ToyEmbedder()
pans = [(1, 0), (0, 1), (-1, 1), (2, 0), (0, -2), (1, 1)]
rows = {m: [] for m in ("none", "lvsc", "mc")}
for i in range(n):
    pan = pans[i % len(pans)]
    video = render_scene(SceneSpec(pan=pan, frames=32, texture=i, allow_exit=True), 32)
    den = PanningGaussianDenoiser(s, sigma0=0.1, pan=pan, corr_px=2.0)
    cond = ConditionPair(video, embed_prompt("keep the scene")[None])
    for mode in rows:
        out = sample_long_video(den, cond, GuidanceConfig(1.0, 1.0), plan, lp, i, s, mode=mode)
        rows[mode].append(np.mean([r["mamse"] for r in boundary_report(out, lp, emb)]))
for mode, vals in rows.items():
    print(f"{mode:<6} median boundary MAMSE {np.median(vals):.4f} %")
