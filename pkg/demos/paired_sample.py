"""Generate one prompt-to-prompt pair with the bundled toy backbone and score it.

``python demos/paired_sample.py [triplet_index] [out_dir]`` writes PPM frames
of both videos and prints the filter scores.
"""
import sys
from pathlib import Path

from videdit.cli import dump_frames, load_model
from videdit.prompts import default_catalog
from videdit.ptp import PairedSample, ptp_generate_pair, score_and_filter
from videdit.schedule import make_plan, make_schedule
from videdit.world import ToyEmbedder

idx = int(sys.argv[1]) if len(sys.argv) > 1 else 2
out = Path(sys.argv[2] if len(sys.argv) > 2 else "pair_frames")
s = make_schedule()
net = load_model(Path(__file__).resolve().parent.parent / "tests" / "data" / "ptp_backbone")
tr = default_catalog()[idx]
vi, vo = ptp_generate_pair(net, tr, 7, 0.4, 0.7, 8.0, make_plan(30, s.T), s, (1, 3, 16, 16, 16))
sample = score_and_filter(PairedSample(vi, vo, tr), ToyEmbedder())
print(f"{tr.input_prompt!r} -> {tr.edited_prompt!r}")
print({k: round(v, 3) for k, v in sample.scores.items()}, "kept" if sample.kept else "dropped")
dump_frames(out / "input", vi)
dump_frames(out / "edited", vo)
print(f"frames in {out}/")
