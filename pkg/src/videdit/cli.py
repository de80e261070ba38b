"""Command-line entry point: ``videdit <command> [options]``.

Commands: ``render``, ``gen-data``, ``train``, ``edit``, ``edit-long``,
``eval`` and ``stats``.  Every command takes ``--config FILE`` and any number
of ``--set key.sub=value`` overrides (see :mod:`videdit.config`).  Reports are
JSON lines on stdout or in ``--report FILE``.
"""
from __future__ import annotations

import argparse
import glob
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .datagen import fit_backbone, generate_dataset, load_dataset, write_dataset
from .denoisers import ConditionPair
from .guidance import GuidanceConfig, SweepGrid, sample_video, sweep_and_pick
from .lvsc import LongVideoPlan, boundary_report, sample_long_video
from .flow import frame_consistency, mamse
from .prompts import default_catalog, embed_prompt, load_catalog
from .schedule import make_plan, make_schedule
from .toynet import ToyConfig, ToyDenoiser
from .train import fit
from .vten import VtenError, read_bundle, read_vten, write_bundle, write_vten
from .world import ToyEmbedder, render_scene, scene_from_prompt

log = logging.getLogger("videdit")

METRICS = ("mamse", "frame-consistency", "pair-mse")


class CheckFailed(RuntimeError):
    """An internal invariant check failed; the message names the check."""


# ------------------------------------------------------------------ helpers


class Reporter:
    def __init__(self, path=None):
        self.path = path
        self.fh = None

    def __enter__(self):
        if self.path:
            Path(self.path).parent.mkdir(parents=True, exist_ok=True)
            self.fh = open(self.path, "w")
        return self

    def __exit__(self, *exc):
        if self.fh:
            self.fh.close()

    def __call__(self, record: dict):
        line = json.dumps(record, sort_keys=True)
        (self.fh or sys.stdout).write(line + "\n")


@contextmanager
def worker_map(n: int):
    if n <= 1:
        yield map
        return
    with ThreadPoolExecutor(max_workers=n) as pool:
        yield pool.map


def schedule_of(cfg: RunConfig):
    s = cfg.schedule
    return make_schedule(s.T, s.beta_min, s.beta_max)


def save_model(path, net: ToyDenoiser, extra: dict | None = None):
    write_bundle(path, net.params, {"toy_config": asdict(net.cfg), **(extra or {})})


def load_model(path) -> ToyDenoiser:
    if not (Path(path) / "manifest.json").is_file():
        raise FileNotFoundError(f"parameter bundle not found: {path}")
    params, meta = read_bundle(path)
    cfg = ToyConfig(**meta.get("toy_config", {}))
    net = ToyDenoiser.create(0, cfg)
    missing = sorted(set(net.params) - set(params))
    if missing:
        raise CheckFailed(f"bundle-complete: {path} lacks tensor {missing[0]!r}")
    return ToyDenoiser(params, cfg, net.null_text)


def read_video(path) -> np.ndarray:
    v = read_vten(path)
    if v.ndim == 4:
        v = v[None]
    if v.ndim != 5 or v.shape[0] != 1:
        raise VtenError(f"{path}: expected a (1, c, f, h, w) video, got shape {v.shape}")
    return v


def check_finite(name, x):
    if not np.all(np.isfinite(x)):
        raise CheckFailed(f"finite-output: {name} contains non-finite values")


def dump_frames(directory, video: np.ndarray):
    """Write each frame as a binary PPM (P6) image."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    v = np.clip(video[0], 0.0, 1.0)
    for k in range(v.shape[1]):
        img = np.round(v[:3, k].transpose(1, 2, 0) * 255).astype(np.uint8)
        h, w, _ = img.shape
        (d / f"frame_{k:04d}.ppm").write_bytes(f"P6\n{w} {h}\n255\n".encode() + img.tobytes())


def text_scorer(embedder):
    def score(frame, prompt):
        return float(embedder.image(np.clip(frame, 0.0, 1.0)) @ embedder.text(prompt))
    return score


def require(path, what):
    if path is None:
        raise ConfigError(f"no {what} given (flag or paths.* config key)")
    return path


# ----------------------------------------------------------------- commands


def cmd_render(args, cfg: RunConfig, report):
    pan = tuple(float(x) for x in args.pan.split(","))
    vel = tuple(float(x) for x in args.velocity.split(","))
    spec = scene_from_prompt(args.prompt, frames=args.frames, pan=pan, velocity=vel, texture=args.texture,
                             allow_exit=args.allow_exit)
    video = render_scene(spec, args.resolution)
    write_vten(args.out, video)
    report({"command": "render", "output": str(args.out), "shape": list(video.shape), "scene": asdict(spec)})


def _catalog(cfg: RunConfig, override):
    path = override or cfg.datagen.catalog
    triplets = default_catalog() if path is None else load_catalog(path)
    if not triplets:
        raise ConfigError("empty catalog: no prompt triplets to generate from")
    return triplets


def cmd_gen_data(args, cfg: RunConfig, report):
    out = Path(require(args.out or cfg.paths.dataset, "dataset output directory"))
    triplets = _catalog(cfg, args.catalog)
    sched = schedule_of(cfg)
    d = cfg.datagen
    if args.backbone:
        backbone = load_model(args.backbone)
    else:
        backbone, losses = fit_backbone(triplets, d.backbone_steps, cfg.seed, sched, d.frames, d.resolution,
                                        lr=d.backbone_lr, batch_size=d.backbone_batch)
        save_model(out / "backbone", backbone, {"final_loss": float(np.mean(losses[-50:])) if losses else None})
    with worker_map(cfg.workers) as m:
        samples = generate_dataset(backbone, triplets, cfg.seed, sched, d.seeds_per_triplet, d.frames, d.resolution,
                                   d.ptp_steps, d.thresholds, map_fn=m, clip=cfg.clip())
    for s in samples:
        check_finite(f"candidate {s.meta['triplet_index']}/{s.meta['attempt']}", s.video_edited)
    manifest = write_dataset(out, samples)
    (out / "config.json").write_text(cfg.dumps() + "\n")
    report({"command": "gen-data", "output": str(out), "candidates": manifest["candidates"],
            "kept": len(manifest["kept"]), "acceptance_rate": manifest["acceptance_rate"]})
    print(f"acceptance rate: {manifest['acceptance_rate']:.3f} "
          f"({len(manifest['kept'])}/{manifest['candidates']})", file=sys.stderr)


def cmd_train(args, cfg: RunConfig, report):
    dataset = Path(require(args.dataset or cfg.paths.dataset, "dataset directory"))
    out = Path(require(args.out or cfg.paths.params, "parameter output directory"))
    if not (dataset / "manifest.json").is_file():
        raise FileNotFoundError(f"missing dataset: {dataset / 'manifest.json'} not found")
    examples = load_dataset(dataset)
    if not examples:
        raise ConfigError(f"dataset {dataset} has no kept samples")
    if args.limit:
        examples = examples[:args.limit]
    net = load_model(args.init) if args.init else ToyDenoiser.create(cfg.seed)
    t = cfg.train
    lines = []
    net, losses = fit(net, examples, t.steps, cfg.seed, schedule_of(cfg), lr=t.lr, batch_size=t.batch_size,
                      p_v=t.p_v, p_t=t.p_t, log=lambda k, loss: lines.append({"step": k, "loss": loss}))
    for name, p in net.params.items():
        check_finite(f"parameter {name}", p)
    save_model(out, net, {"steps": t.steps, "examples": len(examples)})
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "loss.jsonl", "w") as fh:
        for rec in lines:
            fh.write(json.dumps(rec) + "\n")
    report({"command": "train", "output": str(out), "steps": t.steps, "examples": len(examples),
            "initial_loss": losses[0] if losses else None, "final_loss": losses[-1] if losses else None})


def _edit_inputs(args, cfg):
    net = load_model(require(args.params or cfg.paths.params, "parameter bundle"))
    video = read_video(args.input)
    cond = ConditionPair(video, embed_prompt(args.prompt)[None])
    return net, video, cond


def cmd_edit(args, cfg: RunConfig, report):
    net, video, cond = _edit_inputs(args, cfg)
    F = cfg.long_video.frames_per_batch
    if video.shape[2] > F:
        raise ConfigError(f"input has {video.shape[2]} frames but at most {F} fit in one batch; "
                          f"use 'videdit edit-long' for longer videos")
    sched = schedule_of(cfg)
    plan = make_plan(cfg.sampler.steps, sched.T)
    g = cfg.guidance
    if args.no_sweep:
        s_v = args.svid if args.svid is not None else g.s_v
        out = sample_video(net, cond, GuidanceConfig(s_v, g.s_t), plan, cfg.seed, sched, clip=cfg.clip())
        chosen = {"s_v": s_v, "resolution": list(video.shape[-2:])}
        cells = []
    else:
        grid = SweepGrid(tuple(g.s_v_grid), tuple(tuple(r) for r in g.resolutions), g.s_t)
        with worker_map(cfg.workers) as m:
            out, (s_v, res), cells = sweep_and_pick(net, cond, grid, text_scorer(ToyEmbedder()), args.prompt,
                                                    cfg.seed, plan, sched, map_fn=m, clip=cfg.clip())
        chosen = {"s_v": s_v, "resolution": list(res)}
    check_finite("edited video", out)
    write_vten(args.out, out)
    for c in cells:
        report({"command": "edit", "cell": c.record()})
    if args.dump_frames:
        dump_frames(args.dump_frames, out)
    report({"command": "edit", "output": str(args.out), "chosen": chosen, "sweep_cells": len(cells)})


def _save_flows(directory, flows_out):
    d = Path(directory)
    for k, flows in sorted(flows_out.items()):
        sub = d / f"batch_{k:03d}"
        sub.mkdir(parents=True, exist_ok=True)
        for i, row in enumerate(flows):
            for m, fl in enumerate(row):
                write_vten(sub / f"ref{i}_to_new{m}.vten", fl)


def cmd_edit_long(args, cfg: RunConfig, report):
    net, video, cond = _edit_inputs(args, cfg)
    lv = cfg.long_video
    total = video.shape[2]
    if total <= lv.frames_per_batch:
        raise ConfigError(f"input has {total} frames; edit-long needs more than {lv.frames_per_batch} "
                          f"(use 'videdit edit')")
    lplan = LongVideoPlan(total, lv.frames_per_batch, lv.n_ref)
    sched = schedule_of(cfg)
    plan = make_plan(cfg.sampler.steps, sched.T)
    g = GuidanceConfig(args.svid if args.svid is not None else cfg.guidance.s_v, cfg.guidance.s_t)
    mc = lv.mc if args.mc is None else args.mc == "on"
    modes = {"off": ["none"], "on": ["mc" if mc else "lvsc"], "both": ["none", "mc" if mc else "lvsc"]}[args.lvsc]
    out = Path(args.out)
    emb = ToyEmbedder()
    for mode in modes:
        path = out if len(modes) == 1 else out.with_name(f"{out.stem}.{mode}{out.suffix}")
        flows = {}
        result = sample_long_video(net, cond, g, plan, lplan, cfg.seed, sched, mode=mode, flows_out=flows,
                                   clip=cfg.clip())
        check_finite(f"edited video ({mode})", result)
        write_vten(path, result)
        if flows and args.flow_cache:
            _save_flows(Path(args.flow_cache) / mode, flows)
        if args.dump_frames:
            dump_frames(Path(args.dump_frames) / mode, result)
        for rec in boundary_report(result, lplan, emb):
            report({"command": "edit-long", "mode": mode, **rec})
        report({"command": "edit-long", "mode": mode, "output": str(path), "batches": len(lplan.batches()),
                "flow_cache": str(Path(args.flow_cache) / mode) if flows and args.flow_cache else None})


def _boundaries(total, cfg, spec):
    if spec == "consecutive":
        return [(k, k + 1) for k in range(total - 1)]
    if spec == "plan":
        lv = cfg.long_video
        return LongVideoPlan(total, lv.frames_per_batch, lv.n_ref).boundaries()
    out = []
    for item in spec.split(","):
        i, _, j = item.partition(":")
        out.append((int(i), int(j)))
    return out


def _video_metrics(video, metrics, bounds, emb):
    rec = {}
    for m in metrics:
        if m == "mamse":
            per = [mamse(video, b) for b in bounds]
            rec["mamse"] = float(np.mean(per)) if per else 0.0
            rec["mamse_per_boundary"] = [{"boundary": list(b), "mamse": v} for b, v in zip(bounds, per)]
        elif m == "frame-consistency":
            rec["frame_consistency"] = frame_consistency(np.clip(video, 0.0, 1.0), emb)
    return rec


def cmd_eval(args, cfg: RunConfig, report):
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    for m in metrics:
        if m not in METRICS:
            raise ConfigError(f"unknown metric {m!r} (known: {', '.join(METRICS)})")
    emb = ToyEmbedder()
    if args.table:
        _ablation_table(args, cfg, report, emb)
        return
    if not args.videos:
        raise ConfigError("eval needs at least one video or --table rows")
    videos = [read_video(p) for p in args.videos]
    if "pair-mse" in metrics:
        if len(videos) != 2 or videos[0].shape != videos[1].shape:
            raise ConfigError("pair-mse needs exactly two videos of the same shape")
        report({"command": "eval", "pair": args.videos,
                "pair_mse": float(np.mean((videos[0].astype(np.float64) - videos[1]) ** 2))})
    for path, v in zip(args.videos, videos):
        bounds = _boundaries(v.shape[2], cfg, args.boundaries)
        rec = _video_metrics(v, [m for m in metrics if m != "pair-mse"], bounds, emb)
        if rec:
            report({"command": "eval", "video": path, **rec})


def _ablation_table(args, cfg, report, emb):
    """Median boundary MAMSE and mean frame consistency per labelled corpus."""
    rows = []
    for spec in args.table:
        label, sep, pattern = spec.partition("=")
        if not sep:
            raise ConfigError(f"--table expects LABEL=GLOB, got {spec!r}")
        paths = sorted(glob.glob(pattern))
        if not paths:
            raise FileNotFoundError(f"no videos match {pattern!r} for row {label!r}")
        per_video, fc = [], []
        for p in paths:
            v = read_video(p)
            bounds = _boundaries(v.shape[2], cfg, args.boundaries)
            per_video.append(float(np.mean([mamse(v, b) for b in bounds])))
            fc.append(frame_consistency(np.clip(v, 0.0, 1.0), emb))
        row = {"command": "eval", "row": label, "videos": len(paths), "median_mamse": float(np.median(per_video)),
               "mean_frame_consistency": float(np.mean(fc))}
        rows.append(row)
        report(row)
    print(f"{'method':<12}{'MAMSE %':>10}{'frame sim':>12}", file=sys.stderr)
    for r in rows:
        print(f"{r['row']:<12}{r['median_mamse']:>10.3f}{r['mean_frame_consistency']:>12.4f}", file=sys.stderr)


def cmd_stats(args, cfg: RunConfig, report):
    d = Path(args.dataset)
    manifest = json.loads((d / "manifest.json").read_text())
    scores = {}
    for sub in sorted(p for p in d.iterdir() if (p / "meta.json").is_file()):
        meta = json.loads((sub / "meta.json").read_text())
        for k, v in (meta.get("scores") or {}).items():
            scores.setdefault(k, []).append(v)
    report({"command": "stats", "candidates": manifest["candidates"], "kept": len(manifest["kept"]),
            "acceptance_rate": manifest["acceptance_rate"],
            "mean_scores": {k: float(np.mean(v)) for k, v in sorted(scores.items())}})


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. --set sampler.steps=20")
    common.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    common.add_argument("--workers", type=int, help="shorthand for --set workers=N")
    common.add_argument("--report", help="write JSON-lines report here instead of stdout")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="videdit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("render", parents=[common], help="render a toy scene from a prompt")
    r.add_argument("--prompt", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--frames", type=int, default=16)
    r.add_argument("--resolution", type=int, default=16)
    r.add_argument("--pan", default="0,0", help="camera pan in px/frame, 'dx,dy'")
    r.add_argument("--velocity", default="0,0", help="object motion in px/frame, 'dx,dy'")
    r.add_argument("--texture", type=int, default=0)
    r.add_argument("--allow-exit", action="store_true")

    g = sub.add_parser("gen-data", parents=[common], help="generate and filter a paired dataset")
    g.add_argument("--out")
    g.add_argument("--catalog", help="triplet catalog JSON (overrides datagen.catalog)")
    g.add_argument("--backbone", help="reuse a trained text-to-video bundle instead of fitting one")

    t = sub.add_parser("train", parents=[common], help="train the editing model on a dataset")
    t.add_argument("--dataset")
    t.add_argument("--out")
    t.add_argument("--init", help="initialise from this parameter bundle")
    t.add_argument("--limit", type=int, help="use only the first N kept samples")

    for name, helptext in (("edit", "edit a video of at most F frames"),
                           ("edit-long", "edit a long video batch by batch")):
        e = sub.add_parser(name, parents=[common], help=helptext)
        e.add_argument("--params")
        e.add_argument("--input", required=True)
        e.add_argument("--prompt", required=True, help="edit instruction")
        e.add_argument("--out", required=True)
        e.add_argument("--svid", type=float, help="video guidance scale")
        e.add_argument("--dump-frames", help="directory for per-frame PPM images")
        if name == "edit":
            e.add_argument("--no-sweep", action="store_true", help="single run at --svid")
        else:
            e.add_argument("--lvsc", choices=("on", "off", "both"), default="on")
            e.add_argument("--mc", choices=("on", "off"), help="motion compensation (default: long_video.mc)")
            e.add_argument("--flow-cache", help="directory for estimated flow fields")

    v = sub.add_parser("eval", parents=[common], help="compute metrics on videos")
    v.add_argument("videos", nargs="*")
    v.add_argument("--metrics", default="mamse,frame-consistency")
    v.add_argument("--boundaries", default="consecutive",
                   help="'consecutive', 'plan' (long-video batch boundaries) or 'i:j,...'")
    v.add_argument("--table", action="append", metavar="LABEL=GLOB",
                   help="ablation row over a corpus of videos; repeat per row")

    s = sub.add_parser("stats", parents=[common], help="summarise a generated dataset")
    s.add_argument("--dataset", required=True)
    return p


COMMANDS = {"render": cmd_render, "gen-data": cmd_gen_data, "train": cmd_train, "edit": cmd_edit,
            "edit-long": cmd_edit_long, "eval": cmd_eval, "stats": cmd_stats}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.workers is not None:
        overrides.append(f"workers={args.workers}")
    try:
        cfg = load_config(args.config, overrides)
        with Reporter(args.report) as report:
            COMMANDS[args.command](args, cfg, report)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 3
    except (OSError, VtenError, ValueError, KeyError, IndexError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
