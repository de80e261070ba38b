"""Acceptance suite: ten end-to-end criteria, each at its stated tolerance.

Every test records a one-line PASS/FAIL verdict with the measured numbers;
``conftest.py`` prints the lines at the end of the run.
"""
import json
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from videdit.cli import load_model, main
from videdit.denoisers import AnalyticGaussianDenoiser, ConditionPair, PanningGaussianDenoiser
from videdit.guidance import GuidanceConfig, cfg_predict, combine_guidance, sample_video
from videdit.lvsc import LongVideoPlan, boundary_report, lvsc_correct, mc_lvsc_correct, sample_long_video
from videdit.prompts import PromptTriplet, default_catalog, embed_prompt, save_catalog, scene_prompt
from videdit.ptp import PairedSample, ptp_generate_pair, score_and_filter
from videdit.schedule import forward_diffuse, infer_reference_noise, make_plan, make_schedule
from videdit.tensor import SeededRng
from videdit.toynet import ToyDenoiser
from videdit.train import TrainExample, fit, probe_loss
from videdit.vten import read_bundle, write_vten
from videdit.world import SceneSpec, ToyEmbedder, render_scene

S = make_schedule()
DATA = Path(__file__).parent / "data"


def verdict(k, ok, detail):
    ACCEPTANCE_LINES[k] = f"acceptance {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[k])
    assert ok, detail


# 1 ----------------------------------------------------------------------


def test_01_reference_noise_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for k in range(100):
        t = int(rng.integers(0, S.T))
        z0 = SeededRng(11, (k, 0)).normal((1, 3, 4, 8, 8))
        eps = SeededRng(11, (k, 1)).normal(z0.shape)
        back = infer_reference_noise(forward_diffuse(z0, eps, t, S), z0, t, S)
        worst = max(worst, float(np.abs(back - eps).max() / np.abs(eps).max()))
    dt = time.perf_counter() - t0
    verdict(1, worst < 1e-5 and dt < 1.0, f"max relative error {worst:.2e} (< 1e-5), {dt:.2f} s (< 1 s)")


# 2 ----------------------------------------------------------------------


class _ModeConstant:
    def __init__(self, values):
        self.values = values

    def __call__(self, z, t, cond):
        return np.full(z.shape, self.values[(cond.c_v is not None, cond.c_t is not None)], np.float32)


def test_02_guidance_degeneracy_and_probe():
    rng = np.random.default_rng(5)
    preds = [rng.standard_normal((1, 3, 4, 8, 8)).astype(np.float32) for _ in range(3)]
    unit_err = float(np.abs(combine_guidance(*preds, GuidanceConfig(1.0, 1.0)) - preds[2]).max())
    probe = _ModeConstant({(False, False): 0.0, (True, False): 1.0, (True, True): 2.0})
    cond = ConditionPair(np.zeros((1, 1, 1, 1, 1), np.float32), np.ones((1, 8, 16), np.float32))
    value = cfg_predict(probe, np.zeros((1, 1, 1, 1, 1), np.float32), 10, cond, GuidanceConfig(1.5, 10.0)).item()
    ok = unit_err < 1e-6 and value == 11.5
    verdict(2, ok, f"unit-scale error {unit_err:.1e} (< 1e-6), probe {value} (== 11.5)")


# 3 ----------------------------------------------------------------------


def test_03_inflation_identity():
    worst = 0.0
    for draw in range(10):
        net = ToyDenoiser.create(100 + draw)
        z = SeededRng(draw, 1).normal((2, 3, 5, 8, 8))
        cond = ConditionPair(SeededRng(draw, 2).normal(z.shape),
                             np.stack([embed_prompt("make the circle green"), embed_prompt("turn it red")]))
        t = int(SeededRng(draw, 3).integers(0, S.T - 1))
        full = net(z, t, cond)
        for k in range(z.shape[2]):
            single = net(z[:, :, k:k + 1], t, cond.frames(k, k + 1))
            worst = max(worst, float(np.abs(full[:, :, k:k + 1] - single).max()))
    verdict(3, worst < 1e-6, f"max |5D - per-frame| {worst:.1e} over 10 draws (< 1e-6)")


# 4 ----------------------------------------------------------------------


def _point_mass(z, t, cond):
    """Exact noise for the clean video equal to the condition: every reference prediction is closed-form."""
    a, b = S.coeffs(t)
    return ((z.astype(np.float64) - a * cond.c_v) / b).astype(np.float32)


def test_04_lvsc_identity():
    c_v = np.clip(render_scene(SceneSpec(pan=(1, 0), frames=32, allow_exit=True, texture=2), 16), 0, 1)
    lp = LongVideoPlan(32, 16, 4)
    plan = make_plan(30, S.T)
    cond = ConditionPair(c_v, None)
    corrected = sample_long_video(_point_mass, cond, GuidanceConfig(), plan, lp, 3, S, mode="lvsc", guided=False)
    plain = sample_long_video(_point_mass, cond, GuidanceConfig(), plan, lp, 3, S, mode="none", guided=False)
    diff = float(np.abs(corrected - plain).max())
    eps = SeededRng(4).normal((1, 3, 16, 16, 16))
    ref = SeededRng(5).normal((1, 3, 4, 16, 16))
    zero = [[np.zeros((16, 16, 2), np.float32)] * 12 for _ in range(4)]
    exact = bool(np.array_equal(mc_lvsc_correct(eps, ref, zero, 4), lvsc_correct(eps, ref, 4)))
    verdict(4, diff < 1e-5 and exact, f"corrected vs uncorrected {diff:.1e} (< 1e-5), zero-flow MC exact: {exact}")


# 5 ----------------------------------------------------------------------


def test_05_analytic_sampling_moments():
    t0 = time.perf_counter()
    mu, sigma0, n = 0.7, 0.5, 1000
    den = AnalyticGaussianDenoiser(S, mu, sigma0)
    plan = make_plan(30, S.T)
    x = np.stack([sample_video(den, ConditionPair(), GuidanceConfig(), plan, seed, S, shape=(1, 1, 1, 2, 2),
                               guided=False).ravel() for seed in range(n)]).astype(np.float64)
    dt = time.perf_counter() - t0
    mean_err = float(np.abs(x.mean(axis=0) - mu).max())
    var_ratio = x.var(axis=0, ddof=1) / sigma0**2
    mean_ok = mean_err < 3 * sigma0 / np.sqrt(n)
    var_ok = bool(np.all(np.abs(var_ratio - 1) < 0.10))
    verdict(5, mean_ok and var_ok and dt < 120,
            f"mean err {mean_err:.4f} (< {3 * sigma0 / np.sqrt(n):.4f}), var/sigma0^2 "
            f"{var_ratio.min():.3f}..{var_ratio.max():.3f} (within 10%), {dt:.0f} s")


# 6 ----------------------------------------------------------------------

PANS = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (2, 0), (-2, 0), (1, -1), (-1, 1), (0, 2)]
FULL_SCALE_MAMSE = {"none": 2.02, "lvsc": 1.44, "mc": 1.37}


@pytest.mark.slow
def test_06_long_video_boundary_mamse():
    t0 = time.perf_counter()
    plan = make_plan(30, S.T)
    lp = LongVideoPlan(32, 16, 4)
    emb = ToyEmbedder()
    per = {m: [] for m in ("none", "lvsc", "mc")}
    for i in range(20):
        pan = PANS[i % len(PANS)]
        spec = SceneSpec(color=["red", "green", "yellow", "white"][i % 4], bg=["blue", "black", "magenta"][i % 3],
                         texture=i, pan=pan, frames=32, allow_exit=True, pos=(0.3 + 0.02 * i, 0.5))
        video = render_scene(spec, 32)
        den = PanningGaussianDenoiser(S, sigma0=0.1, pan=pan, corr_px=2.0)
        cond = ConditionPair(video, embed_prompt("keep the scene")[None])
        for mode in per:
            out = sample_long_video(den, cond, GuidanceConfig(1.0, 1.0), plan, lp, i, S, mode=mode)
            per[mode].append(float(np.mean([r["mamse"] for r in boundary_report(out, lp, emb)])))
    med = {m: float(np.median(v)) for m, v in per.items()}
    dt = time.perf_counter() - t0
    ok = med["none"] > med["lvsc"] and med["mc"] <= med["lvsc"] and dt < 1800
    ref = " / ".join(f"{FULL_SCALE_MAMSE[m]:.2f}" for m in per)
    verdict(6, ok, f"median boundary MAMSE none {med['none']:.3f} > lvsc {med['lvsc']:.3f} >= mc {med['mc']:.4f} % "
                   f"(full-scale reference {ref} %), {dt:.0f} s")


# 7 ----------------------------------------------------------------------


@pytest.mark.slow
def test_07_ptp_identity_and_structure():
    net = load_model(DATA / "ptp_backbone")
    plan = make_plan(30, S.T)
    shape = (1, 3, 16, 16, 16)
    cat = default_catalog()
    ident = []
    for k in range(3):
        same = PromptTriplet(cat[k].input_prompt, "keep same", cat[k].input_prompt)
        a, b = ptp_generate_pair(net, same, 50 + k, 0.4, 0.7, 8.0, plan, S, shape)
        ident.append(bool(np.array_equal(a, b)))
    medians = []
    for cutoff in (0.0, 0.3, 0.45):
        mse = []
        for i, tr in enumerate(cat[:20]):
            a, b = ptp_generate_pair(net, tr, 100 + i, cutoff, 0.7, 8.0, plan, S, shape)
            mse.append(float(np.mean((a.astype(np.float64) - b) ** 2)))
        medians.append(float(np.median(mse)))
    mono = all(medians[j + 1] <= medians[j] for j in range(2))
    verdict(7, all(ident) and mono, f"identical-prompt pairs bitwise equal: {all(ident)}; median MSE over self cutoff "
                                    f"0/0.3/0.45 = {' / '.join(f'{m:.5f}' for m in medians)} (non-increasing)")


# 8 ----------------------------------------------------------------------


def _clip_video(color, shape, bg):
    return render_scene(SceneSpec(shape=shape, color=color, bg=bg, size=0.3, frames=2), 16)


def _filter_corpus():
    """Twelve samples whose keep/drop outcome is fixed by the embedding geometry, plus the reason."""
    out = []
    for a, b, bg in (("red", "green", "blue"), ("yellow", "cyan", "black"), ("white", "magenta", "green"),
                     ("blue", "red", "white")):
        tr = PromptTriplet(scene_prompt(a, "circle", bg), f"make the circle {b}", scene_prompt(b, "circle", bg))
        out.append((PairedSample(_clip_video(a, "circle", bg), _clip_video(b, "circle", bg), tr), True, None))
    # reversed edit: the videos move against the text direction
    for a, b, bg in (("green", "yellow", "magenta"), ("cyan", "white", "red")):
        tr = PromptTriplet(scene_prompt(a, "diamond", bg), f"make the diamond {b}", scene_prompt(b, "diamond", bg))
        out.append((PairedSample(_clip_video(b, "diamond", bg), _clip_video(a, "diamond", bg), tr), False, "direction"))
    # nothing changed: direction score is exactly zero
    for a, b, bg in (("red", "white", "black"), ("magenta", "green", "blue")):
        tr = PromptTriplet(scene_prompt(a, "square", bg), f"make the square {b}", scene_prompt(b, "square", bg))
        v = _clip_video(a, "square", bg)
        out.append((PairedSample(v, v.copy(), tr), False, "direction"))
    # background recoloured: the frame histogram changes wholesale
    for a, bg, nbg in (("red", "blue", "yellow"), ("white", "black", "green")):
        tr = PromptTriplet(scene_prompt(a, "circle", bg), f"turn the background {nbg}", scene_prompt(a, "circle", nbg))
        out.append((PairedSample(_clip_video(a, "circle", bg), _clip_video(a, "circle", nbg), tr), False, "frame"))
    # input video does not show the input prompt
    for a, b, bg in (("red", "green", "blue"), ("yellow", "cyan", "white")):
        tr = PromptTriplet(scene_prompt(a, "circle", bg), f"make the circle {b}", scene_prompt(b, "circle", bg))
        out.append((PairedSample(_clip_video("black", "circle", "magenta"), _clip_video(b, "circle", "magenta"), tr),
                    False, "text_in"))
    return out


def test_08_filter_contract():
    emb = ToyEmbedder()
    corpus = _filter_corpus()
    kept = [score_and_filter(s, emb).kept for s, _, _ in corpus]
    intended = [k for _, k, _ in corpus]
    reasons_ok = True
    for (s, _, reason), decided in zip(corpus, kept):
        if reason is not None:
            scored = score_and_filter(s, emb)
            th = {"text_in": 0.2, "text_out": 0.2, "direction": 0.2, "frame": 0.5}
            reasons_ok &= scored.scores[reason] <= th[reason]
    ident = corpus[6][0]
    dir_zero = score_and_filter(ident, emb).scores["direction"] == 0.0
    ok = kept == intended and reasons_ok and dir_zero and not score_and_filter(ident, emb).kept
    verdict(8, ok, f"keep set {sum(kept)}/12 matches intended {sum(intended)}/12: {kept == intended}; "
                   f"rejections fail on the intended score: {reasons_ok}; identical pair direction 0 and dropped: {dir_zero}")


# 9 ----------------------------------------------------------------------


def test_09_overfit_and_gradient_probe():
    x_in = render_scene(SceneSpec(color="red", bg="blue"), 16)
    x_ed = render_scene(SceneSpec(color="green", bg="blue"), 16)
    ex = TrainExample(x_ed, x_in, embed_prompt("make the circle green"))
    net = ToyDenoiser.create(0)
    before = probe_loss(net, ex, S)
    net, _ = fit(net, [ex], 500, 0, S, lr=4e-3)
    ratio = probe_loss(net, ex, S) / before

    probe_net = ToyDenoiser.create(5, dtype=np.float64)
    for k in range(probe_net.cfg.blocks):
        probe_net.params[f"b{k}.ta.o"] = SeededRng(20 + k).normal((16, 16)).astype(np.float64) * 0.2
    z = SeededRng(1).normal((1, 3, 3, 8, 8)).astype(np.float64)
    cond = ConditionPair(SeededRng(2).normal(z.shape), embed_prompt("make it a square")[None])
    target = SeededRng(3).normal(z.shape).astype(np.float64)

    def loss_grads(params):
        m = ToyDenoiser(params, probe_net.cfg, probe_net.null_text)
        y, cache = m.forward(z, 321, cond)
        d = y - target
        return float(np.mean(d**2)), m.backward(cache, 2 * d / d.size)

    _, grads = loss_grads(probe_net.params)
    rng = SeededRng(77)
    direction = {n: rng.child(i).normal(p.shape).astype(np.float64) for i, (n, p) in enumerate(probe_net.params.items())}
    analytic = sum(float(np.sum(grads[n] * direction[n])) for n in direction)
    h = 1e-5
    plus = loss_grads({n: p + h * direction[n] for n, p in probe_net.params.items()})[0]
    minus = loss_grads({n: p - h * direction[n] for n, p in probe_net.params.items()})[0]
    numeric = (plus - minus) / (2 * h)
    rel = abs(analytic - numeric) / abs(numeric)
    verdict(9, ratio < 0.10 and rel < 1e-3, f"500-step loss ratio {ratio:.3f} (< 0.10), gradient probe relative "
                                            f"error {rel:.1e} (< 1e-3)")


# 10 ---------------------------------------------------------------------

E2E_CONFIG = {
    "seed": 3,
    "sampler": {"steps": 4},
    "long_video": {"frames_per_batch": 4, "n_ref": 1, "mc": True},
    "datagen": {"seeds_per_triplet": 2, "frames": 4, "resolution": 8, "ptp_steps": 4, "backbone_steps": 20,
                "thresholds": {"text_in": -1, "text_out": -1, "direction": -1, "frame": -1}},
    "train": {"steps": 10, "batch_size": 2},
}


def _pipeline(root: Path, cfg: Path, catalog: Path, long_input: Path):
    common = ["--config", str(cfg), "--report", str(root / "report.jsonl")]
    assert main(["gen-data", *common, "--catalog", str(catalog), "--out", str(root / "ds")]) == 0
    assert main(["train", *common, "--dataset", str(root / "ds"), "--out", str(root / "model")]) == 0
    assert main(["edit-long", *common, "--params", str(root / "model"), "--input", str(long_input),
                 "--prompt", "make the circle green", "--out", str(root / "long.vten"), "--lvsc", "both"]) == 0


def test_10_end_to_end_determinism(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps(E2E_CONFIG))
    catalog = tmp_path / "catalog.json"
    save_catalog(catalog, default_catalog()[:2])
    long_input = tmp_path / "input.vten"
    write_vten(long_input, render_scene(SceneSpec(frames=10, pan=(1, 0), allow_exit=True), 8))
    for run in ("a", "b"):
        _pipeline(tmp_path / run, cfg, catalog, long_input)
    a, b = tmp_path / "a", tmp_path / "b"
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    same_tree = files == files_b
    differing = [str(f) for f in files if (a / f).read_bytes() != (b / f).read_bytes()]
    # reports embed their own output paths, so compare them with the run directory masked
    differing = [f for f in differing if f != "report.jsonl"]
    rep_a = (a / "report.jsonl").read_text().replace(str(a), "RUN")
    rep_b = (b / "report.jsonl").read_text().replace(str(b), "RUN")
    bundles_equal = all(np.array_equal(x, y) for x, y in zip(read_bundle(a / "model")[0].values(),
                                                             read_bundle(b / "model")[0].values()))
    ok = same_tree and not differing and rep_a == rep_b and bundles_equal
    verdict(10, ok, f"{len(files)} files compared bitwise (manifests, bundles, outputs); differing: "
                    f"{differing or 'none'}; reports equal: {rep_a == rep_b}")
