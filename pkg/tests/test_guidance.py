import numpy as np
import pytest

from videdit.denoisers import AnalyticGaussianDenoiser, ConditionPair
from videdit.guidance import (
    GuidanceConfig,
    SweepError,
    SweepGrid,
    cfg_predict,
    combine_guidance,
    initial_noise,
    resize_video,
    sample_video,
    sweep_and_pick,
)
from videdit.schedule import make_plan, make_schedule
from videdit.tensor import SeededRng

S = make_schedule()
PLAN = make_plan(30, S.T)


class ModeProbe:
    """Returns a distinct constant per conditioning mode."""

    def __init__(self, values):
        self.values = values
        self.calls = []

    def __call__(self, z, t, cond):
        key = (cond.c_v is not None, cond.c_t is not None)
        self.calls.append(key)
        return np.full(z.shape, self.values[key], np.float32)


def full_cond(shape=(1, 2, 2, 4, 4)):
    return ConditionPair(np.ones(shape, np.float32), np.ones((1, 8, 16), np.float32))


def test_scalar_probe():
    probe = ModeProbe({(False, False): 0.0, (True, False): 1.0, (True, True): 2.0})
    out = cfg_predict(probe, np.zeros((1, 1, 1, 1, 1), np.float32), 5, full_cond((1, 1, 1, 1, 1)), GuidanceConfig(1.5, 10))
    assert out.item() == pytest.approx(11.5)
    assert sorted(probe.calls) == [(False, False), (True, False), (True, True)]


def test_unit_scales_return_full_prediction():
    rng = np.random.default_rng(0)
    preds = {k: rng.standard_normal((1, 2, 3, 4, 4)) for k in range(3)}
    out = combine_guidance(preds[0], preds[1], preds[2], GuidanceConfig(1.0, 1.0))
    assert np.abs(out - preds[2]).max() < 1e-6


def test_affine_in_each_prediction():
    z = np.zeros((1, 1, 1, 2, 2))
    g = GuidanceConfig(1.8, 7.0)
    coeff = {0: 1 - g.s_v, 1: g.s_v - g.s_t, 2: g.s_t}
    for k in range(3):
        basis = [z + (1.0 if j == k else 0.0) for j in range(3)]
        np.testing.assert_allclose(combine_guidance(*basis, g), coeff[k], rtol=1e-6)


def test_condition_blind_denoiser_gives_unconditional():
    den = AnalyticGaussianDenoiser(S, 0.2, 0.5)
    z = SeededRng(1).normal((1, 2, 2, 4, 4))
    out = cfg_predict(den, z, 400, full_cond(), GuidanceConfig(1.8, 10))
    np.testing.assert_allclose(out, den(z, 400), atol=1e-5)


def test_guidance_rejects_null_conditions_and_small_scales():
    den = AnalyticGaussianDenoiser(S, 0.0, 1.0)
    z = np.zeros((1, 1, 1, 2, 2), np.float32)
    for cond in (ConditionPair(None, np.ones((1, 8, 16))), ConditionPair(np.ones(z.shape), None)):
        with pytest.raises(ValueError):
            cfg_predict(den, z, 3, cond, GuidanceConfig())
    with pytest.raises(ValueError):
        GuidanceConfig(0.9, 10)


def test_sample_video_deterministic_and_seed_sensitive():
    den = AnalyticGaussianDenoiser(S, 0.3, 0.4)
    a = sample_video(den, full_cond(), GuidanceConfig(), PLAN, 11, S)
    b = sample_video(den, full_cond(), GuidanceConfig(), PLAN, 11, S)
    c = sample_video(den, full_cond(), GuidanceConfig(), PLAN, 12, S)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_one_step_plan_is_finite():
    den = AnalyticGaussianDenoiser(S, 0.3, 0.4)
    out = sample_video(den, full_cond(), GuidanceConfig(), make_plan(1, S.T), 0, S)
    assert np.all(np.isfinite(out))


def ddim_moments(mu, sigma0, plan, s):
    """Exact mean and variance after deterministic DDIM with the exact Gaussian denoiser.

    Each step is affine in z_t, so the moments propagate in closed form from z ~ N(0, 1).
    """
    m, var = 0.0, 1.0
    for t, t_prev in plan.pairs():
        a, b = s.coeffs(t)
        v = a * a * sigma0**2 + b * b
        if t_prev == -1:
            k, a_prev = a * sigma0**2 / v, 1.0
        else:
            a_prev, b_prev = s.coeffs(t_prev)
            k = (a * a_prev * sigma0**2 + b * b_prev) / v
        m = k * m + (a_prev - k * a) * mu
        var *= k * k
    return m, var


@pytest.mark.parametrize("mu, sigma0", [(0.7, 0.5), (-0.2, 1.0)])
def test_analytic_sampling_matches_exact_ddim_moments(mu, sigma0):
    n = 1000
    den = AnalyticGaussianDenoiser(S, mu, sigma0)
    samples = np.stack([sample_video(den, ConditionPair(), GuidanceConfig(), PLAN, seed, S, shape=(1, 1, 1, 2, 2),
                                     guided=False).ravel() for seed in range(n)]).astype(np.float64)
    m, var = ddim_moments(mu, sigma0, PLAN, S)
    sd = np.sqrt(var)
    assert np.all(np.abs(samples.mean(axis=0) - m) < 3 * sd / np.sqrt(n))
    # sample variance of n Gaussians has relative standard error sqrt(2 / (n - 1))
    assert np.all(np.abs(samples.var(axis=0, ddof=1) / var - 1) < 3 * np.sqrt(2 / (n - 1)))
    assert abs(m - mu) < 3 * sigma0 / np.sqrt(n)


def test_ddim_moments_converge_with_many_steps():
    m, var = ddim_moments(0.3, 0.5, make_plan(1000, S.T), S)
    assert abs(m - 0.3) < 1e-2 and abs(var / 0.25 - 1) < 0.02


def test_initial_noise_streams():
    a = initial_noise((1, 1, 2, 2, 2), 3)
    assert np.array_equal(a, initial_noise((1, 1, 2, 2, 2), 3, stream=0))
    assert not np.array_equal(a, initial_noise((1, 1, 2, 2, 2), 3, stream=1))


def test_resize_video_shapes_and_identity():
    v = SeededRng(0).normal((1, 3, 2, 16, 16))
    assert resize_video(v, (32, 32)).shape == (1, 3, 2, 32, 32)
    np.testing.assert_array_equal(resize_video(v, (16, 16)), v)
    const = np.full((1, 1, 1, 4, 4), 0.25, np.float32)
    np.testing.assert_allclose(resize_video(const, (6, 6)), 0.25, atol=1e-7)


def _mean_scorer(frame, prompt):
    return float(frame.mean())


def test_sweep_scores_six_cells_and_picks_best():
    den = AnalyticGaussianDenoiser(S, 0.0, 1.0)
    cond = ConditionPair(np.zeros((1, 3, 2, 16, 16), np.float32), np.ones((1, 8, 16), np.float32))
    video, chosen, cells = sweep_and_pick(den, cond, SweepGrid(), _mean_scorer, "x", 0, make_plan(5, S.T), S)
    assert len(cells) == 6
    assert [(c.s_v, c.resolution) for c in cells] == SweepGrid().cells()
    best = max(c.score for c in cells)
    winner = [c for c in cells if (c.s_v, c.resolution) == chosen][0]
    assert winner.score == best and all(winner.score >= c.score for c in cells)
    assert np.array_equal(video, winner.video)
    assert video.shape[-2:] == chosen[1]


def test_sweep_tie_break_first_cell_and_single_cell():
    den = AnalyticGaussianDenoiser(S, 0.0, 1.0)
    cond = ConditionPair(np.zeros((1, 3, 2, 8, 8), np.float32), np.ones((1, 8, 16), np.float32))
    _, chosen, _ = sweep_and_pick(den, cond, SweepGrid(resolutions=((8, 8), (12, 12))), lambda f, p: 1.0, "x", 0,
                                  make_plan(3, S.T), S)
    assert chosen == (1.2, (8, 8))
    grid = SweepGrid(s_v=(1.5,), resolutions=((8, 8),))
    video, chosen, cells = sweep_and_pick(den, cond, grid, _mean_scorer, "x", 4, make_plan(3, S.T), S)
    assert chosen == (1.5, (8, 8)) and len(cells) == 1
    np.testing.assert_array_equal(video, sample_video(den, cond, GuidanceConfig(1.5, 10), make_plan(3, S.T), 4, S))


def test_sweep_names_failing_cell():
    den = AnalyticGaussianDenoiser(S, 0.0, 1.0)
    cond = ConditionPair(np.zeros((1, 3, 1, 8, 8), np.float32), np.ones((1, 8, 16), np.float32))

    def scorer(frame, prompt):
        if frame.shape[-1] == 12:
            raise RuntimeError("boom")
        return 0.0

    with pytest.raises(SweepError, match=r"resolution=\(12, 12\)"):
        sweep_and_pick(den, cond, SweepGrid(resolutions=((8, 8), (12, 12))), scorer, "x", 0, make_plan(2, S.T), S)


def test_sweep_grid_validation():
    with pytest.raises(ValueError):
        SweepGrid(s_v=())
