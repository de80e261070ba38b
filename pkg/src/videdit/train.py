"""Noise-prediction training for the toy denoiser."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .denoisers import ConditionPair, condition_dropout
from .schedule import NoiseSchedule, forward_diffuse
from .tensor import SeededRng
from .toynet import ToyDenoiser


@dataclass(frozen=True)
class TrainExample:
    target: np.ndarray                 # clean (edited) video, (1, c, f, h, w)
    c_v: np.ndarray | None = None      # input video
    c_t: np.ndarray | None = None      # (L, d) prompt embedding


@dataclass
class Adam:
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def update(self, params: dict, grads: dict) -> dict:
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        out = {}
        for k, p in params.items():
            g = grads[k].astype(np.float64)
            m = self.m.get(k, 0.0) * b1 + (1 - b1) * g
            v = self.v.get(k, 0.0) * b2 + (1 - b2) * g * g
            self.m[k], self.v[k] = m, v
            mhat = m / (1 - b1**self.step)
            vhat = v / (1 - b2**self.step)
            out[k] = (p - (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)).astype(p.dtype)
        return out


def example_loss(net: ToyDenoiser, ex: TrainExample, t: int, eps: np.ndarray, cond: ConditionPair,
                 schedule: NoiseSchedule, grad: bool = True):
    z_t = forward_diffuse(ex.target, eps, t, schedule).astype(net.dtype)
    y, cache = net.forward(z_t, t, cond, keep=grad)
    diff = y.astype(np.float64) - eps
    loss = float(np.mean(diff**2))
    if not grad:
        return loss, None
    return loss, net.backward(cache, (2.0 * diff / diff.size).astype(net.dtype))


def _as_cond(ex: TrainExample) -> ConditionPair:
    c_t = None if ex.c_t is None else np.asarray(ex.c_t)[None]
    return ConditionPair(ex.c_v, c_t)


def train_step(net: ToyDenoiser, batch: list[TrainExample], rng: SeededRng, schedule: NoiseSchedule,
               opt: Adam, p_v: float = 0.05, p_t: float = 0.05, predictor=None) -> tuple[ToyDenoiser, float]:
    """One optimiser step on the mean noise-prediction loss over ``batch``.

    ``predictor`` replaces the network's prediction when computing the
    reported loss (used to check the loss of a perfect predictor); no update
    is made in that case.
    """
    if not batch:
        raise ValueError("empty training batch")
    total = 0.0
    grads = None
    for ex in batch:
        t = int(rng.integers(0, schedule.T - 1))
        eps = rng.normal(ex.target.shape)
        cond = condition_dropout(_as_cond(ex), rng, p_v, p_t)
        if predictor is not None:
            z_t = forward_diffuse(ex.target, eps, t, schedule)
            total += float(np.mean((predictor(z_t, t, cond).astype(np.float64) - eps) ** 2))
            continue
        loss, g = example_loss(net, ex, t, eps, cond, schedule)
        total += loss
        grads = g if grads is None else {k: grads[k] + g[k] for k in grads}
    if predictor is not None:
        return net, total / len(batch)
    grads = {k: v / len(batch) for k, v in grads.items()}
    return replace(net, params=opt.update(net.params, grads)), total / len(batch)


def probe_loss(net: ToyDenoiser, ex: TrainExample, schedule: NoiseSchedule, seed: int = 0, n: int = 16) -> float:
    """Loss on a fixed set of timesteps and noises, so runs are comparable."""
    rng = SeededRng(seed, 0x9B0)
    ts = np.linspace(0, schedule.T - 1, n).round().astype(int)
    cond = _as_cond(ex)
    return float(np.mean([example_loss(net, ex, int(t), rng.normal(ex.target.shape), cond, schedule, grad=False)[0]
                          for t in ts]))


def fit(net: ToyDenoiser, examples: list[TrainExample], steps: int, seed: int, schedule: NoiseSchedule,
        lr: float = 2e-3, batch_size: int = 1, p_v: float = 0.05, p_t: float = 0.05, log=None):
    """Run ``steps`` training steps cycling through ``examples``; returns (net, losses)."""
    if steps and not examples:
        raise ValueError("no training examples")
    opt = Adam(lr=lr)
    losses = []
    order_rng = SeededRng(seed, 0x0D3)
    order: list[int] = []
    for step in range(steps):
        batch = []
        for _ in range(batch_size):
            if not order:
                order = list(order_rng.permutation(len(examples)))
            batch.append(examples[order.pop()])
        net, loss = train_step(net, batch, SeededRng(seed, (0x57E, step)), schedule, opt, p_v, p_t)
        losses.append(loss)
        if log is not None:
            log(step, loss)
    return net, losses
