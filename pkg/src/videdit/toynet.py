"""A small inflated video denoiser written directly in numpy.

Per-frame layers (convolutions, spatial self-attention, cross-attention to
the prompt) run on the ``(b*f, c, h, w)`` view; temporal attention runs on
the ``(b*h*w, f, c)`` view.  Every layer has a hand-written backward pass so
the network can be trained without an autodiff framework.

Attention layers accept an optional controller ``ctrl(name, kind, probs)``
that may record or replace the post-softmax probability matrix; prompt-to-
prompt editing is built on this hook.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .denoisers import ConditionPair
from .prompts import null_embedding
from .tensor import ShapeError, SeededRng, concat_condition, inverse_spatial, inverse_temporal, reshape_spatial, reshape_temporal


@dataclass(frozen=True)
class ToyConfig:
    latent_channels: int = 3
    cond_channels: int = 3
    width: int = 16
    attn_width: int = 16
    text_width: int = 16
    time_dim: int = 16
    blocks: int = 2
    init_scale: float = 1.0


# ---------------------------------------------------------------- primitives


def silu(x):
    return x * expit(x)


def silu_grad(x, g):
    s = expit(x)
    return g * (s + x * s * (1.0 - s))


def conv3x3(x, w, b):
    """Same-padded 3x3 convolution; returns output and the im2col matrix."""
    B, C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # B, C, H, W, 3, 3
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * H * W, C * 9)
    y = cols @ w.reshape(w.shape[0], -1).T + b
    return np.ascontiguousarray(y.reshape(B, H, W, -1).transpose(0, 3, 1, 2)), cols


def conv3x3_grad(g, cols, w, x_shape):
    B, C, H, W = x_shape
    O = w.shape[0]
    gf = g.transpose(0, 2, 3, 1).reshape(-1, O)
    dw = (gf.T @ cols).reshape(w.shape)
    db = gf.sum(axis=0)
    dcols = (gf @ w.reshape(O, -1)).reshape(B, H, W, C, 3, 3)
    dxp = np.zeros((B, C, H + 2, W + 2), dtype=g.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + H, j:j + W] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1], dw, db


def avgpool2(x):
    B, C, H, W = x.shape
    return x.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))


def avgpool2_grad(g):
    return np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25


def upsample2(x):
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def upsample2_grad(g):
    B, C, H, W = g.shape
    return g.reshape(B, C, H // 2, 2, W // 2, 2).sum(axis=(3, 5))


def softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    return (e / e.sum(axis=-1, keepdims=True, dtype=np.float64)).astype(logits.dtype)


def sinusoid(pos, dim: int) -> np.ndarray:
    pos = np.atleast_1d(np.asarray(pos, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = pos[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def attention(xq, xkv, wq, wk, wv, wo, ctrl=None, name="", kind=""):
    q = xq @ wq
    k = xkv @ wk
    v = xkv @ wv
    scale = 1.0 / np.sqrt(wq.shape[1])
    p = softmax((q @ np.swapaxes(k, -1, -2)) * scale)
    if ctrl is not None:
        p = ctrl(name, kind, p)
    o = p @ v
    return o @ wo, (xq, xkv, q, k, v, p, o, scale)


def attention_grad(g, cache, wq, wk, wv, wo, self_attn: bool):
    xq, xkv, q, k, v, p, o, scale = cache
    dwo = np.tensordot(o, g, axes=(tuple(range(o.ndim - 1)), tuple(range(g.ndim - 1))))
    do = g @ wo.T
    dp = do @ np.swapaxes(v, -1, -2)
    dv = np.swapaxes(p, -1, -2) @ do
    dl = p * (dp - (dp * p).sum(axis=-1, keepdims=True)) * scale
    dq = dl @ k
    dk = np.swapaxes(dl, -1, -2) @ q
    ax_q = tuple(range(xq.ndim - 1))
    ax_kv = tuple(range(xkv.ndim - 1))
    dwq = np.tensordot(xq, dq, axes=(ax_q, ax_q))
    dwk = np.tensordot(xkv, dk, axes=(ax_kv, ax_kv))
    dwv = np.tensordot(xkv, dv, axes=(ax_kv, ax_kv))
    dxq = dq @ wq.T
    dxkv = dk @ wk.T + dv @ wv.T
    if self_attn:
        return dxq + dxkv, None, (dwq, dwk, dwv, dwo)
    return dxq, dxkv, (dwq, dwk, dwv, dwo)


# ------------------------------------------------------------------ network


def init_params(cfg: ToyConfig, rng: SeededRng, dtype=np.float32) -> dict[str, np.ndarray]:
    """He-style initialisation; temporal attention output projections start at zero."""
    W, A, D = cfg.width, cfg.attn_width, cfg.text_width
    cin = cfg.latent_channels + cfg.cond_channels

    def normal(name, shape, fan_in):
        return (rng.child(_name_id(name)).normal(shape) * (cfg.init_scale / np.sqrt(fan_in))).astype(dtype)

    p = {
        "in.w": normal("in.w", (W, cin, 3, 3), cin * 9),
        "in.b": np.zeros(W, dtype),
        "time.w": normal("time.w", (cfg.time_dim, 2 * W), cfg.time_dim),
        "time.b": np.zeros(2 * W, dtype),
        "out.w": normal("out.w", (cfg.latent_channels, W, 3, 3), W * 9),
        "out.b": np.zeros(cfg.latent_channels, dtype),
    }
    for k in range(cfg.blocks):
        pre = f"b{k}."
        p[pre + "conv.w"] = normal(pre + "conv.w", (W, W, 3, 3), W * 9)
        p[pre + "conv.b"] = np.zeros(W, dtype)
        for att, kin in (("sa", W), ("ca", D), ("ta", W)):
            p[f"{pre}{att}.q"] = normal(f"{pre}{att}.q", (W, A), W)
            p[f"{pre}{att}.k"] = normal(f"{pre}{att}.k", (kin, A), kin)
            p[f"{pre}{att}.v"] = normal(f"{pre}{att}.v", (kin, A), kin)
            p[f"{pre}{att}.o"] = normal(f"{pre}{att}.o", (A, W), A)
        p[pre + "ta.o"] = np.zeros((A, W), dtype)
    return p


def _name_id(name: str) -> int:
    return zlib.crc32(name.encode())


@dataclass
class ToyDenoiser:
    """Callable denoiser ``eps(z_t, t, cond)`` over a parameter dictionary."""

    params: dict[str, np.ndarray]
    cfg: ToyConfig = field(default_factory=ToyConfig)
    null_text: np.ndarray | None = None

    @classmethod
    def create(cls, seed: int = 0, cfg: ToyConfig | None = None, null_text=None, dtype=np.float32):
        cfg = cfg or ToyConfig()
        if null_text is None:
            null_text = null_embedding(cfg.text_width)
        return cls(init_params(cfg, SeededRng(seed, 7), dtype), cfg, null_text)

    @property
    def dtype(self):
        return self.params["in.w"].dtype

    def __call__(self, z_t, t, cond: ConditionPair | None = None, ctrl=None):
        y, _ = self.forward(z_t, t, cond, ctrl=ctrl, keep=False)
        return y

    def _text(self, cond, b):
        c_t = None if cond is None else cond.c_t
        if c_t is None:
            c_t = np.asarray(self.null_text if self.null_text is not None else null_embedding(self.cfg.text_width))
            c_t = c_t[None] if c_t.ndim == 2 else c_t
        c_t = np.asarray(c_t, dtype=self.dtype)
        if c_t.ndim != 3 or c_t.shape[-1] != self.cfg.text_width:
            raise ShapeError(f"prompt embedding width {c_t.shape[-1:]} != {self.cfg.text_width}")
        if c_t.shape[0] == 1 and b > 1:
            c_t = np.repeat(c_t, b, axis=0)
        if c_t.shape[0] != b:
            raise ShapeError(f"prompt batch {c_t.shape[0]} != latent batch {b}")
        return c_t

    def forward(self, z_t, t, cond: ConditionPair | None = None, ctrl=None, keep=True):
        p, cfg = self.params, self.cfg
        dt = self.dtype
        z_t = np.asarray(z_t, dtype=dt)
        b, c, f, h, w = z_t.shape
        if c != cfg.latent_channels:
            raise ShapeError(f"latent has {c} channels, model expects {cfg.latent_channels}")
        if h % 2 or w % 2:
            raise ShapeError(f"spatial dims must be even, got {(h, w)}")
        c_v = None if cond is None or cond.c_v is None else np.asarray(cond.c_v, dtype=dt)
        c_t = self._text(cond, b)
        cache = {}

        x = reshape_spatial(concat_condition(z_t, c_v, cfg.cond_channels))
        h0, cache["in.cols"] = conv3x3(x, p["in.w"], p["in.b"])
        tvec = np.broadcast_to(np.asarray(t), (b,))
        temb_in = sinusoid(tvec, cfg.time_dim).astype(dt)
        temb_pre = temb_in @ p["time.w"] + p["time.b"]
        temb = np.repeat(silu(temb_pre), f, axis=0)
        shift, scale = temb[:, :cfg.width, None, None], temb[:, cfg.width:, None, None]
        h1 = h0 * (1.0 + scale) + shift
        a = silu(h1)
        d = avgpool2(a)
        cache.update(x_shape=x.shape, temb_in=temb_in, temb_pre=temb_pre, h0=h0, scale=scale, h1=h1)

        B, C, hh, ww = d.shape
        ctext = np.repeat(c_t, f, axis=0)
        pos = sinusoid(np.arange(f), C).astype(dt)
        for k in range(cfg.blocks):
            pre = f"b{k}."
            r_in = silu(d)
            r, cols = conv3x3(r_in, p[pre + "conv.w"], p[pre + "conv.b"])
            cache[pre + "conv"] = (d, cols)
            d = d + r
            tok = d.transpose(0, 2, 3, 1).reshape(B, hh * ww, C)
            out, cache[pre + "sa"] = attention(tok, tok, p[pre + "sa.q"], p[pre + "sa.k"], p[pre + "sa.v"], p[pre + "sa.o"],
                                               ctrl, pre + "sa", "self")
            tok = tok + out
            out, cache[pre + "ca"] = attention(tok, ctext, p[pre + "ca.q"], p[pre + "ca.k"], p[pre + "ca.v"], p[pre + "ca.o"],
                                               ctrl, pre + "ca", "cross")
            tok = tok + out
            d5 = inverse_spatial(tok.reshape(B, hh, ww, C).transpose(0, 3, 1, 2), f)
            seq = reshape_temporal(d5)
            seq_in = seq + pos
            out, cache[pre + "ta"] = attention(seq_in, seq_in, p[pre + "ta.q"], p[pre + "ta.k"], p[pre + "ta.v"], p[pre + "ta.o"],
                                               ctrl, pre + "ta", "temporal")
            seq = seq + out
            d = reshape_spatial(inverse_temporal(seq, b, hh, ww))

        u = upsample2(d) + a
        u_act = silu(u)
        y, cache["out.cols"] = conv3x3(u_act, p["out.w"], p["out.b"])
        cache.update(u=u, u_shape=u.shape, dims=(b, c, f, h, w, hh, ww))
        y5 = inverse_spatial(y, f)
        return y5, (cache if keep else None)

    def backward(self, cache, g5) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss w.r.t. every parameter, given dL/d(output)."""
        p, cfg = self.params, self.cfg
        b, c, f, h, w, hh, ww = cache["dims"]
        grads = {}
        g = reshape_spatial(np.asarray(g5, dtype=self.dtype))
        du_act, grads["out.w"], grads["out.b"] = conv3x3_grad(g, cache["out.cols"], p["out.w"], cache["u_shape"])
        du = silu_grad(cache["u"], du_act)
        da = du.copy()
        dd = upsample2_grad(du)
        B, C = dd.shape[:2]
        for k in reversed(range(cfg.blocks)):
            pre = f"b{k}."
            dseq = reshape_temporal(inverse_spatial(dd, f))
            dseq_in, _, gw = attention_grad(dseq, cache[pre + "ta"], p[pre + "ta.q"], p[pre + "ta.k"], p[pre + "ta.v"],
                                            p[pre + "ta.o"], True)
            _store(grads, pre + "ta", gw)
            dseq = dseq + dseq_in
            dtok = inverse_temporal(dseq, b, hh, ww)
            dtok = reshape_spatial(dtok).transpose(0, 2, 3, 1).reshape(B, hh * ww, C)
            dq, _, gw = attention_grad(dtok, cache[pre + "ca"], p[pre + "ca.q"], p[pre + "ca.k"], p[pre + "ca.v"],
                                       p[pre + "ca.o"], False)
            _store(grads, pre + "ca", gw)
            dtok = dtok + dq
            dx, _, gw = attention_grad(dtok, cache[pre + "sa"], p[pre + "sa.q"], p[pre + "sa.k"], p[pre + "sa.v"],
                                       p[pre + "sa.o"], True)
            _store(grads, pre + "sa", gw)
            dtok = dtok + dx
            dd = dtok.reshape(B, hh, ww, C).transpose(0, 3, 1, 2)
            d_in, cols = cache[pre + "conv"]
            dr_in, grads[pre + "conv.w"], grads[pre + "conv.b"] = conv3x3_grad(dd, cols, p[pre + "conv.w"], d_in.shape)
            dd = dd + silu_grad(d_in, dr_in)
        da = da + avgpool2_grad(dd)
        dh1 = silu_grad(cache["h1"], da)
        dshift = dh1.sum(axis=(2, 3))
        dscale = (dh1 * cache["h0"]).sum(axis=(2, 3))
        dtemb = np.concatenate([dshift, dscale], axis=1).reshape(b, f, -1).sum(axis=1)
        dtemb_pre = silu_grad(cache["temb_pre"], dtemb)
        grads["time.w"] = cache["temb_in"].T @ dtemb_pre
        grads["time.b"] = dtemb_pre.sum(axis=0)
        _, grads["in.w"], grads["in.b"] = conv3x3_grad(dh1 * (1.0 + cache["scale"]), cache["in.cols"], p["in.w"], cache["x_shape"])
        return {k: v.astype(self.dtype, copy=False) for k, v in grads.items()}


def _store(grads, prefix, gw):
    for suffix, gv in zip(("q", "k", "v", "o"), gw):
        grads[f"{prefix}.{suffix}"] = gv
