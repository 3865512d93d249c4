"""Conditional transformer noise predictor.

Pre-normalised blocks (RMSNorm) with rotary position embeddings and a SwiGLU
feed-forward. Each of the three can be switched off for ablations: without
RMSNorm the block falls back to post-LayerNorm, without SwiGLU the FFN is a
plain SiLU MLP, and without RoPE the attention has no positional signal.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .tensor import RngStream, Tensor

RMS_EPS = 1e-6
LN_EPS = 1e-5
OMEGA_SCALE = 100.0
INIT_STD = 0.02


# -------------------------------------------------------------- primitives
def rmsnorm(x: Tensor, gain: Tensor, eps: float = RMS_EPS) -> Tensor:
    """x / sqrt(mean(x^2) + eps) * gain over the last axis."""
    xd, gd = x.data, gain.data
    if xd.shape[-1] != gd.shape[-1]:
        raise T.ShapeError(f"gain extent {gd.shape} does not match {xd.shape}")
    r = 1.0 / np.sqrt(np.mean(xd * xd, axis=-1, keepdims=True) + eps)
    n = xd * r

    def bw(g):
        gn = g * gd
        gx = r * (gn - n * np.mean(gn * n, axis=-1, keepdims=True))
        gg = (g * n).reshape(-1, gd.shape[-1]).sum(axis=0)
        return gx, gg

    return T.from_op(n * gd, (x, gain), bw)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    xd, gd = x.data, gain.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    r = 1.0 / np.sqrt(np.mean(xc * xc, axis=-1, keepdims=True) + eps)
    n = xc * r

    def bw(g):
        gn = g * gd
        gx = r * (
            gn - gn.mean(axis=-1, keepdims=True) - n * np.mean(gn * n, axis=-1, keepdims=True)
        )
        flat = g.reshape(-1, gd.shape[-1])
        return gx, (flat * n.reshape(flat.shape)).sum(axis=0), flat.sum(axis=0)

    return T.from_op(n * gd + bias.data, (x, gain, bias), bw)


def rope_angles(positions, d_head: int) -> np.ndarray:
    if d_head % 2:
        raise ValueError(f"rotary embeddings need an even head width, got {d_head}")
    theta = 10000.0 ** (-2.0 * np.arange(d_head // 2) / d_head)
    return np.asarray(positions, dtype=np.float64)[:, None] * theta[None, :]


def rope_rotate(x: Tensor, positions) -> Tensor:
    """Rotate each pair (x[2i], x[2i+1]) of the last axis by position * theta_i.

    ``x`` has shape (..., L, d_head) and ``positions`` has length L.
    """
    x = T.as_tensor(x)
    ang = rope_angles(positions, x.shape[-1])
    cos, sin = np.cos(ang).astype(x.dtype), np.sin(ang).astype(x.dtype)
    xd = x.data
    xe, xo = xd[..., 0::2], xd[..., 1::2]
    out = np.empty_like(xd)
    out[..., 0::2] = xe * cos - xo * sin
    out[..., 1::2] = xe * sin + xo * cos

    def bw(g):
        ge, go = g[..., 0::2], g[..., 1::2]
        gx = np.empty_like(g)
        gx[..., 0::2] = ge * cos + go * sin
        gx[..., 1::2] = go * cos - ge * sin
        return (gx,)

    return T.from_op(out, (x,), bw)


def swiglu(x: Tensor, w1: Tensor, w2: Tensor, w3: Tensor) -> Tensor:
    """W3(silu(W1 x) * (W2 x))."""
    return T.linear(T.silu(T.linear(x, w1)) * T.linear(x, w2), w3)


def sinusoidal(values, width: int) -> np.ndarray:
    """[cos | sin] features of a scalar per row; constant, no gradient."""
    half = width // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = np.asarray(values, dtype=np.float64)[:, None] * freqs[None, :]
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=1)
    if width % 2:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return emb


def attention(x: Tensor, p: dict, prefix: str, heads: int, use_rope: bool) -> Tensor:
    B, L, d = x.shape
    dh = d // heads

    def split_heads(t):
        return T.transpose(T.reshape(t, (B, L, heads, dh)), (0, 2, 1, 3))

    q = split_heads(T.linear(x, p[prefix + "wq"]))
    k = split_heads(T.linear(x, p[prefix + "wk"]))
    v = split_heads(T.linear(x, p[prefix + "wv"]))
    if use_rope:
        pos = np.arange(L)
        q, k = rope_rotate(q, pos), rope_rotate(k, pos)
    scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
    mixed = T.matmul(T.softmax(scores, axis=-1), v)
    merged = T.reshape(T.transpose(mixed, (0, 2, 1, 3)), (B, L, d))
    return T.linear(merged, p[prefix + "wo"])


# ----------------------------------------------------------------- network
@dataclass(frozen=True)
class Arch:
    data_dim: int = 2
    seq_len: int = 1
    width: int = 64
    blocks: int = 2
    heads: int = 4
    ffn: int = 128
    num_classes: int = 8
    max_t: int = 1000
    use_rope: bool = True
    use_rmsnorm: bool = True
    use_swiglu: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(arch: Arch) -> dict[str, tuple[int, ...]]:
    d, D = arch.width, arch.data_dim
    shapes: dict[str, tuple[int, ...]] = {
        "token_proj.w": (D, d),
        "token_proj.b": (d,),
        "time_embed.w1": (d, d),
        "time_embed.b1": (d,),
        "time_embed.w2": (d, d),
        "time_embed.b2": (d,),
        "cond_embed": (arch.num_classes + 1, d),
        "omega_embed.w1": (d, d),
        "omega_embed.b1": (d,),
        "omega_embed.w2": (d, d),
        "omega_embed.b2": (d,),
    }
    for i in range(arch.blocks):
        pre = f"blocks.{i}."
        for name in ("wq", "wk", "wv", "wo"):
            shapes[pre + "attn." + name] = (d, d)
        shapes[pre + "ffn.w1"] = (d, arch.ffn)
        if arch.use_swiglu:
            shapes[pre + "ffn.w2"] = (d, arch.ffn)
        shapes[pre + "ffn.w3"] = (arch.ffn, d)
        shapes[pre + "norm1.g"] = (d,)
        shapes[pre + "norm2.g"] = (d,)
        if not arch.use_rmsnorm:
            shapes[pre + "norm1.b"] = (d,)
            shapes[pre + "norm2.b"] = (d,)
    shapes["out_proj.w"] = (d, D)
    shapes["out_proj.b"] = (D,)
    return shapes


class DenoiserNet:
    """Noise predictor eps(z, t, c, omega) for z of shape (B, L, D).

    Class index ``num_classes`` is the unconditional token. Parameters are
    drawn from per-name substreams of ``stream``, so toggling one component
    leaves every other parameter's initial value unchanged.
    """

    def __init__(self, arch: Arch, stream: RngStream | None = None, dtype=np.float32):
        if arch.width % arch.heads:
            raise ValueError(f"width {arch.width} is not divisible by {arch.heads} heads")
        if arch.use_rope and (arch.width // arch.heads) % 2:
            raise ValueError(f"rotary embeddings need an even head width, got {arch.width // arch.heads}")
        self.arch = arch
        self.dtype = np.dtype(dtype)
        stream = stream if stream is not None else RngStream(0)
        self.params: dict[str, Tensor] = {}
        for name, shape in param_shapes(arch).items():
            leaf = name.rsplit(".", 1)[-1]
            if leaf.startswith("g"):
                data = np.ones(shape)
            elif leaf.startswith("b"):
                data = np.zeros(shape)
            else:
                data = INIT_STD * stream.split(name).normal(shape)
            self.params[name] = Tensor(data.astype(self.dtype), requires_grad=True)

    @property
    def unconditional(self) -> int:
        return self.arch.num_classes

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            missing = sorted(set(self.params) - set(state))
            extra = sorted(set(state) - set(self.params))
            raise KeyError(f"parameter names differ (missing {missing}, unexpected {extra})")
        for k, p in self.params.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} does not match {p.shape}")
            p.data = arr.astype(self.dtype, copy=True)

    def clone(self) -> "DenoiserNet":
        twin = object.__new__(DenoiserNet)
        twin.arch, twin.dtype = self.arch, self.dtype
        twin.params = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.params.items()}
        return twin

    # --------------------------------------------------------------- forward
    def _mlp(self, feats: np.ndarray, prefix: str) -> Tensor:
        p = self.params
        h = T.linear(Tensor(feats.astype(self.dtype)), p[prefix + ".w1"], p[prefix + ".b1"])
        return T.linear(T.silu(h), p[prefix + ".w2"], p[prefix + ".b2"])

    def condition(self, t, c, omega) -> Tensor:
        """time_embed(t) + cond_embed(c) + omega_embed(omega), shape (B, width)."""
        d = self.arch.width
        temb = self._mlp(sinusoidal(t, d), "time_embed")
        cemb = T.take_rows(self.params["cond_embed"], c)
        wemb = self._mlp(sinusoidal(np.asarray(omega) * OMEGA_SCALE, d), "omega_embed")
        return temb + cemb + wemb

    def embed(self, z, t, c, omega) -> Tensor:
        """Residual stream entering the first block."""
        z = T.as_tensor(z)
        if z.dtype != self.dtype:
            z = Tensor(z.data.astype(self.dtype))
        if z.ndim != 3 or z.shape[-1] != self.arch.data_dim:
            raise T.ShapeError(f"expected input (B, L, {self.arch.data_dim}), got {z.shape}")
        B = z.shape[0]
        t, c, omega = self._check_inputs(B, t, c, omega)
        h = T.linear(z, self.params["token_proj.w"], self.params["token_proj.b"])
        cond = self.condition(t, c, omega)
        return h + T.expand(T.reshape(cond, (B, 1, self.arch.width)), h.shape)

    def block(self, i: int, x: Tensor) -> Tensor:
        a, p, pre = self.arch, self.params, f"blocks.{i}."
        if a.use_rmsnorm:
            x = x + attention(rmsnorm(x, p[pre + "norm1.g"]), p, pre + "attn.", a.heads, a.use_rope)
            return x + self._ffn(rmsnorm(x, p[pre + "norm2.g"]), pre)
        x = layernorm(
            x + attention(x, p, pre + "attn.", a.heads, a.use_rope), p[pre + "norm1.g"], p[pre + "norm1.b"]
        )
        return layernorm(x + self._ffn(x, pre), p[pre + "norm2.g"], p[pre + "norm2.b"])

    def _ffn(self, x: Tensor, pre: str) -> Tensor:
        p = self.params
        if self.arch.use_swiglu:
            return swiglu(x, p[pre + "ffn.w1"], p[pre + "ffn.w2"], p[pre + "ffn.w3"])
        return T.linear(T.silu(T.linear(x, p[pre + "ffn.w1"])), p[pre + "ffn.w3"])

    def head(self, x: Tensor) -> Tensor:
        # no output norm: the residual path must stay linear in z so that
        # eps ~ z extrapolates to tail inputs at high noise
        return T.linear(x, self.params["out_proj.w"], self.params["out_proj.b"])

    def forward(self, z, t, c, omega) -> Tensor:
        x = self.embed(z, t, c, omega)
        for i in range(self.arch.blocks):
            x = self.block(i, x)
        return self.head(x)

    __call__ = forward

    def _check_inputs(self, B, t, c, omega):
        t = np.broadcast_to(np.asarray(t), (B,))
        c = np.broadcast_to(np.asarray(c), (B,))
        omega = np.broadcast_to(np.asarray(omega, dtype=np.float64), (B,))
        if t.dtype.kind not in "iu" and not np.all(t == np.round(t)):
            raise ValueError(f"timesteps must be integers, got {t}")
        if np.any(t < 0) or np.any(t > self.arch.max_t):
            raise ValueError(f"timestep out of range [0, {self.arch.max_t}]")
        if np.any(c < 0) or np.any(c > self.arch.num_classes) or c.dtype.kind not in "iu":
            raise ValueError(f"class index out of range [0, {self.arch.num_classes}]")
        return t, c, omega
