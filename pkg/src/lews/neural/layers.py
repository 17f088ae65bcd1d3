"""Layers with explicit forward/backward passes.

Every layer reads its weights from a shared parameter dict ``P`` by name and
accumulates weight gradients into a dict ``G`` with the same keys. ``forward``
caches what ``backward`` needs; one forward must precede each backward.
Spatial tensors are laid out (C, H, W, N).
"""
from __future__ import annotations

import numpy as np


class Layer:
    params: tuple[str, ...] = ()

    def __init__(self):
        self.cache = None

    def _take_cache(self):
        if self.cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called without a forward pass")
        cache, self.cache = self.cache, None
        return cache

    def init(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        return {}


def _fan_in_uniform(rng, shape, fan_in):
    bound = np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _acc(G, key, value):
    if key in G:
        G[key] += value
    else:
        G[key] = value.copy()


class Conv2d(Layer):
    """3x3 convolution, stride 1, zero padding 1. Weights (Cout, Cin, 3, 3).

    Works on channels-first, batch-last tensors (C, H, W, N) so the im2col
    copies move contiguous runs of N values. Scratch buffers are reused
    between calls.
    """

    def __init__(self, name: str, cin: int, cout: int, input_grad: bool = True):
        super().__init__()
        self.name, self.cin, self.cout = name, cin, cout
        self.input_grad = input_grad
        self.params = (f"{name}.w", f"{name}.b")
        self._ws: dict = {}

    def init(self, rng):
        return {f"{self.name}.w": _fan_in_uniform(rng, (self.cout, self.cin, 3, 3), 9 * self.cin),
                f"{self.name}.b": np.zeros(self.cout)}

    def _wmat(self, P):
        # columns ordered (ky, kx, cin) to match the im2col row layout
        return P[f"{self.name}.w"].transpose(0, 2, 3, 1).reshape(self.cout, 9 * self.cin)

    def _buffer(self, key, shape, dtype):
        buf = self._ws.get(key)
        if buf is None or buf.shape != shape or buf.dtype != dtype:
            buf = self._ws[key] = np.zeros(shape, dtype=dtype)
        return buf

    def forward(self, P, x):
        C, H, W, N = x.shape
        xp = self._buffer("xp", (C, H + 2, W + 2, N), x.dtype)
        xp[:, 1:-1, 1:-1] = x
        cols = self._buffer("cols", (9, C, H, W, N), x.dtype)
        k = 0
        for ky in range(3):
            for kx in range(3):
                cols[k] = xp[:, ky:ky + H, kx:kx + W]
                k += 1
        cols = cols.reshape(9 * C, H * W * N)
        y = self._wmat(P) @ cols
        y += P[f"{self.name}.b"][:, None]
        self.cache = (cols, x.shape)
        return y.reshape(self.cout, H, W, N)

    def backward(self, P, G, dy):
        cols, (C, H, W, N) = self._take_cache()
        dyf = dy.reshape(self.cout, -1)
        dw = (dyf @ cols.T).reshape(self.cout, 3, 3, C).transpose(0, 3, 1, 2)
        _acc(G, f"{self.name}.w", dw)
        _acc(G, f"{self.name}.b", dyf.sum(axis=1))
        if not self.input_grad:
            return None
        dcols = (self._wmat(P).T @ dyf).reshape(9, C, H, W, N)
        dxp = self._buffer("dxp", (C, H + 2, W + 2, N), dy.dtype)
        dxp.fill(0)
        k = 0
        for ky in range(3):
            for kx in range(3):
                dxp[:, ky:ky + H, kx:kx + W] += dcols[k]
                k += 1
        return dxp[:, 1:-1, 1:-1].copy()


class Linear(Layer):
    """Affine map on the last axis; weight shape (din, dout)."""

    def __init__(self, name: str, din: int, dout: int):
        super().__init__()
        self.name, self.din, self.dout = name, din, dout
        self.params = (f"{name}.w", f"{name}.b")

    def init(self, rng):
        return {f"{self.name}.w": _fan_in_uniform(rng, (self.din, self.dout), self.din),
                f"{self.name}.b": np.zeros(self.dout)}

    def forward(self, P, x):
        self.cache = x
        return x @ P[f"{self.name}.w"] + P[f"{self.name}.b"]

    def backward(self, P, G, dy):
        x = self._take_cache()
        x2 = x.reshape(-1, self.din)
        dy2 = dy.reshape(-1, self.dout)
        _acc(G, f"{self.name}.w", x2.T @ dy2)
        _acc(G, f"{self.name}.b", dy2.sum(axis=0))
        return dy @ P[f"{self.name}.w"].T


class ReLU(Layer):
    def forward(self, P, x):
        y = np.maximum(x, 0)
        self.cache = y
        return y

    def backward(self, P, G, dy):
        y = self._take_cache()
        return dy * (y > 0)


class SpatialMean(Layer):
    """(C, H, W, N) -> (N, C)."""

    def forward(self, P, x):
        self.cache = x.shape
        return x.mean(axis=(1, 2)).T

    def backward(self, P, G, dy):
        C, H, W, N = self._take_cache()
        return np.broadcast_to((dy.T / (H * W))[:, None, None, :], (C, H, W, N)).copy()


class TemporalMean(Layer):
    """(B, T, D) -> (B, D)."""

    def forward(self, P, x):
        self.cache = x.shape
        return x.mean(axis=1)

    def backward(self, P, G, dy):
        B, T, D = self._take_cache()
        return np.broadcast_to((dy / T)[:, None, :], (B, T, D)).copy()


class LayerNorm(Layer):
    def __init__(self, name: str, dim: int, eps: float = 1e-5):
        super().__init__()
        self.name, self.dim, self.eps = name, dim, eps
        self.params = (f"{name}.g", f"{name}.b")

    def init(self, rng):
        return {f"{self.name}.g": np.ones(self.dim), f"{self.name}.b": np.zeros(self.dim)}

    def forward(self, P, x):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + self.eps)
        xhat = xc * inv
        self.cache = (xhat, inv)
        return xhat * P[f"{self.name}.g"] + P[f"{self.name}.b"]

    def backward(self, P, G, dy):
        xhat, inv = self._take_cache()
        D = self.dim
        _acc(G, f"{self.name}.g", (dy * xhat).reshape(-1, D).sum(axis=0))
        _acc(G, f"{self.name}.b", dy.reshape(-1, D).sum(axis=0))
        dxhat = dy * P[f"{self.name}.g"]
        return inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                      - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))


def softmax(s: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(a: np.ndarray, da: np.ndarray, axis: int = -1) -> np.ndarray:
    return a * (da - (da * a).sum(axis=axis, keepdims=True))


class SelfAttention(Layer):
    """Multi-head scaled dot-product self-attention over (B, T, D)."""

    def __init__(self, name: str, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError("attention heads must divide the model width")
        self.name, self.dim, self.heads = name, dim, heads
        self.qkv = Linear(f"{name}.qkv", dim, 3 * dim)
        self.out = Linear(f"{name}.out", dim, dim)
        self.params = self.qkv.params + self.out.params

    def init(self, rng):
        return {**self.qkv.init(rng), **self.out.init(rng)}

    def _split(self, t):
        B, T, _ = t.shape
        return t.reshape(B, T, self.heads, -1).transpose(0, 2, 1, 3)

    def _merge(self, t):
        B, h, T, dh = t.shape
        return t.transpose(0, 2, 1, 3).reshape(B, T, h * dh)

    def forward(self, P, x):
        qkv = self.qkv.forward(P, x)
        q, k, v = (self._split(t) for t in np.split(qkv, 3, axis=-1))
        scale = float(q.shape[-1]) ** -0.5
        a = softmax((q @ k.transpose(0, 1, 3, 2)) * scale)
        ctx = a @ v
        self.cache = (q, k, v, a, scale)
        return self.out.forward(P, self._merge(ctx))

    def backward(self, P, G, dy):
        q, k, v, a, scale = self._take_cache()
        dctx = self._split(self.out.backward(P, G, dy))
        da = dctx @ v.transpose(0, 1, 3, 2)
        dv = a.transpose(0, 1, 3, 2) @ dctx
        ds = softmax_backward(a, da) * scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        dqkv = np.concatenate([self._merge(dq), self._merge(dk), self._merge(dv)], axis=-1)
        return self.qkv.backward(P, G, dqkv)


class TransformerBlock(Layer):
    """Pre-norm block: x + attn(ln1(x)), then h + ffn(ln2(h))."""

    def __init__(self, name: str, dim: int, heads: int, ff_dim: int):
        super().__init__()
        self.ln1 = LayerNorm(f"{name}.ln1", dim)
        self.attn = SelfAttention(f"{name}.attn", dim, heads)
        self.ln2 = LayerNorm(f"{name}.ln2", dim)
        self.ff1 = Linear(f"{name}.ff1", dim, ff_dim)
        self.act = ReLU()
        self.ff2 = Linear(f"{name}.ff2", ff_dim, dim)
        self.params = sum((l.params for l in self._parts()), ())

    def _parts(self):
        return (self.ln1, self.attn, self.ln2, self.ff1, self.ff2)

    def init(self, rng):
        out = {}
        for part in self._parts():
            out.update(part.init(rng))
        return out

    def forward(self, P, x):
        h = x + self.attn.forward(P, self.ln1.forward(P, x))
        f = self.ff2.forward(P, self.act.forward(P, self.ff1.forward(P, self.ln2.forward(P, h))))
        return h + f

    def backward(self, P, G, dy):
        dh = dy + self.ln2.backward(P, G, self.ff1.backward(
            P, G, self.act.backward(P, G, self.ff2.backward(P, G, dy))))
        return dh + self.ln1.backward(P, G, self.attn.backward(P, G, dh))


class L2Normalize(Layer):
    def __init__(self, eps: float = 1e-12):
        super().__init__()
        self.eps = eps

    def forward(self, P, x):
        norm = np.sqrt((x * x).sum(axis=-1, keepdims=True)) + self.eps
        y = x / norm
        self.cache = (y, norm)
        return y

    def backward(self, P, G, dy):
        y, norm = self._take_cache()
        return (dy - y * (dy * y).sum(axis=-1, keepdims=True)) / norm


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sinusoidal_encoding(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange((dim + 1) // 2)[None, :]
    angle = pos / np.power(10000.0, 2 * i / dim)
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)[:, : dim // 2]
    return pe
