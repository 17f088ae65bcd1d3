"""Terrain CNN + rainfall CNN-Transformer encoder and the MLP risk head."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from ..geogrid import N_TERRAIN_CHANNELS, FormatError, _parse_manifest, read_payload, write_array_pair
from .layers import (Conv2d, L2Normalize, Linear, ReLU, SpatialMean, TemporalMean,
                     TransformerBlock, sigmoid, sinusoidal_encoding)


@dataclass(frozen=True)
class EncoderConfig:
    terrain_channels: tuple[int, int, int] = (N_TERRAIN_CHANNELS, 16, 16)
    rain_channels: tuple[int, int, int] = (1, 8, 16)
    token_dim: int = 32
    n_layers: int = 3
    n_heads: int = 2
    ff_dim: int = 64
    max_len: int = 48
    head_hidden: int = 32

    def __post_init__(self):
        dims = (*self.terrain_channels, *self.rain_channels, self.token_dim, self.n_layers,
                self.n_heads, self.ff_dim, self.max_len, self.head_hidden)
        if any(int(d) <= 0 for d in dims):
            raise ValueError("all encoder dimensions must be positive")
        if self.token_dim % self.n_heads:
            raise ValueError("n_heads must divide token_dim")
        if self.token_dim % 2:
            raise ValueError("token_dim must be even for the sinusoidal encoding")

    @property
    def embedding_dim(self) -> int:
        return self.token_dim + self.terrain_channels[-1]


@dataclass
class ModelParams:
    arrays: dict[str, np.ndarray]
    config: EncoderConfig = field(default_factory=EncoderConfig)
    seed: int = 0

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()}, self.config, self.seed)

    def astype(self, dtype) -> "ModelParams":
        return ModelParams({k: v.astype(dtype) for k, v in self.arrays.items()}, self.config, self.seed)

    def has_head(self) -> bool:
        return any(k.startswith("head.") for k in self.arrays)

    def encoder_only(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items() if not k.startswith("head.")},
                           self.config, self.seed)

    def __getitem__(self, key):
        return self.arrays[key]


@dataclass(frozen=True, eq=False)
class Embedding:
    z: np.ndarray
    normalized: bool


def rain_transform(rain: np.ndarray) -> np.ndarray:
    """Compress rain intensities before the rain CNN."""
    return np.log1p(rain)


class LandslideNet:
    """Fixed architecture with cached forward state for one backward pass.

    Single-threaded: one instance holds the activations of its last forward.
    """

    def __init__(self, config: EncoderConfig = EncoderConfig()):
        c = self.config = config
        t0, t1, t2 = c.terrain_channels
        r0, r1, r2 = c.rain_channels
        self.terrain = [Conv2d("terrain.conv1", t0, t1, input_grad=False), ReLU(),
                        Conv2d("terrain.conv2", t1, t2), ReLU(), SpatialMean()]
        self.frame = [Conv2d("rain.conv1", r0, r1, input_grad=False), ReLU(),
                      Conv2d("rain.conv2", r1, r2), ReLU(), SpatialMean()]
        self.token = Linear("rain.token", r2, c.token_dim)
        self.blocks = [TransformerBlock(f"rain.tf{i}", c.token_dim, c.n_heads, c.ff_dim)
                       for i in range(c.n_layers)]
        self.pool = TemporalMean()
        self.norm = L2Normalize()
        self.head = [Linear("head.fc1", c.embedding_dim, c.head_hidden), ReLU(),
                     Linear("head.fc2", c.head_hidden, 1)]
        self.pe = sinusoidal_encoding(c.max_len, c.token_dim)
        self._enc_state = None
        self._head_state = None

    def encoder_layers(self):
        return [*self.terrain, *self.frame, self.token, *self.blocks]

    def init_params(self, seed: int = 0, with_head: bool = True, dtype=np.float32) -> ModelParams:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
        arrays = {}
        for layer in self.encoder_layers():
            arrays.update(layer.init(rng))
        head_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x4EAD]))
        if with_head:
            for layer in self.head:
                arrays.update(layer.init(head_rng))
        return ModelParams({k: v.astype(dtype) for k, v in arrays.items()}, self.config, int(seed))

    def init_head(self, params: ModelParams, seed: int) -> ModelParams:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x4EAD]))
        out = params.copy()
        dtype = next(iter(params.arrays.values())).dtype
        for layer in self.head:
            out.arrays.update({k: v.astype(dtype) for k, v in layer.init(rng).items()})
        return out

    # ------------------------------------------------------------ forward

    def encode(self, params: ModelParams, rain: np.ndarray, terrain: np.ndarray,
               normalize: bool = True) -> np.ndarray:
        """Embed a batch: ``rain`` (B, T, H, W) mm/h and ``terrain`` (B, 30, H, W)."""
        P = params.arrays
        dtype = P["rain.token.w"].dtype
        rain = np.asarray(rain)
        terrain = np.asarray(terrain)
        if rain.ndim != 4 or terrain.ndim != 4:
            raise ValueError("expected rain (B, T, H, W) and terrain (B, C, H, W)")
        B, T, H, W = rain.shape
        if terrain.shape != (B, self.config.terrain_channels[0], H, W):
            raise ValueError(f"terrain batch shape {terrain.shape} does not match rain {rain.shape}")
        if T > self.config.max_len:
            raise ValueError(f"sequence length {T} exceeds max_len {self.config.max_len}")

        x = np.ascontiguousarray(terrain.astype(dtype).transpose(1, 2, 3, 0))
        for layer in self.terrain:
            x = layer.forward(P, x)
        terrain_feat = x

        r = np.ascontiguousarray(rain_transform(rain.astype(dtype)).reshape(1, B * T, H, W)
                                 .transpose(0, 2, 3, 1))
        for layer in self.frame:
            r = layer.forward(P, r)
        tok = self.token.forward(P, r.reshape(B, T, -1)) + self.pe[:T].astype(dtype)
        for block in self.blocks:
            tok = block.forward(P, tok)
        rain_feat = self.pool.forward(P, tok)

        z = np.concatenate([rain_feat, terrain_feat], axis=1)
        if normalize:
            z = self.norm.forward(P, z)
        self._enc_state = dict(shape=(B, T, H, W), rain=rain.astype(dtype), normalize=normalize,
                               n_rain=rain_feat.shape[1])
        return z

    def _all_layers(self):
        out = [*self.terrain, *self.frame, self.token, self.pool, self.norm, *self.head]
        for b in self.blocks:
            out += [b.ln1, b.attn, b.attn.qkv, b.attn.out, b.ln2, b.ff1, b.act, b.ff2]
        return out

    def clear(self) -> None:
        """Drop cached activations (after a forward-only evaluation)."""
        self._enc_state = self._head_state = None
        for layer in self._all_layers():
            layer.cache = None

    def logits(self, params: ModelParams, z: np.ndarray) -> np.ndarray:
        P = params.arrays
        h = np.asarray(z, dtype=P["head.fc1.w"].dtype)
        for layer in self.head:
            h = layer.forward(P, h)
        self._head_state = True
        return h[:, 0]

    def predict(self, params: ModelParams, z: np.ndarray) -> np.ndarray:
        return sigmoid(self.logits(params, z))

    # ----------------------------------------------------------- backward

    def backward_head(self, params: ModelParams, dlogits: np.ndarray, grads: dict) -> np.ndarray:
        """Accumulate head gradients; return the gradient w.r.t. the embedding."""
        if self._head_state is None:
            raise RuntimeError("backward called without a forward pass through the head")
        self._head_state = None
        P = params.arrays
        g = np.asarray(dlogits)[:, None]
        for layer in reversed(self.head):
            g = layer.backward(P, grads, g)
        return g

    def backward_encoder(self, params: ModelParams, dz: np.ndarray, grads: dict,
                         need_input_grads: bool = False):
        """Accumulate encoder gradients from ``dz``.

        Returns ``(d_rain, d_terrain)`` w.r.t. the raw inputs when requested.
        """
        st = self._enc_state
        if st is None:
            raise RuntimeError("backward called without a forward pass through the encoder")
        self._enc_state = None
        P = params.arrays
        B, T, H, W = st["shape"]
        g = np.asarray(dz)
        if st["normalize"]:
            g = self.norm.backward(P, grads, g)
        g_rain, g_terrain = g[:, :st["n_rain"]], g[:, st["n_rain"]:]

        self.terrain[0].input_grad = self.frame[0].input_grad = need_input_grads
        gt = g_terrain
        for layer in reversed(self.terrain):
            gt = layer.backward(P, grads, gt)

        gr = self.pool.backward(P, grads, g_rain)
        for block in reversed(self.blocks):
            gr = block.backward(P, grads, gr)
        gr = self.token.backward(P, grads, gr).reshape(B * T, -1)
        for layer in reversed(self.frame):
            gr = layer.backward(P, grads, gr)
        if not need_input_grads:
            return None
        d_rain = gr[0].transpose(2, 0, 1).reshape(B, T, H, W) / (1.0 + st["rain"])
        d_terrain = gt.transpose(3, 0, 1, 2)
        return d_rain, d_terrain

    def backward(self, params: ModelParams, dz: np.ndarray | None = None,
                 dlogits: np.ndarray | None = None, need_input_grads: bool = False):
        """Gradients of a scalar loss given its gradient at the embedding and/or logits."""
        grads: dict[str, np.ndarray] = {}
        total = None if dz is None else np.array(dz, copy=True)
        if dlogits is not None:
            dz_head = self.backward_head(params, dlogits, grads)
            total = dz_head if total is None else total + dz_head
        if total is None:
            raise ValueError("backward needs dz and/or dlogits")
        inputs = self.backward_encoder(params, total, grads, need_input_grads)
        for k, v in params.arrays.items():
            grads.setdefault(k, np.zeros_like(v))
        return (grads, inputs) if need_input_grads else grads


def encode(sample, params: ModelParams, normalize: bool = True) -> Embedding:
    """Embedding of one :class:`~lews.pipeline.samples.Sample`."""
    net = LandslideNet(params.config)
    z = net.encode(params, sample.rain.values[None], sample.terrain.model_channels()[None], normalize)
    return Embedding(z[0].copy(), normalize)


def predict(embedding, params: ModelParams) -> float:
    z = embedding.z if isinstance(embedding, Embedding) else np.asarray(embedding)
    if z.shape[-1] != params.config.embedding_dim:
        raise ValueError("embedding length does not match the head input")
    net = LandslideNet(params.config)
    return float(net.predict(params, z.reshape(1, -1))[0])


# --------------------------------------------------------------- checkpoints

def save_checkpoint(params: ModelParams, path) -> None:
    names = sorted(params.arrays)
    layers = ";".join(f"{k}:{'x'.join(map(str, params.arrays[k].shape))}" for k in names)
    cfg = {f"config.{f.name}": ",".join(map(str, v)) if isinstance(v, tuple) else v
           for f in fields(params.config) for v in [getattr(params.config, f.name)]}
    manifest = {"kind": "checkpoint", "seed": params.seed, **cfg, "layers": layers}
    payload = np.concatenate([params.arrays[k].astype(np.float32).ravel() for k in names]) \
        if names else np.zeros(0, np.float32)
    write_array_pair(path, manifest, payload)


def load_checkpoint(path) -> ModelParams:
    m = _parse_manifest(path)
    if m.get("kind") != "checkpoint":
        raise FormatError(f"{path} is not a checkpoint")
    kwargs = {}
    for f in fields(EncoderConfig):
        raw = m.get(f"config.{f.name}")
        if raw is None:
            raise FormatError(f"checkpoint missing config.{f.name}")
        try:
            kwargs[f.name] = tuple(int(x) for x in raw.split(",")) if "," in raw else int(raw)
        except ValueError:
            raise FormatError(f"bad value for config.{f.name}") from None
    config = EncoderConfig(**kwargs)
    specs = []
    for item in filter(None, m.get("layers", "").split(";")):
        name, shape = item.rsplit(":", 1)
        specs.append((name, tuple(int(s) for s in shape.split("x")) if shape else ()))
    sizes = [int(np.prod(s)) for _, s in specs]
    flat = read_payload(path, sum(sizes))
    arrays, pos = {}, 0
    for (name, shape), n in zip(specs, sizes):
        arrays[name] = flat[pos:pos + n].reshape(shape).copy()
        pos += n
    return ModelParams(arrays, config, int(m.get("seed", 0)))


def checkpoint_bytes(path) -> bytes:
    path = Path(path)
    return path.read_bytes() + path.with_name(path.name + ".bin").read_bytes()
