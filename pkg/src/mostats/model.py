"""Image processing, backbone, classifier heads and projectors.

The augmentation stage is fully deterministic: each input image yields 8
variants ({original scale, 2:3 center-crop rescaled} x {0, 90, 180, 270
degree rotations}) and the joint label is ``class * 8 + transform_id``, so
the label space has 8 * C_b entries and (class, transform) is recovered by
divmod 8.

The backbone is a plain conv stack at desk scale: per block
conv3x3 -> optional per-channel batchnorm -> ReLU -> optional 2x2 maxpool.
Residual connections and normalization are config options, off by default.
The final feature map (B, d, H', W') reshapes to observation matrices of
H'*W' rows for the pooling stage.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import serialize
from .autodiff import Node
from .errors import ConfigError, ContractError, DimensionError
from .rng import Rng

CHECKPOINT_MAGIC = b"MOSC"
N_TRANSFORMS = 8


# ---------------------------------------------------------------------------
# image processing module
# ---------------------------------------------------------------------------

@dataclass
class AugmentedBatch:
    images: np.ndarray        # (8L, C, H, W)
    labels: np.ndarray        # joint labels in [0, 8*C_b)
    transform_ids: np.ndarray  # in [0, 8)


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Deterministic bilinear resize of (C,h,w) with half-pixel centers."""
    c, h, w = img.shape
    sy = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    sx = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    sy = np.clip(sy, 0.0, h - 1.0)
    sx = np.clip(sx, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (sy - y0)[None, :, None]
    wx = (sx - x0)[None, None, :]
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bot = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    out = top * (1 - wy) + bot * wy
    return out.astype(img.dtype)


def aspect_rescale(img: np.ndarray) -> np.ndarray:
    """Center-crop the largest 2:3 (height:width) region, resize back."""
    c, h, w = img.shape
    crop_h = min(h, (2 * w) // 3)
    crop_w = min(w, (3 * crop_h) // 2)
    if crop_h < 1 or crop_w < 1:
        raise DimensionError(f"image {h}x{w} too small for a 2:3 crop")
    y0 = (h - crop_h) // 2
    x0 = (w - crop_w) // 2
    return bilinear_resize(img[:, y0:y0 + crop_h, x0:x0 + crop_w], h, w)


def augment(images: np.ndarray, labels) -> AugmentedBatch:
    """Eightfold deterministic expansion with joint relabeling.

    transform_id = scale * 4 + k with scale 0 the original, scale 1 the
    2:3 rescale, and k counterclockwise quarter-turns. Output row i*8+t is
    variant t of input row i. Requires square images (quarter-turns must
    preserve the batch shape).
    """
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.ndim != 4:
        raise DimensionError(f"expected (L,C,H,W) images, got {images.shape}")
    L, c, h, w = images.shape
    if h != w:
        raise DimensionError(f"augment requires square images, got {h}x{w}")
    if labels.shape != (L,):
        raise DimensionError("labels must align with the batch")

    out = np.empty((L * N_TRANSFORMS, c, h, w), dtype=images.dtype)
    out_labels = np.empty(L * N_TRANSFORMS, dtype=np.int64)
    out_tids = np.empty(L * N_TRANSFORMS, dtype=np.int64)
    for i in range(L):
        scaled = (images[i], aspect_rescale(images[i]))
        for tid in range(N_TRANSFORMS):
            s, k = divmod(tid, 4)
            out[i * N_TRANSFORMS + tid] = np.rot90(scaled[s], k, axes=(-2, -1))
            out_labels[i * N_TRANSFORMS + tid] = labels[i] * N_TRANSFORMS + tid
            out_tids[i * N_TRANSFORMS + tid] = tid
    return AugmentedBatch(out, out_labels, out_tids)


# ---------------------------------------------------------------------------
# backbone
# ---------------------------------------------------------------------------

@dataclass
class BackboneConfig:
    """Conv-stack layout. blocks is a list of (out_channels, pool_after)."""

    blocks: list = field(default_factory=lambda: [(16, True), (32, True), (64, True), (64, False)])
    in_shape: tuple = (3, 24, 24)
    normalization: str = "none"   # "none" | "per-channel"
    residual: bool = False

    def __post_init__(self):
        self.blocks = [(int(ch), bool(p)) for ch, p in self.blocks]
        self.in_shape = tuple(int(v) for v in self.in_shape)
        if self.normalization not in ("none", "per-channel"):
            raise ConfigError(f"unknown normalization {self.normalization!r}")
        if len(self.in_shape) != 3:
            raise ConfigError("in_shape must be (C,H,W)")
        if not self.blocks:
            raise ConfigError("at least one block required")
        h, w = self.out_spatial()
        if h < 2 or w < 2:
            raise ConfigError(f"final spatial extent {h}x{w} below 2x2; fewer pools or larger inputs needed")

    @property
    def feature_dim(self) -> int:
        return self.blocks[-1][0]

    def out_spatial(self) -> tuple[int, int]:
        _, h, w = self.in_shape
        for _, pool in self.blocks:
            if pool:
                h, w = h // 2, w // 2
        return h, w

    def to_dict(self) -> dict:
        return {"blocks": [[ch, p] for ch, p in self.blocks],
                "in_shape": list(self.in_shape),
                "normalization": self.normalization,
                "residual": self.residual}

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        return cls(blocks=[tuple(b) for b in d["blocks"]], in_shape=tuple(d["in_shape"]),
                   normalization=d.get("normalization", "none"), residual=d.get("residual", False))


def he_uniform(rng: Rng, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_params(cfg: BackboneConfig, n_base_classes: int, proj_dim: int, rng: Rng,
                dtype: str = "f32") -> tuple[dict, dict]:
    """Seeded parameter and buffer dictionaries (insertion order is the
    checkpoint serialization order)."""
    np_dt = ad.DTYPES[dtype]
    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}

    prev = cfg.in_shape[0]
    for i, (ch, _pool) in enumerate(cfg.blocks, start=1):
        params[f"conv{i}_w"] = he_uniform(rng, (ch, prev, 3, 3), prev * 9, np_dt)
        params[f"conv{i}_b"] = np.zeros(ch, dtype=np_dt)
        if cfg.residual and prev != ch:
            params[f"conv{i}_proj_w"] = he_uniform(rng, (ch, prev, 1, 1), prev, np_dt)
        if cfg.normalization == "per-channel":
            params[f"bn{i}_gamma"] = np.ones(ch, dtype=np_dt)
            params[f"bn{i}_beta"] = np.zeros(ch, dtype=np_dt)
            buffers[f"bn{i}_mean"] = np.zeros(ch, dtype=np_dt)
            buffers[f"bn{i}_var"] = np.ones(ch, dtype=np_dt)
        prev = ch

    d = cfg.feature_dim
    n_out = N_TRANSFORMS * n_base_classes
    for o, dim in ((1, d), (2, d * d), (3, d * d)):
        params[f"head{o}_w"] = he_uniform(rng, (dim, n_out), dim, np_dt)
        params[f"proj{o}_w"] = he_uniform(rng, (dim, proj_dim), dim, np_dt)
    return params, buffers


def _batchnorm(x: Node, gamma: Node, beta: Node, name: str, buffers: dict,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Node:
    c = x.value.shape[1]
    shape = (1, c, 1, 1)
    if training:
        m = ad.mean(x, axis=(0, 2, 3), keepdims=True)
        centered = ad.sub(x, m)
        var = ad.mean(ad.mul(centered, centered), axis=(0, 2, 3), keepdims=True)
        # running statistics live outside the graph
        buffers[name + "_mean"] = ((1 - momentum) * buffers[name + "_mean"]
                                   + momentum * m.value.reshape(c)).astype(x.value.dtype)
        buffers[name + "_var"] = ((1 - momentum) * buffers[name + "_var"]
                                  + momentum * var.value.reshape(c)).astype(x.value.dtype)
    else:
        m = ad.constant(buffers[name + "_mean"].reshape(shape))
        var = ad.constant(buffers[name + "_var"].reshape(shape))
        centered = ad.sub(x, m)
    inv = ad.div(ad.constant(np.asarray(1.0, dtype=x.value.dtype)),
                 ad.sqrt(ad.add(var, ad.constant(np.asarray(eps, dtype=x.value.dtype)))))
    xhat = ad.mul(centered, inv)
    return ad.add(ad.mul(xhat, ad.reshape(gamma, shape)), ad.reshape(beta, shape))


def backbone_forward(cfg: BackboneConfig, params: dict, images, training: bool = False,
                     buffers: dict | None = None) -> Node:
    """Feature maps (B, d, H', W') for a batch of images.

    ``params`` values may be Nodes (training) or plain arrays (inference).
    Inference-mode normalization reads stored running statistics, keeping
    the forward deterministic.
    """
    x = images if isinstance(images, Node) else ad.constant(np.asarray(images))
    if x.value.ndim != 4:
        raise DimensionError(f"expected (B,C,H,W) images, got {x.value.shape}")
    if x.value.shape[1:] != cfg.in_shape:
        raise DimensionError(f"images {x.value.shape[1:]} do not match config {cfg.in_shape}")

    def p(name):
        v = params[name]
        return v if isinstance(v, Node) else ad.constant(v)

    for i, (ch, pool) in enumerate(cfg.blocks, start=1):
        y = ad.conv2d(x, p(f"conv{i}_w"), stride=1, padding=1)
        y = ad.add(y, ad.reshape(p(f"conv{i}_b"), (1, ch, 1, 1)))
        if cfg.normalization == "per-channel":
            y = _batchnorm(y, p(f"bn{i}_gamma"), p(f"bn{i}_beta"), f"bn{i}",
                           buffers, training)
        if cfg.residual:
            if x.value.shape[1] == ch:
                y = ad.add(y, x)
            else:
                y = ad.add(y, ad.conv2d(x, p(f"conv{i}_proj_w"), stride=1, padding=0))
        x = ad.relu(y)
        if pool:
            x = ad.maxpool2(x)
    return x


def to_observations(fmap: Node) -> Node:
    """(B, d, H, W) feature maps to (B, H*W, d) observation matrices."""
    b, d, h, w = fmap.value.shape
    return ad.reshape(ad.transpose(fmap, (0, 2, 3, 1)), (b, h * w, d))


# ---------------------------------------------------------------------------
# classifier heads and projectors
# ---------------------------------------------------------------------------

def head_logits(w, z) -> Node:
    w = w if isinstance(w, Node) else ad.constant(w)
    z = z if isinstance(z, Node) else ad.constant(np.asarray(z))
    if z.value.ndim == 1:
        return ad.reshape(ad.matmul(ad.reshape(z, (1, -1)), w), (w.value.shape[1],))
    return ad.matmul(z, w)


def head_forward(w, z) -> Node:
    """Softmax class probabilities for pooled features.

    Entries lie in [0,1] and each row sums to 1 within 1e-6; the shifted-
    exponent form never overflows (an extreme logit may underflow the other
    entries to exactly 0).
    """
    return ad.softmax(head_logits(w, z), axis=-1)


def projector_forward(u, z) -> Node:
    """L2-normalized projection; rows have unit norm within 1e-6.

    A projection with exactly zero norm raises a numeric error (there is no
    meaningful unit vector); near-zero rows are divided by their true norm,
    and the backward of the norm clamps its denominator (see autodiff.sqrt)
    so gradients stay finite.
    """
    u = u if isinstance(u, Node) else ad.constant(u)
    z = z if isinstance(z, Node) else ad.constant(np.asarray(z))
    if z.value.ndim == 1:
        v = ad.matmul(ad.reshape(z, (1, -1)), u)
        return ad.reshape(ad.l2_normalize(v, axis=-1), (u.value.shape[1],))
    return ad.l2_normalize(ad.matmul(z, u), axis=-1)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    config: dict
    params: dict
    buffers: dict
    seed: int
    epoch: int
    file_hash: str = ""


def save_checkpoint(path, config: dict, params: dict, buffers: dict, seed: int, epoch: int) -> str:
    """Container: magic "MOSC", u64 LE JSON-header length, UTF-8 JSON header,
    then tensor blobs in header order. Returns the content hash."""
    header = {
        "version": 1,
        "kind": "mostats-checkpoint",
        "config": config,
        "seed": int(seed),
        "epoch": int(epoch),
        "params": [{"name": k, "shape": list(v.shape), "dtype": ad.dtype_name(v.dtype)}
                   for k, v in params.items()],
        "buffers": [{"name": k, "shape": list(v.shape), "dtype": ad.dtype_name(v.dtype)}
                    for k, v in buffers.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fp:
        fp.write(CHECKPOINT_MAGIC)
        fp.write(struct.pack("<Q", len(blob)))
        fp.write(blob)
        for v in params.values():
            serialize.write_tensor(fp, v)
        for v in buffers.values():
            serialize.write_tensor(fp, v)
    with open(path, "rb") as fp:
        return hashlib.sha256(fp.read()).hexdigest()[:16]


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fp:
        raw = fp.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ContractError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack_from("<Q", raw, 4)
    header = json.loads(raw[12:12 + hlen].decode())
    if header.get("kind") != "mostats-checkpoint":
        raise ContractError(f"{path}: unexpected header kind")
    offset = 12 + hlen
    params: dict[str, np.ndarray] = {}
    for meta in header["params"]:
        arr, offset = serialize.read_tensor(raw, offset)
        if list(arr.shape) != meta["shape"]:
            raise ContractError(f"checkpoint blob for {meta['name']} has shape {arr.shape}, "
                                f"header says {meta['shape']}")
        params[meta["name"]] = arr
    buffers: dict[str, np.ndarray] = {}
    for meta in header["buffers"]:
        arr, offset = serialize.read_tensor(raw, offset)
        buffers[meta["name"]] = arr
    if offset != len(raw):
        raise ContractError("trailing bytes after checkpoint payload")
    return Checkpoint(config=header["config"], params=params, buffers=buffers,
                      seed=header["seed"], epoch=header["epoch"],
                      file_hash=hashlib.sha256(raw).hexdigest()[:16])
