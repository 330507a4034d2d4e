"""Synthetic dataset whose class identity lives in three statistic orders.

Each class id maps to a triple of codes:

    mean_code = c % 4, cov_code = (c // 2) % 4, skew_code = (c // 4) % 4

and each code selects one draw of mean color, channel covariance (plus a
covariance-linked sinusoidal texture) or skew pattern, shared by every
class with the same code in the same region (below). Any five consecutive
classes collide in each single code by pigeonhole but never in all three at
once, so no single statistic order separates a novel split on its own while
their combination can. Pixels are

    mu[mean] + chol(cov)[cov] @ gauss
             + texture(cov)               (class-coded frequency, random phase)
             + skew * pattern[skew] * shifted_cube_noise

where shifted_cube_noise is ((g+1)^3 - 4)/sqrt(60) for g standard normal:
zero mean, unit variance, standardized third moment about 3.95. With
skew=0 every pixel is exactly Gaussian, so third-order statistics carry no
class information at all (the KS self-test checks this).

Each image additionally draws an illumination nuisance: a scalar gain and a
per-channel offset applied to the whole image. The nuisance keeps per-image
pixels Gaussian when skew=0, but it blurs the class signals differently per
statistic order (offsets hit means, gains hit covariance scale, the
standardized third order shrugs both off), which is what keeps any single
pooled order from solving the task alone.

Code values are drawn per (code, region) where a region is a block of 16
consecutive class ids. Classes split 60/20/20 (floors, remainder to novel)
by class id, so the split class sets are disjoint by construction and, for
class counts up to about 26, the novel split's parameter draws never appear
in the base split: a backbone pre-trained on the base classes has seen the
three kinds of structure but not the novel values, which preserves each
order's blind spots at evaluation time.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import dataio, mospool
from .errors import ContractError
from .rng import Rng

N_CODES = 4

MEAN_SPREAD = 0.5      # mean color draw range
COV_SCALE = 1.3        # Frobenius scale of channel covariance factors
NOISE_FLOOR = 0.1      # isotropic variance shared by all classes
TEXTURE_AMP = 0.7
SKEW_AMP = 1.2
GAIN_JITTER = 0.2      # per-image gain: exp(U(-g, g))
OFFSET_JITTER = 0.4    # per-image per-channel offset: U(-o, o)

_CUBE_SHIFT = 1.0
_CUBE_MEAN = _CUBE_SHIFT ** 3 + 3 * _CUBE_SHIFT                        # E[(g+1)^3] = 4
_CUBE_STD = np.sqrt(76.0 - _CUBE_MEAN ** 2)                            # sqrt(60)


REGION_SIZE = 16


def class_codes(c: int) -> tuple[int, int, int]:
    return c % N_CODES, (c // 2) % N_CODES, (c // 4) % N_CODES


def split_counts(classes: int) -> tuple[int, int, int]:
    n_base = int(classes * 0.6)
    n_val = int(classes * 0.2)
    return n_base, n_val, classes - n_base - n_val


def _shifted_cube(rng: Rng, size) -> np.ndarray:
    g = rng.normal(size=size)
    return ((g + _CUBE_SHIFT) ** 3 - _CUBE_MEAN) / _CUBE_STD


def _mean_for(master: Rng, code: int, region: int, channels: int) -> np.ndarray:
    r = master.derive(f"mean{code}r{region}")
    return r.uniform(-MEAN_SPREAD, MEAN_SPREAD, size=channels)


def _cov_for(master: Rng, code: int, region: int, channels: int):
    r = master.derive(f"cov{code}r{region}")
    a = r.normal(size=(channels, channels))
    a *= COV_SCALE / np.sqrt((a * a).sum())
    chol = np.linalg.cholesky(a @ a.T + NOISE_FLOOR * np.eye(channels))
    v = r.normal(size=channels)
    direction = v / np.sqrt((v * v).sum())
    freq = (int(r.integers(1, 4)), int(r.integers(1, 4)))
    return chol, direction, freq


def _skew_pattern_for(master: Rng, code: int, region: int, channels: int) -> np.ndarray:
    r = master.derive(f"skew{code}r{region}")
    pattern = np.zeros(channels)
    signs = r.choice(2, channels, replace=True) * 2 - 1
    active = r.permutation(channels)[:max(1, channels - 1)]
    pattern[active] = signs[active]
    return pattern


def synthesize_class_images(rng: Rng, c: int, count: int, image_shape, skew: float,
                            master: Rng) -> np.ndarray:
    """All images of one class, drawn from the class's own substream;
    class parameters come from (code, region)-keyed substreams of
    ``master``."""
    mc, vc, sc = class_codes(c)
    region = c // REGION_SIZE
    ch, h, w = image_shape
    mean = _mean_for(master, mc, region, ch)
    chol, direction, (fy, fx) = _cov_for(master, vc, region, ch)
    pattern = _skew_pattern_for(master, sc, region, ch)
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    grid = 2 * np.pi * (fy * yy / h + fx * xx / w)

    out = np.empty((count, ch, h, w), dtype=np.float32)
    for i in range(count):
        gauss = np.einsum("ij,jhw->ihw", chol, rng.normal(size=(ch, h, w)))
        phase = rng.uniform(0, 2 * np.pi)
        texture = TEXTURE_AMP * np.sin(grid + phase)[None, :, :] * direction[:, None, None]
        img = mean[:, None, None] + gauss + texture
        if skew != 0.0:
            img = img + (skew * SKEW_AMP * pattern)[:, None, None] \
                * _shifted_cube(rng, (ch, h, w))
        # illumination nuisance: gain and offset vary image to image
        gain = np.exp(rng.uniform(-GAIN_JITTER, GAIN_JITTER))
        offset = rng.uniform(-OFFSET_JITTER, OFFSET_JITTER, size=ch)
        out[i] = (gain * img + offset[:, None, None]).astype(np.float32)
    return out


def generate_dataset(out_dir, classes: int, per_class: int, image_shape=(3, 24, 24),
                     skew: float = 1.0, seed: int = 0, name: str = "synthetic") -> dict:
    """Write the dataset under ``out_dir`` and return its loaded manifest."""
    if classes < 10:
        raise ContractError("need at least 10 classes for disjoint splits")
    if per_class < 2:
        raise ContractError("need at least 2 images per class")
    image_shape = tuple(int(v) for v in image_shape)

    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    master = Rng(seed)
    code_master = master.derive("codes")

    n_base, n_val, _ = split_counts(classes)
    splits = {"base": [], "val": [], "novel": []}
    for c in range(classes):
        split = "base" if c < n_base else ("val" if c < n_base + n_val else "novel")
        images = synthesize_class_images(master.derive(f"class{c}"), c, per_class,
                                         image_shape, skew, code_master)
        for i in range(per_class):
            rel = f"images/cls{c:03d}_img{i:04d}.f32le"
            dataio.save_image(out_dir / rel, images[i])
            splits[split].append((rel, c))

    dataio.write_manifest(out_dir, name, image_shape,
                          [f"class{c:02d}" for c in range(classes)], splits)
    return dataio.load_manifest(out_dir)


# ---------------------------------------------------------------------------
# generator self-test
# ---------------------------------------------------------------------------

def third_order_summary(img: np.ndarray) -> float:
    """Scalar third-order statistic of one image: sum of the standardized
    comoment diagonal over raw pixel observations."""
    c = img.shape[0]
    obs = img.reshape(c, -1).T.astype(np.float64)
    c3 = mospool.pool_order3(obs).value
    return float(np.trace(c3))


def skew_separation_pvalue(manifest: dict, max_per_class: int = 40) -> float:
    """KS p-value between image groups of even vs odd skew code.

    With skew=0 the third-order channel is pure Gaussian sampling noise and
    the two groups are identically distributed (large p); with injected
    skewness the groups separate (tiny p). A single test avoids the
    multiple-comparison trap of all-pairs testing.
    """
    from scipy.stats import ks_2samp

    shape = tuple(manifest["image_shape"])
    root = Path(manifest["_root"])
    groups = {0: [], 1: []}
    for split in dataio.SPLIT_NAMES:
        per_class: dict[int, int] = {}
        for e in manifest["splits"].get(split, []):
            c = int(e["label"])
            if per_class.get(c, 0) >= max_per_class:
                continue
            per_class[c] = per_class.get(c, 0) + 1
            img = dataio.load_image(root / e["file"], shape)
            groups[class_codes(c)[2] % 2].append(third_order_summary(img))
    if not groups[0] or not groups[1]:
        raise ContractError("both skew-code parities need samples for the KS test")
    return float(ks_2samp(groups[0], groups[1]).pvalue)
