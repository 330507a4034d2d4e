"""Dataset container format.

A dataset is a directory with a ``manifest.json`` and one raw image file
per sample. Image files hold little-endian float32 values, row-major
(C,H,W), with no header; the manifest pins the shape, so a file is valid
iff its byte length is exactly 4*C*H*W. The three splits carry pairwise
disjoint class sets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError

SPLIT_NAMES = ("base", "val", "novel")


@dataclass
class SplitData:
    """One split in memory. Labels are contiguous split-local ids; the
    global class id of local label i is class_ids[i] (sorted order)."""

    images: np.ndarray     # (N, C, H, W) float32
    labels: np.ndarray     # (N,) int64 in [0, n_classes)
    n_classes: int
    class_ids: np.ndarray  # (n_classes,) global ids


def save_image(path, img: np.ndarray) -> None:
    img = np.ascontiguousarray(img, dtype="<f4")
    with open(path, "wb") as fp:
        fp.write(img.tobytes(order="C"))


def load_image(path, shape) -> np.ndarray:
    data = np.fromfile(path, dtype="<f4")
    expected = int(np.prod(shape))
    if data.size != expected:
        raise ContractError(f"{path}: {data.size} values, shape {shape} needs {expected}")
    return data.reshape(shape).astype(np.float32)


def write_manifest(root, name: str, image_shape, class_names, splits: dict) -> Path:
    """``splits`` maps split name to a list of (relative file, global label)."""
    root = Path(root)
    manifest = {
        "version": 1,
        "name": name,
        "dtype": "f32le",
        "image_shape": [int(v) for v in image_shape],
        "class_names": list(class_names),
        "splits": {
            s: [{"file": str(f), "label": int(lab)} for f, lab in entries]
            for s, entries in splits.items()
        },
    }
    path = root / "manifest.json"
    with open(path, "w") as fp:
        json.dump(manifest, fp, sort_keys=True, indent=1)
    return path


def load_manifest(path) -> dict:
    """Parse and fully validate a manifest (split disjointness, file
    presence, exact byte lengths)."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise ConfigError(f"dataset manifest not found: {path}")
    with open(path) as fp:
        manifest = json.load(fp)
    for key in ("version", "name", "dtype", "image_shape", "class_names", "splits"):
        if key not in manifest:
            raise ConfigError(f"manifest missing key {key!r}")
    if manifest["dtype"] != "f32le":
        raise ConfigError(f"unsupported dataset dtype {manifest['dtype']!r}")
    shape = manifest["image_shape"]
    if len(shape) != 3:
        raise ConfigError("image_shape must be [C,H,W]")

    root = path.parent
    class_sets = {}
    nbytes = 4 * int(np.prod(shape))
    for split in SPLIT_NAMES:
        entries = manifest["splits"].get(split, [])
        class_sets[split] = {e["label"] for e in entries}
        for e in entries:
            f = root / e["file"]
            if not f.exists():
                raise ConfigError(f"{split}: missing image file {e['file']}")
            if f.stat().st_size != nbytes:
                raise ConfigError(f"{split}: {e['file']} has {f.stat().st_size} bytes, "
                                  f"expected {nbytes}")
    for a in SPLIT_NAMES:
        for b in SPLIT_NAMES:
            if a < b and class_sets[a] & class_sets[b]:
                raise ConfigError(f"splits {a!r} and {b!r} share classes "
                                  f"{sorted(class_sets[a] & class_sets[b])}")
    manifest["_root"] = str(root)
    return manifest


def load_split(manifest: dict, split: str) -> SplitData:
    if split not in SPLIT_NAMES:
        raise ConfigError(f"unknown split {split!r}")
    entries = manifest["splits"].get(split, [])
    if not entries:
        raise ConfigError(f"split {split!r} is empty")
    root = Path(manifest["_root"])
    shape = tuple(manifest["image_shape"])
    class_ids = np.asarray(sorted({e["label"] for e in entries}), dtype=np.int64)
    local = {int(g): i for i, g in enumerate(class_ids)}
    images = np.stack([load_image(root / e["file"], shape) for e in entries])
    labels = np.asarray([local[e["label"]] for e in entries], dtype=np.int64)
    return SplitData(images=images, labels=labels, n_classes=len(class_ids),
                     class_ids=class_ids)
