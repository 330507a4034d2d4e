"""Run configuration: JSON with a version stamp and strict key checking.

Unknown keys anywhere in the document are errors (they are almost always
misspelled hyperparameters). Validation gathers every problem before
raising, so a bad config reports all its defects at once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import losses as L
from . import model as M
from . import mospool
from .errors import ConfigError
from .pretrain import LOSS_MODES, TrainConfig

_TOP_KEYS = {"version", "seed", "dataset", "out_dir", "model", "train", "pooling", "eval"}
_MODEL_KEYS = {"blocks", "normalization", "residual", "proj_dim"}
_TRAIN_KEYS = {"epochs", "batch_size", "lr0", "momentum", "weight_decay", "schedule",
               "alpha", "tau", "loss_mode", "loss_reduction", "literal_eq8",
               "checkpoint_every", "dtype"}
_POOL_KEYS = {"eps", "c3_normalization"}
_EVAL_KEYS = {"way", "shot", "query", "episodes", "branches", "l2", "tol",
              "max_iter", "normalize"}


@dataclass
class RunConfig:
    seed: int
    dataset: str
    out_dir: str
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    pooling: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)

    def model_config(self, in_shape) -> M.BackboneConfig:
        return M.BackboneConfig(
            blocks=[tuple(b) for b in self.model.get("blocks",
                                                     [[16, True], [32, True], [64, True], [64, False]])],
            in_shape=tuple(in_shape),
            normalization=self.model.get("normalization", "none"),
            residual=self.model.get("residual", False),
        )

    def train_config(self) -> TrainConfig:
        t = self.train
        alpha = t.get("alpha", [1.0, 1.0, 1.0])
        return TrainConfig(
            epochs=t.get("epochs", 130),
            batch_size=t.get("batch_size", 32),
            lr0=t.get("lr0", 0.025),
            momentum=t.get("momentum", 0.9),
            weight_decay=t.get("weight_decay", 5e-4),
            schedule=[tuple(s) for s in t.get("schedule", [[70, 0.2], [100, 0.2]])],
            weights=L.EnsembleWeights(*alpha),
            tau=t.get("tau", 0.1),
            seed=self.seed,
            loss_mode=t.get("loss_mode", "cb_sb"),
            loss_reduction=t.get("loss_reduction", "mean"),
            literal_eq8=t.get("literal_eq8", False),
            checkpoint_every=t.get("checkpoint_every", 10),
            dtype=t.get("dtype", "f32"),
            proj_dim=self.model.get("proj_dim", 64),
            pool_eps=self.pooling.get("eps", mospool.DEFAULT_EPS),
            c3_mode=self.pooling.get("c3_normalization", "standardized"),
        )

    def eval_params(self) -> dict:
        e = self.eval
        return {
            "way": e.get("way", 5), "shot": e.get("shot", 1),
            "query": e.get("query", 15), "episodes": e.get("episodes", 2000),
            "enabled_branches": tuple(e.get("branches", [1, 2, 3])),
            "l2": e.get("l2", 1.0), "tol": e.get("tol", 1e-6),
            "max_iter": e.get("max_iter", 1000), "normalize": e.get("normalize", True),
        }


def _check_keys(errors: list, section: str, given: dict, allowed: set):
    for key in sorted(set(given) - allowed):
        errors.append(f"{section}: unknown key {key!r}")


def validate_config_dict(doc: dict) -> list[str]:
    """Return every validation failure; empty means valid."""
    errors: list[str] = []
    if not isinstance(doc, dict):
        return ["config document must be a JSON object"]
    _check_keys(errors, "top level", doc, _TOP_KEYS)
    if doc.get("version") != 1:
        errors.append(f"version: expected 1, got {doc.get('version')!r}")
    for key in ("seed", "dataset", "out_dir"):
        if key not in doc:
            errors.append(f"missing required field {key!r}")

    model = doc.get("model", {})
    train = doc.get("train", {})
    pooling = doc.get("pooling", {})
    ev = doc.get("eval", {})
    for section, d, allowed in (("model", model, _MODEL_KEYS), ("train", train, _TRAIN_KEYS),
                                ("pooling", pooling, _POOL_KEYS), ("eval", ev, _EVAL_KEYS)):
        if not isinstance(d, dict):
            errors.append(f"{section}: must be an object")
        else:
            _check_keys(errors, section, d, allowed)
    if errors:
        return errors

    # module precondition checks
    if train.get("epochs", 130) < 1:
        errors.append("train.epochs: must be >= 1")
    if train.get("lr0", 0.025) <= 0:
        errors.append("train.lr0: must be positive")
    sched = train.get("schedule", [[70, 0.2], [100, 0.2]])
    trigger_epochs = [s[0] for s in sched]
    if trigger_epochs != sorted(set(trigger_epochs)):
        errors.append("train.schedule: trigger epochs must be strictly increasing")
    bs = train.get("batch_size", 32)
    if bs < 2 or bs % 2:
        errors.append("train.batch_size: must be an even number >= 2")
    if train.get("loss_mode", "cb_sb") not in LOSS_MODES:
        errors.append(f"train.loss_mode: must be one of {LOSS_MODES}")
    if train.get("loss_reduction", "mean") not in L.REDUCTIONS:
        errors.append(f"train.loss_reduction: must be one of {L.REDUCTIONS}")
    if train.get("tau", 0.1) <= 0:
        errors.append("train.tau: must be positive")
    alpha = train.get("alpha", [1.0, 1.0, 1.0])
    if len(alpha) != 3 or min(alpha) < 0:
        errors.append("train.alpha: needs 3 nonnegative weights")
    if train.get("dtype", "f32") not in ("f32", "f64"):
        errors.append("train.dtype: must be f32 or f64")
    if pooling.get("eps", mospool.DEFAULT_EPS) < 0:
        errors.append("pooling.eps: must be nonnegative")
    if pooling.get("c3_normalization", "standardized") not in mospool.C3_MODES:
        errors.append(f"pooling.c3_normalization: must be one of {mospool.C3_MODES}")
    for key, lo in (("way", 1), ("shot", 1), ("query", 1), ("episodes", 1)):
        if ev.get(key, lo) < lo:
            errors.append(f"eval.{key}: must be >= {lo}")
    branches = ev.get("branches", [1, 2, 3])
    if not branches or any(b not in (1, 2, 3) for b in branches):
        errors.append("eval.branches: must be a nonempty subset of [1,2,3]")
    if ev.get("l2", 1.0) < 0:
        errors.append("eval.l2: must be nonnegative")
    return errors


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fp:
        try:
            doc = json.load(fp)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    errors = validate_config_dict(doc)
    if errors:
        raise ConfigError(f"{path}: " + "; ".join(errors))
    return RunConfig(seed=doc["seed"], dataset=doc["dataset"], out_dir=doc["out_dir"],
                     model=doc.get("model", {}), train=doc.get("train", {}),
                     pooling=doc.get("pooling", {}), eval=doc.get("eval", {}))
