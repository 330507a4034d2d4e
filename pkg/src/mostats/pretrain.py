"""Stage-1 training: joint optimization of backbone, heads and projectors.

Each epoch draws a seeded permutation of same-class image pairs and chunks
it into batches, so every augmented sample is guaranteed a positive for the
similarity loss (a class appearing exactly once in a batch would otherwise
violate that loss's contract). Odd per-class leftovers sit the epoch out.

Every batch runs: augment -> backbone -> multi-order pooling -> per-branch
heads and projectors -> per-branch losses -> weighted overall loss ->
backprop -> SGD with classical momentum and uniform weight decay. Loss
graphs are cast to f64 past the heads; the backbone trains in the
configured dtype (f32 by default).

Determinism: parameter init and every epoch's batch order derive from the
config seed via named substreams, so identical seeds give bit-identical
checkpoints, including runs resumed from a checkpoint (the momentum buffer,
which is not checkpointed, restarts at zero on resume).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import losses as L
from . import model as M
from . import mospool
from .errors import ContractError, DimensionError, NumericError
from .rng import Rng

LOSS_MODES = ("cb_sb", "cb", "sb")


@dataclass
class TrainConfig:
    epochs: int = 130
    batch_size: int = 32
    lr0: float = 0.025
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: list = field(default_factory=lambda: [(70, 0.2), (100, 0.2)])
    weights: L.EnsembleWeights = field(default_factory=L.EnsembleWeights)
    tau: float = 0.1
    seed: int = 0
    loss_mode: str = "cb_sb"
    loss_reduction: str = "mean"
    literal_eq8: bool = False
    checkpoint_every: int = 10
    dtype: str = "f32"
    proj_dim: int = 64
    pool_eps: float = mospool.DEFAULT_EPS
    c3_mode: str = "standardized"

    def __post_init__(self):
        if self.epochs < 1:
            raise ContractError("epochs must be >= 1")
        if self.lr0 <= 0:
            raise ContractError("lr0 must be positive")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ContractError("batch_size must be an even number >= 2 (pair sampling)")
        self.schedule = [(int(e), float(m)) for e, m in self.schedule]
        epochs_in_schedule = [e for e, _ in self.schedule]
        if epochs_in_schedule != sorted(set(epochs_in_schedule)):
            raise ContractError("schedule epochs must be strictly increasing")
        if self.loss_mode not in LOSS_MODES:
            raise ContractError(f"loss_mode must be one of {LOSS_MODES}")
        if self.loss_reduction not in L.REDUCTIONS:
            raise ContractError(f"loss_reduction must be one of {L.REDUCTIONS}")
        if self.dtype not in ad.DTYPES:
            raise ContractError("dtype must be f32 or f64")
        if self.c3_mode not in mospool.C3_MODES:
            raise ContractError(f"c3_mode must be one of {mospool.C3_MODES}")


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate in force during ``epoch``: lr0 times every schedule
    multiplier whose trigger epoch has been reached."""
    if not 0 <= epoch < cfg.epochs:
        raise ContractError(f"epoch {epoch} outside [0,{cfg.epochs})")
    lr = cfg.lr0
    for e, m in cfg.schedule:
        if e <= epoch:
            lr *= m
    return lr


def sgd_step(param: np.ndarray, grad: np.ndarray, velocity: np.ndarray,
             lr: float, momentum: float, weight_decay: float):
    """Classical-momentum SGD with weight decay folded into the gradient:

        v <- momentum * v + grad + weight_decay * param
        param <- param - lr * v
    """
    if not (param.shape == grad.shape == velocity.shape):
        raise DimensionError(
            f"shape mismatch: param {param.shape}, grad {grad.shape}, velocity {velocity.shape}")
    v = momentum * velocity + grad + weight_decay * param
    return param - lr * v, v


# ---------------------------------------------------------------------------
# batch construction
# ---------------------------------------------------------------------------

def epoch_pair_batches(labels: np.ndarray, batch_size: int, rng: Rng) -> list[np.ndarray]:
    """Seeded permutation of same-class index pairs, chunked into batches."""
    pairs = []
    for c in np.unique(labels):
        idx = np.where(labels == c)[0]
        perm = idx[rng.permutation(len(idx))]
        for j in range(len(perm) // 2):
            pairs.append((perm[2 * j], perm[2 * j + 1]))
    pairs = np.asarray(pairs, dtype=np.int64)
    if len(pairs) == 0:
        raise ContractError("no class has two or more samples; cannot form batches")
    order = rng.permutation(len(pairs))
    per_batch = batch_size // 2
    return [pairs[order[i:i + per_batch]].reshape(-1)
            for i in range(0, len(order), per_batch)]


# ---------------------------------------------------------------------------
# loss graph for one augmented batch
# ---------------------------------------------------------------------------

def build_batch_loss(model_cfg: M.BackboneConfig, param_leaves: dict, buffers: dict,
                     aug_images: np.ndarray, aug_labels: np.ndarray,
                     cfg: TrainConfig):
    """Forward one augmented batch; returns (overall loss node, branch
    reports). Branch losses are computed in f64 regardless of the model
    dtype."""
    x = ad.constant(aug_images)
    fmap = M.backbone_forward(model_cfg, param_leaves, x, training=True, buffers=buffers)
    feats = mospool.pool_all(M.to_observations(fmap), eps=cfg.pool_eps, mode=cfg.c3_mode)

    reports = []
    for o, z in ((1, feats.z1), (2, feats.z2), (3, feats.z3)):
        cb_node = sb_node = None
        if cfg.loss_mode in ("cb_sb", "cb"):
            logits = ad.cast(ad.matmul(z, param_leaves[f"head{o}_w"]), "f64")
            cb_node = L.cb_loss_logits(logits, aug_labels, reduction=cfg.loss_reduction)
        if cfg.loss_mode in ("cb_sb", "sb"):
            proj = ad.cast(ad.matmul(z, param_leaves[f"proj{o}_w"]), "f64")
            sb_node = L.sb_loss(ad.l2_normalize(proj, axis=-1), aug_labels, tau=cfg.tau,
                                reduction=cfg.loss_reduction, literal_eq8=cfg.literal_eq8)
        if cb_node is None:
            total = sb_node
        elif sb_node is None:
            total = cb_node
        else:
            total = ad.add(cb_node, sb_node)
        reports.append(L.BranchLossReport(
            cb=float(cb_node.value) if cb_node is not None else 0.0,
            sb=float(sb_node.value) if sb_node is not None else 0.0,
            total=float(total.value), node=total))
    overall = L.overall_loss_node([r.node for r in reports], cfg.weights)
    return overall, reports


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    overall: float
    branches: list   # [{"cb":..., "sb":..., "total":...} x3], batch means
    lr: float
    wall_time: float

    def to_dict(self):
        return {"epoch": self.epoch, "overall": self.overall, "branches": self.branches,
                "lr": self.lr, "wall_time": self.wall_time}


def pretrain(train_split, model_cfg: M.BackboneConfig, cfg: TrainConfig, out_dir,
             resume: str | None = None):
    """Run the full training loop; returns (final checkpoint path, log).

    ``train_split`` provides float images (N,C,H,W) with contiguous class
    labels in [0, n_classes). Checkpoints land in ``out_dir`` every
    ``checkpoint_every`` epochs and at the end; the per-epoch log is
    appended to ``out_dir/train_log.ndjson`` as it is produced.
    """
    images, labels = np.asarray(train_split.images), np.asarray(train_split.labels)
    n_classes = int(train_split.n_classes)
    if images.ndim != 4 or len(images) == 0:
        raise ContractError("training split must contain (N,C,H,W) images")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ContractError("labels must lie in [0, n_classes)")
    images = images.astype(ad.DTYPES[cfg.dtype], copy=False)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_config = {
        "model": model_cfg.to_dict(),
        "n_base_classes": n_classes,
        "proj_dim": cfg.proj_dim,
        "pooling": {"eps": cfg.pool_eps, "c3_normalization": cfg.c3_mode},
        "dtype": cfg.dtype,
    }

    start_epoch = 0
    if resume is not None:
        ck = M.load_checkpoint(resume)
        if ck.config != ckpt_config:
            raise ContractError("resume checkpoint config does not match this run")
        params, buffers, start_epoch = ck.params, ck.buffers, ck.epoch
        if start_epoch >= cfg.epochs:
            raise ContractError(f"checkpoint already at epoch {start_epoch} >= epochs {cfg.epochs}")
        log_mode = "a"
    else:
        params, buffers = M.init_params(model_cfg, n_classes, cfg.proj_dim,
                                        Rng(cfg.seed).derive("init"), dtype=cfg.dtype)
        log_mode = "w"
    velocity = {k: np.zeros_like(v) for k, v in params.items()}

    # precompute the deterministic eightfold expansion once
    aug_all = M.augment(images, labels)
    aug_images_all = aug_all.images
    aug_labels_all = aug_all.labels

    log: list[EpochRecord] = []
    log_path = out_dir / "train_log.ndjson"
    base_rng = Rng(cfg.seed)

    with open(log_path, log_mode) as log_fp:
        for epoch in range(start_epoch, cfg.epochs):
            t0 = time.perf_counter()
            lr = lr_at(cfg, epoch)
            batches = epoch_pair_batches(labels, cfg.batch_size, base_rng.derive(f"epoch{epoch}"))
            overall_sum = 0.0
            branch_sums = np.zeros((3, 3))
            for b, batch_idx in enumerate(batches):
                rows = (batch_idx[:, None] * M.N_TRANSFORMS
                        + np.arange(M.N_TRANSFORMS)[None, :]).reshape(-1)
                leaves = {k: ad.leaf(v, requires_grad=True) for k, v in params.items()}
                try:
                    overall, reports = build_batch_loss(
                        model_cfg, leaves, buffers, aug_images_all[rows],
                        aug_labels_all[rows], cfg)
                    ad.backward(overall)
                except NumericError as exc:
                    raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from exc
                for k in params:
                    g = leaves[k].grad
                    if g is None:
                        g = np.zeros_like(params[k])
                    params[k], velocity[k] = sgd_step(params[k], g, velocity[k],
                                                      lr, cfg.momentum, cfg.weight_decay)
                overall_sum += float(overall.value)
                for o, r in enumerate(reports):
                    branch_sums[o] += (r.cb, r.sb, r.total)

            nb = len(batches)
            record = EpochRecord(
                epoch=epoch,
                overall=overall_sum / nb,
                branches=[{"cb": branch_sums[o, 0] / nb, "sb": branch_sums[o, 1] / nb,
                           "total": branch_sums[o, 2] / nb} for o in range(3)],
                lr=lr,
                wall_time=time.perf_counter() - t0,
            )
            log.append(record)
            log_fp.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
            log_fp.flush()

            done = epoch + 1
            if done % cfg.checkpoint_every == 0 and done < cfg.epochs:
                M.save_checkpoint(out_dir / f"checkpoint_epoch{done:04d}.bin",
                                  ckpt_config, params, buffers, cfg.seed, done)

    final_path = out_dir / "checkpoint_final.bin"
    M.save_checkpoint(final_path, ckpt_config, params, buffers, cfg.seed, cfg.epochs)
    return final_path, log
