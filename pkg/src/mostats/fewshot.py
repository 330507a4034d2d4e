"""Stage-2 evaluation: episodes, feature extraction, episodic classifier.

An episode is an N-way K-shot task drawn from the novel split: N classes
chosen uniformly among those with at least K+Q samples, then a uniform
without-replacement split of each chosen class into K support and Q query
samples. Episode labels are the positions 0..N-1 of the chosen classes.

Features for an image are the enabled pooled statistics of the backbone
output, each branch L2-normalized (without normalization the d^2-sized
branches dominate the classifier by scale; ``normalize=False`` preserves the
raw concatenation) and concatenated in branch order 1, 2, 3. Heads and
projectors play no role here.

The episodic classifier is multinomial logistic regression minimizing
mean cross-entropy plus (l2/2)||xi||^2 over all parameters (weights and
intercepts), trained by full-batch gradient descent with Armijo
backtracking. The problem is strictly convex, so the optimum is unique and
the fit deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import model as M
from . import mospool
from .errors import ContractError, DimensionError
from .rng import Rng, episode_rng

DEFAULT_WAY = 5
DEFAULT_QUERY = 15
DEFAULT_EPISODES = 2000

ALL_BRANCHES = (1, 2, 3)


# ---------------------------------------------------------------------------
# episodes
# ---------------------------------------------------------------------------

@dataclass
class Episode:
    way: int
    shot: int
    query_per_class: int
    class_ids: np.ndarray        # chosen split-local class ids, length N
    support_indices: np.ndarray  # indices into the split, length N*K
    support_labels: np.ndarray   # episode labels 0..N-1
    query_indices: np.ndarray    # length N*Q
    query_labels: np.ndarray


def sample_episode(split, way: int, shot: int, query: int, rng: Rng) -> Episode:
    """Uniform class choice, then uniform without-replacement sample split.

    Support and query sets are disjoint by construction. Classes with fewer
    than shot+query samples are ineligible; having fewer than ``way``
    eligible classes is an error naming the shortfall.
    """
    labels = np.asarray(split.labels)
    need = shot + query
    eligible = [c for c in range(split.n_classes) if int((labels == c).sum()) >= need]
    if len(eligible) < way:
        raise ContractError(
            f"need {way} classes with at least {need} samples, only {len(eligible)} eligible")
    chosen = np.asarray(eligible)[rng.choice(len(eligible), way, replace=False)]

    sup_idx, sup_y, qry_idx, qry_y = [], [], [], []
    for pos, c in enumerate(chosen):
        idx = np.where(labels == c)[0]
        perm = idx[rng.permutation(len(idx))]
        sup_idx.append(perm[:shot])
        qry_idx.append(perm[shot:need])
        sup_y.append(np.full(shot, pos))
        qry_y.append(np.full(query, pos))
    return Episode(
        way=way, shot=shot, query_per_class=query, class_ids=chosen,
        support_indices=np.concatenate(sup_idx), support_labels=np.concatenate(sup_y),
        query_indices=np.concatenate(qry_idx), query_labels=np.concatenate(qry_y),
    )


# ---------------------------------------------------------------------------
# feature extraction
# ---------------------------------------------------------------------------

def _branch_mask(enabled) -> tuple:
    mask = tuple(sorted(set(int(b) for b in enabled)))
    if not mask or any(b not in ALL_BRANCHES for b in mask):
        raise ContractError(f"branch mask must be a nonempty subset of {ALL_BRANCHES}, got {enabled}")
    return mask


def extract_features(ckpt: M.Checkpoint, images, enabled_branches=ALL_BRANCHES,
                     normalize: bool = True, chunk: int = 256) -> np.ndarray:
    """Concatenated pooled features, one f64 row per image.

    Deterministic: inference-mode forward with stored statistics, no graph.
    Branch vectors with exactly zero norm pass through unnormalized.
    """
    mask = _branch_mask(enabled_branches)
    cfg = M.BackboneConfig.from_dict(ckpt.config["model"])
    pooling = ckpt.config.get("pooling", {})
    eps = float(pooling.get("eps", mospool.DEFAULT_EPS))
    mode = pooling.get("c3_normalization", "standardized")
    images = np.asarray(images)
    if images.ndim != 4:
        raise DimensionError(f"expected (N,C,H,W) images, got {images.shape}")
    images = images.astype(ad.DTYPES[ckpt.config.get("dtype", "f32")], copy=False)

    rows = []
    for lo in range(0, len(images), chunk):
        x = ad.constant(images[lo:lo + chunk])
        fmap = M.backbone_forward(cfg, ckpt.params, x, training=False, buffers=ckpt.buffers)
        feats = mospool.pool_all(M.to_observations(fmap), eps=eps, mode=mode)
        parts = []
        for b in mask:
            z = {1: feats.z1, 2: feats.z2, 3: feats.z3}[b].value.astype(np.float64)
            if normalize:
                norms = np.sqrt((z ** 2).sum(axis=1, keepdims=True))
                z = z / np.maximum(norms, 1e-30)
            parts.append(z)
        rows.append(np.concatenate(parts, axis=1))
    return np.concatenate(rows, axis=0)


# ---------------------------------------------------------------------------
# episodic classifier
# ---------------------------------------------------------------------------

@dataclass
class LogregFit:
    weights: np.ndarray   # (D, C)
    bias: np.ndarray      # (C,)
    n_classes: int
    converged: bool
    n_iter: int
    grad_norm: float
    objective: float
    objective_history: list = field(default_factory=list, repr=False)


def _logreg_value_grad(w, b, x, y_onehot, l2):
    n = x.shape[0]
    logits = x @ w + b
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    ce = -(y_onehot * (shifted - np.log(e.sum(axis=1, keepdims=True)))).sum() / n
    obj = ce + 0.5 * l2 * ((w * w).sum() + (b * b).sum())
    diff = (p - y_onehot) / n
    return obj, x.T @ diff + l2 * w, diff.sum(axis=0) + l2 * b


def fit_logreg(features, labels, l2: float = 1.0, tol: float = 1e-6,
               max_iter: int = 1000) -> LogregFit:
    """Full-batch gradient descent with Armijo backtracking from zero init.

    Stops when the full gradient norm drops below ``tol``; hitting
    ``max_iter`` first is reported through ``converged``/``grad_norm``, not
    raised. The objective decreases monotonically across accepted steps.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise DimensionError("features must be (n,D) with one label per row")
    if l2 < 0:
        raise ContractError("l2 must be nonnegative")
    n_classes = int(y.max()) + 1
    if x.shape[0] < n_classes:
        raise ContractError("need at least one sample per class")
    y_onehot = np.zeros((x.shape[0], n_classes))
    y_onehot[np.arange(x.shape[0]), y] = 1.0

    w = np.zeros((x.shape[1], n_classes))
    b = np.zeros(n_classes)
    obj, gw, gb = _logreg_value_grad(w, b, x, y_onehot, l2)
    history = [float(obj)]
    step = 1.0
    it = 0
    gnorm = float(np.sqrt((gw * gw).sum() + (gb * gb).sum()))
    while gnorm >= tol and it < max_iter:
        gsq = gnorm * gnorm
        while True:
            w_new, b_new = w - step * gw, b - step * gb
            obj_new, gw_new, gb_new = _logreg_value_grad(w_new, b_new, x, y_onehot, l2)
            if obj_new <= obj - 1e-4 * step * gsq or step < 1e-20:
                break
            step *= 0.5
        w, b, obj, gw, gb = w_new, b_new, obj_new, gw_new, gb_new
        history.append(float(obj))
        gnorm = float(np.sqrt((gw * gw).sum() + (gb * gb).sum()))
        step = min(step * 2.0, 1e3)
        it += 1
    return LogregFit(weights=w, bias=b, n_classes=n_classes,
                     converged=gnorm < tol, n_iter=it, grad_norm=gnorm,
                     objective=float(obj), objective_history=history)


def classify(fit: LogregFit, features) -> np.ndarray:
    """Argmax of class scores; exact ties resolve to the lowest class index."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != fit.weights.shape[0]:
        raise DimensionError(f"features (n,{fit.weights.shape[0]}) expected, got {x.shape}")
    return np.argmax(x @ fit.weights + fit.bias, axis=1)


# ---------------------------------------------------------------------------
# evaluation protocol
# ---------------------------------------------------------------------------

@dataclass
class EvalSummary:
    way: int
    shot: int
    query: int
    episodes: int
    mean: float        # percent
    ci95: float        # percent, 1.96 * std / sqrt(episodes)
    branch_mask: tuple
    checkpoint_id: str
    per_episode: list = field(default_factory=list, repr=False)

    def to_json(self) -> str:
        payload = {"version": 1, "way": self.way, "shot": self.shot,
                   "episodes": self.episodes, "mean": self.mean, "ci95": self.ci95,
                   "branch_mask": list(self.branch_mask), "checkpoint_id": self.checkpoint_id}
        return json.dumps(payload, sort_keys=True)


def evaluate(ckpt: M.Checkpoint, novel_split, way: int = DEFAULT_WAY, shot: int = 1,
             query: int = DEFAULT_QUERY, episodes: int = DEFAULT_EPISODES,
             enabled_branches=ALL_BRANCHES, seed: int = 0, l2: float = 1.0,
             tol: float = 1e-6, max_iter: int = 1000, normalize: bool = True) -> EvalSummary:
    """Mean episode accuracy with a 95% confidence interval.

    Features for the whole novel split are extracted once (extraction is a
    pure function of checkpoint and image); each episode then indexes into
    them with its own derived random stream (seed XOR episode index), so
    results do not depend on evaluation order.
    """
    if episodes < 1:
        raise ContractError("episodes must be >= 1")
    mask = _branch_mask(enabled_branches)
    features = extract_features(ckpt, novel_split.images, mask, normalize=normalize)

    accs = np.empty(episodes)
    for ep in range(episodes):
        try:
            episode = sample_episode(novel_split, way, shot, query, episode_rng(seed, ep))
            fit = fit_logreg(features[episode.support_indices], episode.support_labels,
                             l2=l2, tol=tol, max_iter=max_iter)
            preds = classify(fit, features[episode.query_indices])
        except Exception as exc:
            raise type(exc)(f"episode {ep}: {exc}") from exc
        accs[ep] = 100.0 * float((preds == episode.query_labels).mean())

    ci95 = 0.0 if episodes < 2 else 1.96 * float(accs.std(ddof=1)) / np.sqrt(episodes)
    return EvalSummary(way=way, shot=shot, query=query, episodes=episodes,
                       mean=float(accs.mean()), ci95=ci95, branch_mask=mask,
                       checkpoint_id=ckpt.file_hash, per_episode=accs.tolist())
