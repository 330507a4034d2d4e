"""Per-branch supervised losses and their weighted ensemble combination.

Two losses per branch: a classification loss (summed negative log-likelihood
over the batch) and a similarity loss (supervised contrastive over unit
projection vectors). Their sum is the branch objective; the overall training
objective is the weighted sum over the three branches.

The similarity loss follows the literal published placement: for each anchor
the positive terms are summed first and the log is taken outside that sum.
Self-exclusion is the default: the anchor is removed from its positive set
and from the normalizing sum (the verbatim form, which keeps the anchor in
both and admits a collapsed-embedding minimum, is available via
``literal_eq8=True``).

Both losses default to the literal summed reduction; ``reduction="mean"``
divides by the batch size, which keeps learning rates batch-size-agnostic.
Loss graphs are cheap relative to the backbone, so callers are encouraged
to cast inputs to f64 (the training loop does).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ContractError

_NEG_BIG = 1e30  # additive mask: exp(-_NEG_BIG + anything finite) == 0.0

REDUCTIONS = ("sum", "mean")


def _check_reduction(reduction: str):
    if reduction not in REDUCTIONS:
        raise ContractError(f"reduction must be one of {REDUCTIONS}, got {reduction!r}")


def _reduce(total: Node, n: int, reduction: str) -> Node:
    if reduction == "mean":
        return ad.mul(total, ad.constant(np.asarray(1.0 / n, dtype=total.value.dtype)))
    return total


def cb_loss(P, labels, reduction: str = "sum") -> Node:
    """Negative log-likelihood of the true classes under probabilities P.

    P rows must sum to 1 (checked within 1e-4). The summed form matches the
    published objective; a true-class probability of exactly zero surfaces
    a numeric error rather than an infinite loss.
    """
    _check_reduction(reduction)
    P = P if isinstance(P, Node) else ad.constant(np.asarray(P))
    if P.value.ndim != 2:
        raise ContractError(f"P must be (batch, classes), got {P.value.shape}")
    row_sums = P.value.sum(axis=1)
    if np.abs(row_sums - 1.0).max() > 1e-4:
        raise ContractError("rows of P must sum to 1; pass softmax output")
    if P.value.min() < 0:
        raise ContractError("P has negative entries")
    picked = ad.select_labels(P, labels)
    total = ad.neg(ad.sum_(ad.log(picked)))
    return _reduce(total, P.value.shape[0], reduction)


def cb_loss_logits(logits, labels, reduction: str = "sum") -> Node:
    """Fused log-softmax variant of :func:`cb_loss`, equal in value and
    gradient but stable for extreme logits (gradient w.r.t. logits is
    softmax minus one-hot)."""
    _check_reduction(reduction)
    logits = logits if isinstance(logits, Node) else ad.constant(np.asarray(logits))
    ls = ad.log_softmax(logits, axis=-1)
    total = ad.neg(ad.sum_(ad.select_labels(ls, labels)))
    return _reduce(total, logits.value.shape[0], reduction)


def _similarity_loss(S: Node, labels: np.ndarray, literal_eq8: bool, reduction: str) -> Node:
    """Contrastive loss over a precomputed similarity matrix S (already
    divided by the temperature)."""
    n = S.value.shape[0]
    if n < 2:
        raise ContractError("similarity loss needs a batch of at least 2")
    same = labels[:, None] == labels[None, :]
    eye = np.eye(n, dtype=bool)
    if literal_eq8:
        pos_mask = same                       # anchor counts as its own positive
        denom_mask = np.ones((n, n), bool)    # sum over every a
    else:
        pos_mask = same & ~eye
        denom_mask = ~eye                     # excludes a == i per anchor row
        missing = np.where(~pos_mask.any(axis=1))[0]
        if missing.size:
            i = int(missing[0])
            raise ContractError(
                f"sample {i} (label {int(labels[i])}) has no positive in the batch; "
                "batches must pair same-label samples")

    dt = S.value.dtype
    # log denominator D[i,q] = log sum_{a in denom(i)} exp(S[a,q]), with the
    # column max detached for stability.
    col_max = ad.constant(S.value.max(axis=0, keepdims=True))
    E = ad.exp(ad.sub(S, col_max))
    col_sum = ad.sum_(E, axis=0, keepdims=True)
    if literal_eq8:
        excl = ad.add(col_max, ad.log(col_sum))          # (1,n), broadcasts over i
        log_term = ad.sub(S, excl)
    else:
        remainder = ad.sub(col_sum, E)                   # entry (i,q): sum over a != i
        log_term = ad.sub(S, ad.add(col_max, ad.log(remainder)))

    # per-anchor log of the summed positive terms, masked before exp
    mask = ad.constant(pos_mask.astype(dt))
    neg_fill = ad.constant(((~pos_mask) * _NEG_BIG).astype(dt))
    masked = ad.sub(ad.mul(log_term, mask), neg_fill)
    row_max = ad.constant(np.where(pos_mask, masked.value, -np.inf).max(axis=1, keepdims=True))
    sums = ad.sum_(ad.exp(ad.sub(masked, row_max)), axis=1, keepdims=True)
    per_anchor = ad.add(row_max, ad.log(sums))
    total = ad.neg(ad.sum_(per_anchor))
    return _reduce(total, n, reduction)


def sb_loss(U, labels, tau: float = 0.1, reduction: str = "sum",
            literal_eq8: bool = False) -> Node:
    """Supervised contrastive loss over unit projection rows.

    Every row must be L2-normalized (checked within 1e-6) and, in the
    default self-excluding mode, every sample needs at least one other
    sample with the same label; offending batches are rejected with the
    label named. tau scales similarities as exp(u_i . u_q / tau).
    """
    _check_reduction(reduction)
    if tau <= 0:
        raise ContractError("tau must be positive")
    U = U if isinstance(U, Node) else ad.constant(np.asarray(U))
    if U.value.ndim != 2:
        raise ContractError(f"U must be (batch, proj_dim), got {U.value.shape}")
    labels = np.asarray(labels)
    if labels.shape != (U.value.shape[0],):
        raise ContractError("labels must align with the batch")
    norms = np.sqrt((U.value ** 2).sum(axis=1))
    if np.abs(norms - 1.0).max() > 1e-6:
        raise ContractError("rows of U must be unit vectors; apply the projector first")

    S = ad.mul(ad.matmul(U, ad.swap_last2(U)),
               ad.constant(np.asarray(1.0 / tau, dtype=U.value.dtype)))
    return _similarity_loss(S, labels, literal_eq8, reduction)


@dataclass
class BranchLossReport:
    """Scalar summary of one branch: total is cb + sb exactly; ``node`` is
    the differentiable total when the losses were built on a graph."""

    cb: float
    sb: float
    total: float
    node: Node | None = None


def branch_loss(P, U, labels, tau: float = 0.1, reduction: str = "sum",
                literal_eq8: bool = False) -> BranchLossReport:
    cb = cb_loss(P, labels, reduction=reduction)
    sb = sb_loss(U, labels, tau=tau, reduction=reduction, literal_eq8=literal_eq8)
    node = ad.add(cb, sb)
    return BranchLossReport(cb=float(cb.value), sb=float(sb.value),
                            total=float(cb.value) + float(sb.value), node=node)


@dataclass
class EnsembleWeights:
    """Nonnegative branch weights. alpha2=0.3 is the published alternative
    for datasets where the covariance branch should contribute less."""

    alpha1: float = 1.0
    alpha2: float = 1.0
    alpha3: float = 1.0

    def __post_init__(self):
        if min(self.alpha1, self.alpha2, self.alpha3) < 0:
            raise ContractError("ensemble weights must be nonnegative")

    def as_tuple(self):
        return (self.alpha1, self.alpha2, self.alpha3)


def overall_loss(reports, weights: EnsembleWeights) -> float:
    """Weighted sum of the three branch totals."""
    reports = list(reports)
    if len(reports) != 3:
        raise ContractError(f"expected 3 branch reports, got {len(reports)}")
    return float(sum(a * r.total for a, r in zip(weights.as_tuple(), reports)))


def overall_loss_node(nodes, weights: EnsembleWeights) -> Node:
    """Differentiable counterpart of :func:`overall_loss` over branch total
    nodes."""
    nodes = list(nodes)
    if len(nodes) != 3:
        raise ContractError(f"expected 3 branch nodes, got {len(nodes)}")
    dt = nodes[0].value.dtype
    out = None
    for a, node in zip(weights.as_tuple(), nodes):
        term = ad.mul(node, ad.constant(np.asarray(a, dtype=dt)))
        out = term if out is None else ad.add(out, term)
    return out
