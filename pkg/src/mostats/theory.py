"""Exact empirical verification of the ensemble generalization bound.

Everything here lives on a finite discrete domain of m points carrying two
probability vectors (source and target densities), two [0,1]-valued label
functions, and O hypothesis tables combined by simplex weights. On such an
instance both inequalities behind the bound are checkable in plain f64 with
fixed-order summation:

* slack1: target error of the combined learner is at most its source error
  plus the L1 domain divergence plus the label-disagreement constant. This
  chain rests on the triangle inequality, so it is guaranteed for the
  absolute loss only; reports computed under the squared loss still fill
  the field in, but no claim attaches to it.
* slack2: source error of the combined learner is at most the weighted
  average of the individual source errors. Pure Jensen, so it holds for
  any convex loss; both absolute and squared are verified.

Hypotheses are explicit value tables rather than trained models, keeping
the checks exact. :func:`instance_from_error_indicators` bridges trained
models onto this world approximately by exporting per-sample error
indicators. The single target table per instance doubles as the optimal
mapping in the Jensen step (the two are not distinguished here).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .rng import Rng

LOSSES = ("abs", "sq")

_SIMPLEX_TOL = 1e-12


@dataclass
class DiscreteDomainInstance:
    """Finite sample space: densities eta_b/eta_n, label tables f_b/f_n,
    O hypothesis tables and simplex weights alpha."""

    eta_b: np.ndarray      # (m,)
    eta_n: np.ndarray      # (m,)
    f_b: np.ndarray        # (m,) values in [0,1]
    f_n: np.ndarray        # (m,)
    hypotheses: np.ndarray  # (O, m) values in [0,1]
    alpha: np.ndarray      # (O,) nonnegative, sums to 1

    def __post_init__(self):
        for name in ("eta_b", "eta_n", "f_b", "f_n", "hypotheses", "alpha"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        m = self.eta_b.shape[0]
        if self.eta_n.shape != (m,) or self.f_b.shape != (m,) or self.f_n.shape != (m,):
            raise DimensionError("density and label tables must share the domain size")
        if self.hypotheses.ndim != 2 or self.hypotheses.shape[1] != m:
            raise DimensionError("hypotheses must be (O, m)")
        if self.alpha.shape != (self.hypotheses.shape[0],):
            raise DimensionError("alpha must have one weight per hypothesis")
        self.validate()

    @property
    def m(self) -> int:
        return self.eta_b.shape[0]

    @property
    def n_hypotheses(self) -> int:
        return self.hypotheses.shape[0]

    def validate(self):
        for name in ("eta_b", "eta_n"):
            eta = getattr(self, name)
            if eta.min() < 0:
                raise ContractError(f"{name} has negative mass")
            if abs(eta.sum() - 1.0) > _SIMPLEX_TOL:
                raise ContractError(f"{name} sums to {eta.sum():.17g}, not 1")
        for name in ("f_b", "f_n", "hypotheses"):
            v = getattr(self, name)
            if v.min() < -0.0 or v.max() > 1.0:
                raise ContractError(f"{name} values must lie in [0,1]")
        if self.alpha.min() < 0:
            raise ContractError("alpha weights must be nonnegative")
        if abs(self.alpha.sum() - 1.0) > _SIMPLEX_TOL:
            raise ContractError(f"alpha sums to {self.alpha.sum():.17g}, not 1")


def ensemble_combine(hypotheses, alpha) -> np.ndarray:
    """Pointwise weighted average of hypothesis tables."""
    hypotheses = np.asarray(hypotheses, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if hypotheses.ndim != 2 or alpha.shape != (hypotheses.shape[0],):
        raise DimensionError("need (O,m) hypotheses and (O,) weights")
    if alpha.min() < 0 or abs(alpha.sum() - 1.0) > _SIMPLEX_TOL:
        raise ContractError("alpha must be a simplex weight vector")
    return alpha @ hypotheses


def _pointwise_loss(h, f, loss: str) -> np.ndarray:
    if loss == "abs":
        return np.abs(h - f)
    if loss == "sq":
        return (h - f) ** 2
    raise ContractError(f"loss must be one of {LOSSES}, got {loss!r}")


def expected_error(h, f, eta, loss: str = "abs") -> float:
    """Density-weighted loss sum over the domain."""
    h = np.asarray(h, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    return float((eta * _pointwise_loss(h, f, loss)).sum())


def divergence(eta_b, eta_n, h_bar, f_n) -> float:
    """L1 domain divergence: sum |eta_b - eta_n| * |h_bar - f_n|."""
    eta_b = np.asarray(eta_b, dtype=np.float64)
    eta_n = np.asarray(eta_n, dtype=np.float64)
    h_bar = np.asarray(h_bar, dtype=np.float64)
    f_n = np.asarray(f_n, dtype=np.float64)
    return float((np.abs(eta_b - eta_n) * np.abs(h_bar - f_n)).sum())


def lambda_term(eta_b, f_b, f_n) -> float:
    """Source-weighted disagreement between the two label functions."""
    eta_b = np.asarray(eta_b, dtype=np.float64)
    return float((eta_b * np.abs(np.asarray(f_n, dtype=np.float64)
                                 - np.asarray(f_b, dtype=np.float64))).sum())


@dataclass
class BoundReport:
    """Signed slacks of both inequalities under one chosen loss.

    slack1 = (e_b_bar + divergence + lam) - e_n_bar
    slack2 = e_b_avg - e_b_bar

    slack1 carries a guarantee only when loss == "abs"; slack2 for both
    losses. divergence and lam always use their literal absolute forms.
    """

    loss: str
    e_n_bar: float
    e_b_bar: float
    e_b_avg: float
    divergence: float
    lam: float
    slack1: float
    slack2: float

    def to_dict(self) -> dict:
        return {"loss": self.loss, "e_n_bar": self.e_n_bar, "e_b_bar": self.e_b_bar,
                "e_b_avg": self.e_b_avg, "divergence": self.divergence, "lam": self.lam,
                "slack1": self.slack1, "slack2": self.slack2}


def verify_theorem1(instance: DiscreteDomainInstance, loss: str = "abs") -> BoundReport:
    """Evaluate both bound inequalities on one instance."""
    instance.validate()
    h_bar = ensemble_combine(instance.hypotheses, instance.alpha)
    e_n_bar = expected_error(h_bar, instance.f_n, instance.eta_n, loss)
    e_b_bar = expected_error(h_bar, instance.f_b, instance.eta_b, loss)
    e_b_avg = float(sum(
        a * expected_error(h, instance.f_b, instance.eta_b, loss)
        for a, h in zip(instance.alpha, instance.hypotheses)))
    div = divergence(instance.eta_b, instance.eta_n, h_bar, instance.f_n)
    lam = lambda_term(instance.eta_b, instance.f_b, instance.f_n)
    return BoundReport(
        loss=loss,
        e_n_bar=e_n_bar,
        e_b_bar=e_b_bar,
        e_b_avg=e_b_avg,
        divergence=div,
        lam=lam,
        slack1=(e_b_bar + div + lam) - e_n_bar,
        slack2=e_b_avg - e_b_bar,
    )


def random_instance(rng: Rng, m: int, n_hypotheses: int) -> DiscreteDomainInstance:
    """Instance with normalized-uniform densities and weights, uniform
    label and hypothesis tables."""
    if m < 1 or n_hypotheses < 1:
        raise ContractError("need m >= 1 and at least one hypothesis")

    def simplex(k):
        v = rng.uniform(1e-9, 1.0, size=k)
        return v / v.sum()

    return DiscreteDomainInstance(
        eta_b=simplex(m),
        eta_n=simplex(m),
        f_b=rng.uniform(0.0, 1.0, size=m),
        f_n=rng.uniform(0.0, 1.0, size=m),
        hypotheses=rng.uniform(0.0, 1.0, size=(n_hypotheses, m)),
        alpha=simplex(n_hypotheses),
    )


def instance_from_error_indicators(base_errors, novel_errors, alpha) -> DiscreteDomainInstance:
    """Bridge trained-model behavior onto a discrete instance (approximate).

    ``base_errors`` and ``novel_errors`` are (O, n) tables of per-sample
    error indicators in [0,1], one row per ensemble member. Samples become
    domain points: the source density is uniform on the base block, the
    target density uniform on the novel block, and both label tables are
    identically zero, so each hypothesis table IS its error profile and
    expected errors reduce to mean error rates.
    """
    base = np.asarray(base_errors, dtype=np.float64)
    novel = np.asarray(novel_errors, dtype=np.float64)
    if base.ndim != 2 or novel.ndim != 2 or base.shape[0] != novel.shape[0]:
        raise DimensionError("error tables must be (O, n_base) and (O, n_novel)")
    alpha = np.asarray(alpha, dtype=np.float64)
    alpha = alpha / alpha.sum()
    nb, nn = base.shape[1], novel.shape[1]
    m = nb + nn
    eta_b = np.concatenate([np.full(nb, 1.0 / nb), np.zeros(nn)])
    eta_n = np.concatenate([np.zeros(nb), np.full(nn, 1.0 / nn)])
    return DiscreteDomainInstance(
        eta_b=eta_b,
        eta_n=eta_n,
        f_b=np.zeros(m),
        f_n=np.zeros(m),
        hypotheses=np.concatenate([base, novel], axis=1),
        alpha=alpha,
    )


def run_suite(trials: int, max_m: int = 32, max_hypotheses: int = 5, seed: int = 0,
              slack_tol: float = -1e-12):
    """Yield (trial, instance, report_abs, report_sq, ok) over seeded random
    instances. ok is False when any guaranteed slack dips below the
    tolerance."""
    rng = Rng(seed)
    for t in range(trials):
        m = int(rng.integers(1, max_m + 1))
        o = int(rng.integers(1, max_hypotheses + 1))
        inst = random_instance(rng, m, o)
        rep_abs = verify_theorem1(inst, loss="abs")
        rep_sq = verify_theorem1(inst, loss="sq")
        ok = (rep_abs.slack1 >= slack_tol and rep_abs.slack2 >= slack_tol
              and rep_sq.slack2 >= slack_tol)
        yield t, inst, rep_abs, rep_sq, ok
