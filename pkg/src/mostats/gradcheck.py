"""Finite-difference verification registry for every differentiable op.

Each entry builds a few seeded random cases for one op, runs
:func:`mostats.autodiff.finite_diff_check` at f64 with h=1e-5, and reports
the worst relative error. Inputs are kept away from non-differentiable
points (ReLU kinks, pooling ties) since central differences are meaningless
there. Op lookups go through module attributes at call time, so a patched
(corrupted) backward rule is picked up by the harness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import losses as L
from . import model as M
from . import mospool
from .rng import Rng

THRESHOLD = 1e-4
STEP = 1e-5


@dataclass
class GradcheckResult:
    name: str
    max_error: float
    passed: bool


def _rand(rng: Rng, *shape):
    return rng.uniform(-1.0, 1.0, size=shape)


def _rand_away(rng: Rng, *shape, margin=0.05):
    """Uniform values bounded away from zero (ReLU/pool-safe)."""
    v = rng.uniform(margin, 1.0, size=shape)
    s = rng.choice(2, v.size, replace=True).reshape(shape) * 2 - 1
    return v * s


def _spread(rng: Rng, *shape, gap=0.05):
    """Values with pairwise gaps, so 2x2 max windows have no near-ties."""
    n = int(np.prod(shape))
    base = np.arange(n) * gap + rng.uniform(0, gap / 4, size=n)
    return base[rng.permutation(n)].reshape(shape)


def _check(f, x):
    return ad.finite_diff_check(f, np.asarray(x, dtype=np.float64), h=STEP)


# Builders hoist every random draw out of the checked lambdas: the checked
# function must be pure, and a constant drawn inside would advance the
# stream between finite-difference evaluations.
def _elementwise_checks(rng: Rng):
    a = _rand(rng, 3, 4)
    b = _rand(rng, 3, 4) + 2.0
    yield "add", max(_check(lambda x: ad.sum_(ad.add(x, ad.constant(b))), a),
                     _check(lambda x: ad.sum_(ad.add(ad.constant(a), x)), b))
    yield "sub", _check(lambda x: ad.sum_(ad.sub(x, ad.constant(b))), a)
    yield "mul", max(_check(lambda x: ad.sum_(ad.mul(x, ad.constant(b))), a),
                     _check(lambda x: ad.sum_(ad.mul(ad.constant(a), x)), b))
    yield "div", max(_check(lambda x: ad.sum_(ad.div(x, ad.constant(b))), a),
                     _check(lambda x: ad.sum_(ad.div(ad.constant(a), x)), b))
    yield "neg", _check(lambda x: ad.sum_(ad.neg(x)), a)
    yield "exp", _check(lambda x: ad.sum_(ad.exp(x)), a)
    yield "log", _check(lambda x: ad.sum_(ad.log(x)), b)
    yield "sqrt", _check(lambda x: ad.sum_(ad.sqrt(x)), b)
    yield "power", _check(lambda x: ad.sum_(ad.power(x, 1.7)), b)
    yield "relu", _check(lambda x: ad.sum_(ad.relu(x)), _rand_away(rng, 3, 4))


def _shape_checks(rng: Rng):
    a = _rand(rng, 2, 3, 4)
    w_flat = _rand(rng, 6, 4)
    yield "reshape", _check(lambda x: ad.sum_(ad.mul(ad.reshape(x, (6, 4)),
                                                     ad.constant(w_flat))), a)
    w_t = _rand(rng, 4, 2, 3)
    yield "transpose", _check(lambda x: ad.sum_(ad.mul(ad.transpose(x, (2, 0, 1)),
                                                       ad.constant(w_t))), a)
    parts = [_rand(rng, 2, 3), _rand(rng, 2, 2)]
    w = _rand(rng, 2, 5)
    yield "concat", _check(
        lambda x: ad.sum_(ad.mul(ad.concat([x, ad.constant(parts[1])], axis=1),
                                 ad.constant(w))), parts[0])
    sq = _rand(rng, 4, 4)
    w_d = _rand(rng, 4)
    yield "diagonal", _check(lambda x: ad.sum_(ad.mul(ad.diagonal(x),
                                                      ad.constant(w_d))), sq)
    labels = np.asarray(rng.integers(0, 5, size=6))
    yield "select_labels", _check(lambda x: ad.sum_(ad.select_labels(x, labels)),
                                  _rand(rng, 6, 5))


def _reduction_checks(rng: Rng):
    a = _rand(rng, 3, 4, 2)
    w = _rand(rng, 3, 2)
    yield "sum", _check(lambda x: ad.sum_(ad.mul(ad.sum_(x, axis=1), ad.constant(w))), a)
    w_m = _rand(rng, 4)
    yield "mean", _check(lambda x: ad.sum_(ad.mul(ad.mean(x, axis=(0, 2)),
                                                  ad.constant(w_m))), a)


def _linalg_checks(rng: Rng):
    a, b = _rand(rng, 3, 4), _rand(rng, 4, 2)
    yield "matmul_2d", max(_check(lambda x: ad.sum_(ad.matmul(x, ad.constant(b))), a),
                           _check(lambda x: ad.sum_(ad.matmul(ad.constant(a), x)), b))
    ab, bb = _rand(rng, 2, 3, 4), _rand(rng, 2, 4, 2)
    yield "matmul_batched", max(
        _check(lambda x: ad.sum_(ad.matmul(x, ad.constant(bb))), ab),
        _check(lambda x: ad.sum_(ad.matmul(ad.constant(ab), x)), bb))
    yield "matmul_3d_2d", _check(lambda x: ad.sum_(ad.matmul(ad.constant(ab), x)), b)


def _conv_checks(rng: Rng):
    x = _rand(rng, 2, 2, 5, 5)
    k = _rand(rng, 3, 2, 3, 3)
    yield "conv2d", max(
        _check(lambda v: ad.sum_(ad.conv2d(v, ad.constant(k), stride=1, padding=1)), x),
        _check(lambda v: ad.sum_(ad.conv2d(ad.constant(x), v, stride=1, padding=1)), k))
    w = _rand(rng, 1, 2, 2, 2)
    yield "maxpool2", _check(
        lambda v: ad.sum_(ad.mul(ad.maxpool2(v), ad.constant(w))), _spread(rng, 1, 2, 4, 4))


def _composite_checks(rng: Rng):
    z = _rand(rng, 3, 6)
    w = _rand(rng, 3, 6)
    yield "softmax", _check(lambda x: ad.sum_(ad.mul(ad.softmax(x), ad.constant(w))), z)
    yield "log_softmax", _check(
        lambda x: ad.sum_(ad.mul(ad.log_softmax(x), ad.constant(w))), z)
    v = _rand(rng, 3, 5) + 2.0
    w_n = _rand(rng, 3, 5)
    yield "l2_normalize", _check(
        lambda x: ad.sum_(ad.mul(ad.l2_normalize(x), ad.constant(w_n))), v)


def _mospool_checks(rng: Rng):
    t = _rand(rng, 7, 3) * 2.0
    w_vec, w_m1, w_m2, w_m3 = (_rand(rng, 3), _rand(rng, 3, 3),
                               _rand(rng, 3, 3), _rand(rng, 3, 3))
    yield "pool_order1", _check(
        lambda x: ad.sum_(ad.mul(mospool.pool_order1(x), ad.constant(w_vec))), t)
    yield "pool_order2", _check(
        lambda x: ad.sum_(ad.mul(mospool.pool_order2(x), ad.constant(w_m1))), t)
    yield "pool_order3", _check(
        lambda x: ad.sum_(ad.mul(mospool.pool_order3(x), ad.constant(w_m2))), t)
    yield "pool_order3_literal", _check(
        lambda x: ad.sum_(ad.mul(mospool.pool_order3(x, mode="literal_matrix"),
                                 ad.constant(w_m3))), t)

    def pooled_scalar(x):
        feats = mospool.pool_all(x)
        return ad.sum_(ad.concat([ad.mul(feats.z1, ad.constant(_w1)),
                                  ad.mul(feats.z2, ad.constant(_w2)),
                                  ad.mul(feats.z3, ad.constant(_w3))]))

    _w1, _w2, _w3 = _rand(rng, 3), _rand(rng, 9), _rand(rng, 9)
    yield "pool_all", _check(pooled_scalar, t)


def _model_checks(rng: Rng):
    w = _rand(rng, 5, 4)
    r = _rand(rng, 3, 4)
    yield "head_forward", _check(
        lambda z: ad.sum_(ad.mul(M.head_forward(ad.constant(w), z), ad.constant(r))),
        _rand(rng, 3, 5))
    u = _rand(rng, 5, 4)
    z_fix = _rand(rng, 3, 5) + 1.0
    yield "projector_forward", max(
        _check(lambda z: ad.sum_(ad.mul(M.projector_forward(ad.constant(u), z),
                                        ad.constant(r))), _rand(rng, 3, 5) + 1.0),
        _check(lambda v: ad.sum_(ad.mul(M.projector_forward(v, ad.constant(z_fix)),
                                        ad.constant(r))), u))

    cfg = M.BackboneConfig(blocks=[(4, True), (5, False)], in_shape=(2, 8, 8))
    params, buffers = M.init_params(cfg, 2, 3, rng=Rng(7), dtype="f64")
    x = _spread(rng, 2, 2, 8, 8) * 0.3
    rw = _rand(rng, 2, 5, 4, 4)

    def net_scalar(inp_params):
        def run(substitute_name, node):
            p = {k: ad.constant(v) for k, v in params.items()}
            if substitute_name is not None:
                p[substitute_name] = node
            inp = node if substitute_name is None else ad.constant(x)
            out = M.backbone_forward(cfg, p, inp, training=False, buffers=buffers)
            return ad.sum_(ad.mul(out, ad.constant(rw)))
        return run

    run = net_scalar(None)
    errs = [_check(lambda v: run(None, v), x)]
    for name in ("conv1_w", "conv2_w", "conv1_b", "conv2_b"):
        errs.append(_check(lambda v, n=name: run(n, v), params[name]))
    yield "backbone_forward", max(errs)

    ncfg = M.BackboneConfig(blocks=[(4, True), (5, False)], in_shape=(2, 8, 8),
                            normalization="per-channel")
    nparams, _ = M.init_params(ncfg, 2, 3, rng=Rng(8), dtype="f64")
    nx = _spread(rng, 2, 2, 8, 8) * 0.3

    def norm_run(substitute_name, node):
        # fresh buffers per evaluation: running-stat updates must not leak
        # state between finite-difference probes
        bufs = {k: np.zeros(v) if "mean" in k else np.ones(v)
                for k, v in (("bn1_mean", 4), ("bn1_var", 4), ("bn2_mean", 5), ("bn2_var", 5))}
        p = {k: ad.constant(v) for k, v in nparams.items()}
        if substitute_name is not None:
            p[substitute_name] = node
        inp = node if substitute_name is None else ad.constant(nx)
        out = M.backbone_forward(ncfg, p, inp, training=True, buffers=bufs)
        return ad.sum_(ad.mul(out, ad.constant(rw)))

    nerrs = [_check(lambda v: norm_run(None, v), nx)]
    for name in ("conv1_w", "bn1_gamma", "bn2_beta"):
        nerrs.append(_check(lambda v, n=name: norm_run(n, v), nparams[name]))
    yield "backbone_batchnorm", max(nerrs)


def _loss_checks(rng: Rng):
    n, k = 5, 4
    labels = np.asarray(rng.integers(0, k, size=n))
    logits = _rand(rng, n, k)
    # probabilities perturbed off the simplex stay within cb_loss's row-sum
    # tolerance at h=1e-5, and the unconstrained gradient -1/P_y is exact
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    yield "cb_loss", _check(lambda x: L.cb_loss(x, labels), p)
    yield "cb_loss_logits", _check(lambda x: L.cb_loss_logits(x, labels), logits)
    yield "cb_loss_softmax_chain", _check(lambda x: L.cb_loss(ad.softmax(x), labels), logits)

    pair_labels = np.asarray([0, 0, 1, 1, 2, 2])
    v = _rand(rng, 6, 5) + 1.5
    yield "sb_loss", _check(
        lambda x: L.sb_loss(ad.l2_normalize(x), pair_labels, tau=0.2), v)
    yield "sb_loss_literal", _check(
        lambda x: L.sb_loss(ad.l2_normalize(x), pair_labels, tau=0.2, literal_eq8=True), v)


_GROUPS = (_elementwise_checks, _shape_checks, _reduction_checks, _linalg_checks,
           _conv_checks, _composite_checks, _mospool_checks, _model_checks, _loss_checks)


def run_gradcheck(seed: int = 0, repeats: int = 3, threshold: float = THRESHOLD):
    """Run every registered check ``repeats`` times with derived seeds."""
    worst: dict[str, float] = {}
    for r in range(repeats):
        rng = Rng(seed).derive(f"gradcheck{r}")
        for group in _GROUPS:
            for name, err in group(rng):
                worst[name] = max(worst.get(name, 0.0), float(err))
    return [GradcheckResult(name=k, max_error=v, passed=v < threshold)
            for k, v in worst.items()]
