"""The gradient gate itself, plus a mutation check that the harness catches
a corrupted backward rule."""

import numpy as np

from mostats import autodiff as ad
from mostats import gradcheck


class TestRegistry:
    def test_fresh_build_passes(self):
        results = gradcheck.run_gradcheck(seed=0, repeats=1)
        failed = [r.name for r in results if not r.passed]
        assert not failed, failed

    def test_report_lists_per_op_errors(self):
        results = gradcheck.run_gradcheck(seed=1, repeats=1)
        names = {r.name for r in results}
        for expected in ("matmul_2d", "conv2d", "maxpool2", "pool_order1", "pool_order2",
                         "pool_order3", "cb_loss", "sb_loss", "head_forward",
                         "projector_forward", "backbone_forward"):
            assert expected in names
        assert all(isinstance(r.max_error, float) for r in results)


class TestMutationSanity:
    def test_corrupted_backward_rule_fails(self, monkeypatch):
        true_relu = ad.relu

        def corrupted_relu(a):
            out = true_relu(a)

            def wrong_back(g):
                ad._accumulate(a, 2.0 * g * (a.value > 0))  # doubled gradient

            return ad.Node(out.value.copy(), (a,), wrong_back, requires_grad=a.requires_grad)

        monkeypatch.setattr(ad, "relu", corrupted_relu)
        results = {r.name: r for r in gradcheck.run_gradcheck(seed=2, repeats=1)}
        assert not results["relu"].passed
        assert results["relu"].max_error > 1e-2

    def test_corrupted_matmul_fails(self, monkeypatch):
        true_matmul = ad.matmul

        def corrupted_matmul(a, b):
            out = true_matmul(a, b)
            if not out.parents:
                return out

            def wrong_back(g):
                av = a.value if isinstance(a, ad.Node) else np.asarray(a)
                bv = b.value if isinstance(b, ad.Node) else np.asarray(b)
                if isinstance(a, ad.Node) and av.ndim == 2 and bv.ndim == 2:
                    ad._accumulate(a, g @ bv.T * 0.5)
                    ad._accumulate(b, av.T @ g)

            return ad.Node(out.value.copy(), out.parents, wrong_back,
                           requires_grad=out.requires_grad)

        monkeypatch.setattr(ad, "matmul", corrupted_matmul)
        results = {r.name: r for r in gradcheck.run_gradcheck(seed=3, repeats=1)}
        assert not results["matmul_2d"].passed
