"""The validation-suite runner must pass on a fresh build, stay inside its
runtime budget, and actually catch a broken gradient."""

import time

import numpy as np

import mgrl.gradcheck as gradcheck


def test_all_suites_pass_within_budget():
    t0 = time.perf_counter()
    results = gradcheck.run_all(log_results=False)
    elapsed = time.perf_counter() - t0
    names = [r.name for r in results]
    assert names == [
        "primitives", "policy_network", "twin_critic", "objective_weights",
        "objective_policy_path", "reinforce_surrogate", "scalar_second_order",
        "meta_gradient_n1", "meta_gradient_n2",
    ]
    for r in results:
        assert r.passed, f"{r.name}: {r.max_rel_err} > {r.tolerance}"
    assert elapsed < 120.0


def test_first_order_suites_are_strict():
    results = {r.name: r for r in gradcheck.run_all(log_results=False)}
    for name in ("primitives", "policy_network", "twin_critic",
                 "objective_weights", "objective_policy_path", "reinforce_surrogate"):
        assert results[name].tolerance == 1e-6
    assert results["scalar_second_order"].tolerance == 1e-10
    assert results["meta_gradient_n1"].tolerance == 1e-3


def test_a_sabotaged_gradient_fails(monkeypatch):
    # confidence the harness is live: corrupt one gradient map entry and the
    # corresponding suite must go red
    import mgrl.autodiff as ad

    real = ad.grad_values

    def corrupted(nodes):
        out = real(nodes)
        return {k: v + 1e-3 for k, v in out.items()}

    monkeypatch.setattr(gradcheck, "grad_values", corrupted)
    assert gradcheck.check_policy_network() > 1e-6
