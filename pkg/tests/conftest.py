import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from scvae import autodiff as ad

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def numeric_grad(f, arr, eps=1e-5):
    """Central differences of scalar f() w.r.t. every entry of arr (mutated in place)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + eps
        hi = f()
        arr[i] = old - eps
        lo = f()
        arr[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


def check_grads(build, leaves, tol=1e-4, eps=1e-5):
    """build(*leaves) -> scalar Tensor. Compares tape gradients to finite differences."""
    for t in leaves:
        t.grad = None
    with ad.Tape() as tape:
        loss = build(*leaves)
    ad.backward(loss, tape)
    worst = 0.0
    for t in leaves:
        num = numeric_grad(lambda: build(*leaves).item(), t.data, eps)
        got = np.zeros_like(num) if t.grad is None else t.grad
        worst = max(worst, rel_err(got, num))
    assert worst <= tol, f"relative gradient error {worst:.3g} > {tol}"
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    results = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for num in sorted(results):
            terminalreporter.write_line(results[num])
