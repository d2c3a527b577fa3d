import numpy as np
import pytest

from srforecast import autodiff as ad


def numeric_grad(f, x, eps=1e-5):
    """Central finite differences of scalar f at array x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = f(x)
        x[i] = old - eps
        lo = f(x)
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def analytic_grad(build, x):
    p = ad.parameter(x)
    build(p).backward()
    return p.grad


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(1e-8, float(np.max(np.abs(b)))))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
