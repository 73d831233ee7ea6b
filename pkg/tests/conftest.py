import numpy as np
import pytest


def central_difference(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function f over every entry of x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


def relative_errors(analytic: np.ndarray, numeric: np.ndarray, threshold: float = 1e-6):
    """Relative error on coordinates whose gradient magnitude exceeds threshold."""
    a = np.asarray(analytic).reshape(-1)
    n = np.asarray(numeric).reshape(-1)
    mask = np.maximum(np.abs(a), np.abs(n)) > threshold
    if not mask.any():
        return np.zeros(0)
    denom = np.maximum(np.abs(a[mask]), np.abs(n[mask]))
    return np.abs(a[mask] - n[mask]) / denom


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
