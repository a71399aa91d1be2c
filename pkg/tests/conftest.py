import numpy as np
import pytest


def fd_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = g.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        xp, xm = xf.copy(), xf.copy()
        xp[i] += h
        xm[i] -= h
        flat[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2 * h)
    return g


def fd_jac(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector function of a vector."""
    x = np.asarray(x, dtype=np.float64)
    y0 = np.asarray(f(x))
    jac = np.zeros(y0.shape + (x.size,))
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        jac[..., i] = (np.asarray(f(xp)) - np.asarray(f(xm))) / (2 * h)
    return jac


def rel_err(got: np.ndarray, want: np.ndarray, floor: float = 1e-9) -> float:
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    scale = max(floor, float(np.max(np.abs(want))))
    return float(np.max(np.abs(got - want))) / scale


def smoothed(values, window: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.size < window:
        return v.copy()
    kernel = np.ones(window) / window
    return np.convolve(v, kernel, mode="valid")


def assert_smoothed_decreasing(values, window: int, rise_tol: float = 0.05):
    """Moving average may wiggle by rise_tol but must never climb above its
    running minimum by more, and must end at or below its start."""
    ma = smoothed(values, window)
    running_min = np.minimum.accumulate(ma)
    assert np.all(ma <= running_min * (1 + rise_tol) + 1e-12), (
        "smoothed curve rose more than tolerance above its running minimum"
    )
    assert ma[-1] <= ma[0] * (1 + 1e-9), "smoothed curve did not decrease overall"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
