"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba implementations are used when numba imports cleanly, unless the
``RHUCRL_DISABLE_NUMBA`` environment variable is set to a non-empty value
other than ``"0"``.  Both paths are always importable under explicit names
(``*_numpy`` / ``*_numba``) so they can be compared in tests and benchmarks.
"""

import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_flag = os.environ.get("RHUCRL_DISABLE_NUMBA", "")
USE_NUMBA = numba is not None and _flag in ("", "0")
BACKEND = "numba" if USE_NUMBA else "numpy"


def _njit(f):
    if numba is None:
        return f
    return numba.njit(cache=True)(f)


# ---------------------------------------------------------------------------
# squared-exponential cross kernel
# ---------------------------------------------------------------------------


def se_kernel_numpy(X, Z, inv_lengthscales, signal_variance):
    """k(x, z) = sv * exp(-0.5 * ||(x - z) / l||^2) for all rows of X and Z."""
    Xs = X * inv_lengthscales
    Zs = Z * inv_lengthscales
    diff = Xs[:, None, :] - Zs[None, :, :]
    return signal_variance * np.exp(-0.5 * np.einsum("ijk,ijk->ij", diff, diff))


@_njit
def se_kernel_numba(X, Z, inv_lengthscales, signal_variance):
    n, d = X.shape
    m = Z.shape[0]
    out = np.empty((n, m))
    Xs = X * inv_lengthscales
    Zs = Z * inv_lengthscales
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                t = Xs[i, k] - Zs[j, k]
                acc += t * t
            out[i, j] = signal_variance * math.exp(-0.5 * acc)
    return out


# ---------------------------------------------------------------------------
# policy heads: y = center + half_width * tanh(W @ phi)
# ---------------------------------------------------------------------------


def tanh_head_numpy(W, Phi, center, half_width):
    """Batched saturating linear head.

    W has shape (N, out, f), Phi (N, f); returns (N, out).
    """
    return center + half_width * np.tanh(np.einsum("nof,nf->no", W, Phi))


@_njit
def tanh_head_numba(W, Phi, center, half_width):
    n, o, f = W.shape
    out = np.empty((n, o))
    for i in range(n):
        for a in range(o):
            acc = 0.0
            for k in range(f):
                acc += W[i, a, k] * Phi[i, k]
            out[i, a] = center[a] + half_width[a] * math.tanh(acc)
    return out


def quadratic_features_numpy(X):
    """[x, x_i * x_j for i <= j, 1] for each row of X."""
    n, d = X.shape
    iu, ju = np.triu_indices(d)
    return np.hstack([X, X[:, iu] * X[:, ju], np.ones((n, 1))])


@_njit
def quadratic_features_numba(X):
    n, d = X.shape
    nq = d * (d + 1) // 2
    out = np.empty((n, d + nq + 1))
    for i in range(n):
        for a in range(d):
            out[i, a] = X[i, a]
        c = d
        for a in range(d):
            for b in range(a, d):
                out[i, c] = X[i, a] * X[i, b]
                c += 1
        out[i, c] = 1.0
    return out


# ---------------------------------------------------------------------------
# pendulum semi-implicit Euler
# ---------------------------------------------------------------------------


def pendulum_step_numpy(theta, omega, torque, grav_accel, inv_inertia, dt):
    """One semi-implicit Euler step; theta = 0 is upright, returns unwrapped theta."""
    acc = grav_accel * np.sin(theta) + torque * inv_inertia
    omega_next = omega + dt * acc
    return theta + dt * omega_next, omega_next


@_njit
def pendulum_step_numba(theta, omega, torque, grav_accel, inv_inertia, dt):
    n = theta.shape[0]
    th = np.empty(n)
    om = np.empty(n)
    for i in range(n):
        acc = grav_accel[i] * math.sin(theta[i]) + torque[i] * inv_inertia[i]
        om[i] = omega[i] + dt * acc
        th[i] = theta[i] + dt * om[i]
    return th, om


if USE_NUMBA:
    se_kernel = se_kernel_numba
    tanh_head = tanh_head_numba
    quadratic_features = quadratic_features_numba
    pendulum_step = pendulum_step_numba
else:
    se_kernel = se_kernel_numpy
    tanh_head = tanh_head_numpy
    quadratic_features = quadratic_features_numpy
    pendulum_step = pendulum_step_numpy


def wrap_angle(x):
    """Map angles to (-pi, pi]."""
    y = np.mod(x + np.pi, 2.0 * np.pi) - np.pi
    return np.where(y == -np.pi, np.pi, y)
