"""Fourier-Galerkin truncation of u_t = u_xx + lam*u*(1 - u^2) on the 2*pi circle.

A state is a real coefficient vector ``[a0, a1..aN, b1..bN]`` for

    u(x) = a0 + sum_k a_k cos(kx) + b_k sin(kx),   1 <= k <= N.

Norms are L2 norms on [0, 2*pi], evaluated through Parseval.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


def n_modes(coeffs) -> int:
    size = np.shape(coeffs)[-1]
    if size < 1 or size % 2 == 0:
        raise ValueError(f"coefficient vector must have odd length 2N+1, got {size}")
    return (size - 1) // 2


def wavenumbers(N: int) -> np.ndarray:
    """Wavenumber of each slot of the real coefficient layout."""
    k = np.arange(1, N + 1)
    return np.concatenate([[0], k, k]).astype(float)


def constant(c: float, N: int) -> np.ndarray:
    v = np.zeros(2 * N + 1)
    v[0] = c
    return v


def to_complex(coeffs) -> np.ndarray:
    """Complex coefficients for k = -N..N."""
    c = np.asarray(coeffs, dtype=float)
    N = n_modes(c)
    a, b = c[1:N + 1], c[N + 1:]
    pos = (a - 1j * b) / 2
    return np.concatenate([np.conj(pos[::-1]), [c[0]], pos])


def from_complex(z) -> np.ndarray:
    z = np.asarray(z)
    N = (z.size - 1) // 2
    pos = z[N + 1:]
    return np.concatenate([[z[N].real], 2 * pos.real, -2 * pos.imag])


def evaluate(coeffs, x) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float)
    N = n_modes(c)
    x = np.asarray(x, dtype=float)
    k = np.arange(1, N + 1)
    kx = np.multiply.outer(x, k)
    return c[0] + np.cos(kx) @ c[1:N + 1] + np.sin(kx) @ c[N + 1:]


def cubic_direct(coeffs) -> np.ndarray:
    """Coefficients of u^3 truncated to |k| <= N, by direct convolution."""
    z = to_complex(coeffs)
    N = (z.size - 1) // 2
    cube = np.convolve(np.convolve(z, z), z)  # wavenumbers -3N..3N
    return from_complex(cube[2 * N:4 * N + 1])


@lru_cache(maxsize=None)
def _collocation(N: int):
    # 4N+2 nodes resolve the degree-3N product exactly for |k| <= N (no aliasing).
    M = 4 * N + 2
    x = 2 * np.pi * np.arange(M) / M
    k = np.arange(1, N + 1)
    synth = np.vstack([np.ones((1, M)), np.cos(np.outer(k, x)), np.sin(np.outer(k, x))])
    analysis = synth.T * (2.0 / M)
    analysis[:, 0] /= 2
    return synth, analysis


def rhs(coeffs, lam: float) -> np.ndarray:
    """Time derivative of one coefficient vector (direct convolution)."""
    c = np.asarray(coeffs, dtype=float)
    N = n_modes(c)
    return -wavenumbers(N) ** 2 * c + lam * (c - cubic_direct(c))


def rhs_batch(X, lam: float, N: int) -> np.ndarray:
    """Row-wise time derivative; the cubic term is evaluated exactly on 4N+2 nodes."""
    X = np.atleast_2d(X)
    synth, analysis = _collocation(N)
    U = X @ synth
    return -wavenumbers(N) ** 2 * X + lam * ((U - U * U * U) @ analysis)


def l2_sq(coeffs) -> float:
    """||u||^2 on [0, 2*pi]."""
    c = np.asarray(coeffs, dtype=float)
    return float(2 * np.pi * c[0] ** 2 + np.pi * np.sum(c[1:] ** 2))


def derivative_norms(coeffs) -> tuple[float, float]:
    """(||u_x||, ||u_xx||) via Parseval."""
    c = np.asarray(coeffs, dtype=float)
    k = wavenumbers(n_modes(c))
    ux = np.pi * np.sum(k**2 * c**2)
    uxx = np.pi * np.sum(k**4 * c**2)
    return float(np.sqrt(ux)), float(np.sqrt(uxx))


def lyapunov_V(coeffs) -> float:
    """V(u) = 1/2 ||u_x||^2."""
    return 0.5 * derivative_norms(coeffs)[0] ** 2


def lyapunov_V_batch(X) -> np.ndarray:
    """:func:`lyapunov_V` for each row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    k = wavenumbers(n_modes(X[0]))
    return 0.5 * np.pi * (X**2 @ (k**2))


def _samples(N: int, n: int | None) -> np.ndarray:
    n = n or 64 * max(N, 1)
    return 2 * np.pi * np.arange(n) / n


def lyapunov_W1(coeffs, n_samples: int | None = None) -> float:
    """max_x u(x) over 64N equispaced samples (a lower bound on the true max)."""
    c = np.asarray(coeffs, dtype=float)
    return float(np.max(evaluate(c, _samples(n_modes(c), n_samples))))


def lyapunov_W2(coeffs, n_samples: int | None = None) -> float:
    """max_x -u(x) over 64N equispaced samples."""
    c = np.asarray(coeffs, dtype=float)
    return float(np.max(-evaluate(c, _samples(n_modes(c), n_samples))))


def sampled_max_batch(X, sign: float = 1.0, n_samples: int | None = None) -> np.ndarray:
    X = np.atleast_2d(X)
    N = n_modes(X)
    x = _samples(N, n_samples)
    k = np.arange(1, N + 1)
    synth = np.vstack([np.ones((1, x.size)), np.cos(np.outer(k, x)), np.sin(np.outer(k, x))])
    return np.max(sign * (X @ synth), axis=1)


def nonconstant_energy(coeffs) -> float:
    """||u - mean(u)||^2."""
    c = np.asarray(coeffs, dtype=float)
    return float(np.pi * np.sum(c[..., 1:] ** 2))


def poincare_inequality_check(coeffs) -> tuple[float, float]:
    """Both sides of ||u_x|| <= ||u_xx||."""
    return derivative_norms(coeffs)


def torus_poincare_norms(coeffs) -> tuple[float, float]:
    """(||v - mean v||, ||grad v||) on the n-torus [0, 2*pi]^n.

    ``coeffs`` is an n-dimensional complex array of Fourier coefficients
    a_k for k in [-K, K]^n (centre entry is the mean).
    """
    a = np.asarray(coeffs)
    n = a.ndim
    K = (a.shape[0] - 1) // 2
    ks = np.meshgrid(*[np.arange(-K, K + 1)] * n, indexing="ij")
    k2 = sum(k.astype(float) ** 2 for k in ks)
    vol = (2 * np.pi) ** n
    power = np.abs(a) ** 2
    mean_free = vol * np.sum(np.where(k2 > 0, power, 0.0))
    grad = vol * np.sum(k2 * power)
    return float(np.sqrt(mean_free)), float(np.sqrt(grad))
