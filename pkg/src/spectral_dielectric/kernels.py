"""Split kernels of the transformed double-layer and single-layer operators.

For ``d = q(x) - q(y)`` and ``r = |d|`` the fundamental solution splits as
``2 Phi = S1 / r + i S2`` with

    S1 = cos(kappa r) / (2 pi),    S2 = sin(kappa r) / (2 pi r).

The transformed double-layer operator has kernel
``(R / |x - y|) M1 + i M2`` and the single-layer difference
``kappa_e C_{kappa_e} - kappa_i C_{kappa_i}`` has kernel
``(R / |x - y|) (C1(kappa_e) - C1(kappa_i)) + i (C2(kappa_e) - C2(kappa_i))``.

All tensors are returned as 2x2 blocks: rows are the components along
``e_theta(x)``, ``e_phi(x)`` and columns the input directions at ``y``. The
contractions with ``t1(x)``, ``t2(x)`` implement the map
``v -> J [Dq(x)]^{-1} (v x n)``, which is what the printed tensors
``V``, ``V1`` and ``V2`` encode.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "KernelSample",
    "smooth_factors",
    "m_factors",
    "c_factors",
    "cdiff_factors",
    "contract_tensors",
    "eval_smooth_factors",
    "eval_M_kernels",
    "eval_Cdiff_kernels",
    "eval_kernel_sample",
]

_TWO_PI = 2.0 * np.pi


def smooth_factors(kappa, r):
    """``S1`` and ``S2`` for distances ``r`` (``S2 = kappa/2pi`` at ``r = 0``)."""
    r = np.asarray(r, dtype=float)
    S1 = np.cos(kappa * r) / _TWO_PI
    x = kappa * r
    with np.errstate(invalid="ignore", divide="ignore"):
        S2 = np.where(r > 0, np.sin(x) / np.where(r > 0, r, 1.0), kappa) / _TWO_PI
    return S1, S2


def _sin_minus_xcos_over_x3(x):
    """``(sin x - x cos x) / x^3`` with a series branch near zero."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-2
    xs = np.where(small, 1.0, x)
    direct = (np.sin(xs) - xs * np.cos(xs)) / xs ** 3
    x2 = x * x
    series = 1.0 / 3.0 - x2 / 30.0 + x2 * x2 / 840.0
    return np.where(small, series, direct)


def m_factors(kappa, r):
    """Scalar factors of ``M1`` and ``M2``.

    ``f1 = S1 / r^2 + kappa S2`` and ``f2 = (S2 - kappa S1) / r^2``; the latter
    is evaluated through ``kappa^3 (sin x - x cos x) / (2 pi x^3)``, which is
    accurate for small ``x = kappa r``.
    """
    r = np.asarray(r, dtype=float)
    S1, S2 = smooth_factors(kappa, r)
    f1 = S1 / (r * r) + kappa * S2
    f2 = kappa ** 3 * _sin_minus_xcos_over_x3(kappa * r) / _TWO_PI
    return f1, f2


def c_factors(kappa, r):
    """Scalar factors ``(a1, b1, a2, b2)`` of ``C1 = a1 V1 + b1 V2`` and
    ``C2 = a2 V1 + b2 V2``."""
    r = np.asarray(r, dtype=float)
    S1, S2 = smooth_factors(kappa, r)
    r2 = r * r
    k2 = kappa * kappa
    f2 = kappa ** 3 * _sin_minus_xcos_over_x3(kappa * r) / _TWO_PI  # (S2 - k S1)/r^2
    a1 = k2 * S1 - S1 / r2 - kappa * S2
    b1 = S1 / r2 * (-k2 + 3.0 / r2) + 3.0 * kappa * S2 / r2
    a2 = k2 * S2 - f2
    b2 = -(3.0 * kappa * S1 / (r2 * r2) - S2 / r2 * (-k2 + 3.0 / r2))
    return a1, b1, a2, b2


def cdiff_factors(kappa_e, kappa_i, r):
    """Differences of :func:`c_factors` between ``kappa_e`` and ``kappa_i``."""
    fe = c_factors(kappa_e, r)
    fi = c_factors(kappa_i, r)
    return tuple(a - b for a, b in zip(fe, fi))


def contract_tensors(t1x, t2x, d, vs):
    """Contract ``V``, ``V1`` and ``V2`` with input vectors ``v = Dq(y) w``.

    Parameters
    ----------
    t1x, t2x : arrays ``(..., 3)``
        Tangents at the observation point.
    d : array ``(..., 3)``
        ``q(x) - q(y)``.
    vs : sequence of arrays ``(..., 3)``
        Pushed-forward input directions.

    Returns
    -------
    V, V1, V2 : arrays ``(..., 2, len(vs))``
    """
    t2d = np.sum(t2x * d, -1)
    t1d = np.sum(t1x * d, -1)
    V, V1, V2 = [], [], []
    for v in vs:
        c = np.cross(v, d)
        V.append(np.stack([np.sum(t2x * c, -1), -np.sum(t1x * c, -1)], -1))
        V1.append(np.stack([np.sum(t2x * v, -1), -np.sum(t1x * v, -1)], -1))
        dv = np.sum(d * v, -1)
        V2.append(np.stack([t2d * dv, -t1d * dv], -1))
    return np.stack(V, -1), np.stack(V1, -1), np.stack(V2, -1)


@dataclass(frozen=True)
class KernelSample:
    """Kernel blocks for pairs of points (see module docstring)."""

    M1: np.ndarray
    M2: np.ndarray
    C1diff: np.ndarray
    C2diff: np.ndarray
    Rratio: np.ndarray


def _pair_data(param, xhat, yhat, min_dist=1e-12):
    xhat = np.asarray(xhat, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    fx = param.frame(xhat)
    fy = param.frame(yhat)
    d = fx.q - fy.q
    r = np.linalg.norm(d, axis=-1)
    diam = max(1.0, float(np.max(np.abs(fx.q))))
    if np.any(r < min_dist * diam):
        raise ValueError("coincident or nearly coincident points")
    chord = np.linalg.norm(xhat - yhat, axis=-1)
    return fx, fy, d, r, chord


def eval_smooth_factors(param, kappa, xhat, yhat):
    """``S1``, ``S2`` and ``R = |x - y| / |q(x) - q(y)|`` for point pairs.

    Coincident points are allowed for ``S1``, ``S2``; ``R`` is then ``nan``.
    """
    xhat = np.asarray(xhat, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    d = param.position(xhat) - param.position(yhat)
    r = np.linalg.norm(d, axis=-1)
    S1, S2 = smooth_factors(kappa, r)
    chord = np.linalg.norm(xhat - yhat, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        R = np.where(r > 0, chord / np.where(r > 0, r, 1.0), np.nan)
    return {"S1": S1, "S2": S2, "R": R}


def eval_M_kernels(param, kappa, xhat, yhat):
    """``M1`` and ``M2`` blocks in the polar frames at ``xhat`` and ``yhat``."""
    fx, fy, d, r, _ = _pair_data(param, xhat, yhat)
    V, _, _ = contract_tensors(fx.t1, fx.t2, d, [fy.t1, fy.t2])
    f1, f2 = m_factors(kappa, r)
    return f1[..., None, None] * V, f2[..., None, None] * V


def eval_Cdiff_kernels(param, kappa_e, kappa_i, xhat, yhat):
    """``C1(kappa_e) - C1(kappa_i)`` and ``C2(kappa_e) - C2(kappa_i)`` blocks."""
    fx, fy, d, r, _ = _pair_data(param, xhat, yhat)
    _, V1, V2 = contract_tensors(fx.t1, fx.t2, d, [fy.t1, fy.t2])
    a1, b1, a2, b2 = cdiff_factors(kappa_e, kappa_i, r)
    C1 = a1[..., None, None] * V1 + b1[..., None, None] * V2
    C2 = a2[..., None, None] * V1 + b2[..., None, None] * V2
    return C1, C2


def eval_kernel_sample(param, kappa_e, kappa_i, xhat, yhat, kappa=None):
    """All kernel blocks at once; ``M`` blocks use ``kappa`` (default ``kappa_e``)."""
    fx, fy, d, r, chord = _pair_data(param, xhat, yhat)
    V, V1, V2 = contract_tensors(fx.t1, fx.t2, d, [fy.t1, fy.t2])
    f1, f2 = m_factors(kappa_e if kappa is None else kappa, r)
    a1, b1, a2, b2 = cdiff_factors(kappa_e, kappa_i, r)
    e = (Ellipsis, None, None)
    return KernelSample(
        M1=f1[e] * V,
        M2=f2[e] * V,
        C1diff=a1[e] * V1 + b1[e] * V2,
        C2diff=a2[e] * V1 + b2[e] * V2,
        Rratio=chord / r,
    )
