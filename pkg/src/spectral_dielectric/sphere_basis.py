"""Spherical harmonics, product Gauss rules and rotation tables on the unit sphere.

Conventions
-----------
Scalar harmonics are

    Y_{l,j}(theta, phi) = (-1)^{(|j|+j)/2} N_{l|j|} P_l^{|j|}(cos theta) e^{i j phi},

where ``P_l^m`` carries the Condon-Shortley phase. Numerically we work with the
orthonormalised functions ``Pbar_l^m`` *without* that phase, so that
``Y_{l,j} = s_j Pbar_l^{|j|}(cos theta) e^{i j phi}`` with ``s_j = 1`` for
``j >= 0`` and ``s_j = (-1)^j`` for ``j < 0``. With this choice
``conj(Y_{l,j}) = (-1)^j Y_{l,-j}``.

Tangential vector harmonics are

    Y1_{l,j} = grad Y_{l,j} / sqrt(l(l+1)),   Y2_{l,j} = curl Y_{l,j} / sqrt(l(l+1)),

with ``curl u = grad u x xhat``, so that ``Y2 = Y1 x xhat``.

Coefficient layouts
-------------------
* scalar: index ``l*l + l + j`` for ``0 <= l <= n`` (length ``(n+1)**2``);
* tangential: ``[kind 1 block, kind 2 block]``, each block indexed by
  ``l*l + l + j - 1`` for ``1 <= l <= n`` (total length ``2((n+1)**2 - 1)``).
"""

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import comb, factorial

import numpy as np

__all__ = [
    "QuadratureGrid",
    "build_gauss_grid",
    "gauss_legendre",
    "scalar_index",
    "vector_index",
    "n_scalar",
    "n_vector",
    "degree_arrays",
    "legendre_tables",
    "eval_scalar_harmonic",
    "eval_vector_harmonic",
    "SphericalTransform",
    "project_scalar",
    "project_tangential",
    "synthesize_scalar",
    "synthesize_tangential",
    "surface_grad",
    "surface_curl",
    "surface_div",
    "rotate_n_cross",
    "spherical_frame",
    "cartesian_to_spherical",
    "rotation_to_north",
    "wigner_d_half_pi",
    "RotationTable",
    "build_rotation_table",
    "sobolev_norm",
    "sobolev_weights",
    "real_projection",
    "is_real_coefficients",
    "eval_scalar_expansion",
    "single_layer_alpha",
]


# ---------------------------------------------------------------------------
# index helpers


def scalar_index(l, j):
    """Position of ``(l, j)`` in a scalar coefficient vector."""
    return l * l + l + j


def vector_index(l, j, kind=1, n=None):
    """Position of ``(kind, l, j)`` in a tangential coefficient vector.

    If ``n`` is omitted the index inside a single kind block is returned.
    """
    base = l * l + l + j - 1
    if n is None:
        return base
    if kind not in (1, 2):
        raise ValueError("kind must be 1 or 2")
    return base + (kind - 1) * n_vector(n)


def n_scalar(n):
    return (n + 1) ** 2


def n_vector(n):
    """Number of tangential coefficients of one kind up to degree ``n``."""
    return (n + 1) ** 2 - 1


@lru_cache(maxsize=None)
def _degree_arrays(n, start):
    ls, js = [], []
    for l in range(start, n + 1):
        for j in range(-l, l + 1):
            ls.append(l)
            js.append(j)
    ls = np.array(ls, dtype=int)
    js = np.array(js, dtype=int)
    ls.flags.writeable = False
    js.flags.writeable = False
    return ls, js


def degree_arrays(n, vector=False):
    """Arrays ``(l, j)`` enumerating a scalar (or per-kind vector) layout."""
    return _degree_arrays(n, 1 if vector else 0)


def _sign_j(j):
    j = np.asarray(j)
    return np.where((j < 0) & (j % 2 == 1), -1.0, 1.0)


# ---------------------------------------------------------------------------
# quadrature


def gauss_legendre(m, tol=1e-15, maxiter=100):
    """Gauss-Legendre nodes (ascending) and weights with ``m`` points.

    Newton iteration on the three-term recurrence, started from the
    Tricomi approximation of the zeros.
    """
    if m < 1:
        raise ValueError("need at least one node")
    k = np.arange(1, m + 1)
    x = np.cos(np.pi * (k - 0.25) / (m + 0.5))
    for _ in range(maxiter):
        p0 = np.ones_like(x)
        p1 = x.copy()
        for ll in range(2, m + 1):
            p0, p1 = p1, ((2 * ll - 1) * x * p1 - (ll - 1) * p0) / ll
        if m == 1:
            p0, p1 = np.ones_like(x), x
        dp = m * (x * p1 - p0) / (x * x - 1.0)
        dx = p1 / dp
        x = x - dx
        if np.max(np.abs(dx)) < tol:
            break
    # one more evaluation for weights at the converged nodes
    p0 = np.ones_like(x)
    p1 = x.copy()
    for ll in range(2, m + 1):
        p0, p1 = p1, ((2 * ll - 1) * x * p1 - (ll - 1) * p0) / ll
    if m == 1:
        p0 = np.ones_like(x)
    dp = m * (x * p1 - p0) / (x * x - 1.0)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    order = np.argsort(x)
    return x[order], w[order]


def spherical_frame(theta, phi):
    """Return ``(xhat, e_theta, e_phi)`` as arrays of shape ``(..., 3)``."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    xhat = np.stack([st * cp, st * sp, ct * np.ones_like(cp)], axis=-1)
    e_t = np.stack([ct * cp, ct * sp, -st * np.ones_like(cp)], axis=-1)
    e_p = np.stack([-sp, cp, np.zeros_like(sp * st)], axis=-1)
    return xhat, e_t, e_p


def cartesian_to_spherical(x):
    """Polar angles ``(theta, phi)`` of (not necessarily unit) vectors."""
    x = np.asarray(x, dtype=float)
    rho = np.hypot(x[..., 0], x[..., 1])
    theta = np.arctan2(rho, x[..., 2])
    phi = np.mod(np.arctan2(x[..., 1], x[..., 0]), 2 * np.pi)
    return theta, phi


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Product Gauss rule of order ``n`` on the unit sphere.

    Nodes are ``(theta_tau, phi_rho)`` with ``tau`` indexing the first axis
    of every nodal array and ``rho`` the second.
    """

    n: int
    zeta: np.ndarray
    theta_nodes: np.ndarray
    nu_weights: np.ndarray
    phi_nodes: np.ndarray
    mu_weight: float
    points: np.ndarray = field(repr=False)
    e_theta: np.ndarray = field(repr=False)
    e_phi: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def shape(self):
        return (self.n + 1, 2 * self.n + 2)

    @property
    def size(self):
        return (self.n + 1) * (2 * self.n + 2)

    def integrate(self, values):
        """Apply the rule to nodal values (leading axes ``(tau, rho)``)."""
        values = np.asarray(values)
        w = self.weights.reshape(self.shape + (1,) * (values.ndim - 2))
        return np.sum(values * w, axis=(0, 1))


@lru_cache(maxsize=32)
def build_gauss_grid(n):
    """Gauss-Legendre times trapezoidal rule, exact up to degree ``2n+1``."""
    n = int(n)
    if n < 1:
        raise ValueError("grid order must be at least 1")
    # nodes ordered by increasing theta, i.e. decreasing zeta
    z, w = gauss_legendre(n + 1)
    z, w = z[::-1].copy(), w[::-1].copy()
    theta = np.arccos(z)
    phi = np.arange(2 * n + 2) * np.pi / (n + 1)
    mu = np.pi / (n + 1)
    T, P = np.meshgrid(theta, phi, indexing="ij")
    xhat, e_t, e_p = spherical_frame(T, P)
    weights = np.outer(w, np.full(2 * n + 2, mu))
    arrays = [z, theta, w, phi, xhat, e_t, e_p, weights]
    for a in arrays:
        a.flags.writeable = False
    return QuadratureGrid(n, z, theta, w, phi, mu, xhat, e_t, e_p, weights)


# ---------------------------------------------------------------------------
# associated Legendre functions


def legendre_tables(lmax, theta):
    """Orthonormalised associated Legendre data at colatitudes ``theta``.

    Returns ``(P, dP, Ps)``, each of shape ``(lmax+1, lmax+1) + theta.shape``
    indexed ``[l, m]`` with ``m >= 0``:

    * ``P[l, m]  = Pbar_l^m(cos theta)`` (no Condon-Shortley phase),
    * ``dP[l, m] = d/dtheta Pbar_l^m(cos theta)``,
    * ``Ps[l, m] = m Pbar_l^m(cos theta) / sin theta`` with the limits at the
      poles filled in.

    Entries with ``m > l`` are zero.
    """
    theta = np.asarray(theta, dtype=float)
    x = np.cos(theta)
    s = np.sin(theta)
    shape = (lmax + 1, lmax + 1) + theta.shape
    P = np.zeros(shape)
    # sectoral seeds and upward recurrence in l at fixed m
    pmm = np.full(theta.shape, 1.0 / np.sqrt(4 * np.pi))
    for m in range(lmax + 1):
        if m > 0:
            pmm = np.sqrt((2 * m + 1) / (2.0 * m)) * s * pmm
        P[m, m] = pmm
        if m + 1 <= lmax:
            P[m + 1, m] = np.sqrt(2 * m + 3.0) * x * pmm
        for l in range(m + 2, lmax + 1):
            a = np.sqrt((4.0 * l * l - 1) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1) ** 2 - 1))
            P[l, m] = a * (x * P[l - 1, m] - b * P[l - 2, m])
    # theta derivative through the ladder relation (no division by sin)
    dP = np.zeros(shape)
    for l in range(1, lmax + 1):
        dP[l, 0] = -np.sqrt(l * (l + 1.0)) * P[l, 1]
        for m in range(1, l + 1):
            up = np.sqrt((l - m) * (l + m + 1.0)) * P[l, m + 1] if m < l else 0.0
            dP[l, m] = 0.5 * (np.sqrt((l + m) * (l - m + 1.0)) * P[l, m - 1] - up)
    # m P / sin(theta); exact division away from the poles
    Ps = np.zeros(shape)
    pole = s == 0.0
    safe = np.where(pole, 1.0, s)
    for m in range(1, lmax + 1):
        Ps[:, m] = m * P[:, m] / safe
    if np.any(pole):
        # only m = 1 survives: Pbar_l^1/sin -> sqrt((2l+1)/4pi) sqrt(l(l+1))/2
        # at theta = 0 and (-1)^(l+1) times that at theta = pi.
        Ps[:, :, pole] = 0.0
        sgn = np.sign(x[pole])
        for l in range(1, lmax + 1):
            c = np.sqrt((2 * l + 1) / (4 * np.pi)) * np.sqrt(l * (l + 1.0)) / 2
            Ps[l, 1, pole] = c * sgn ** (l + 1)
    return P, dP, Ps


def eval_scalar_harmonic(l, j, theta, phi):
    """Evaluate ``Y_{l,j}`` at arbitrary angles."""
    if l < 0 or abs(j) > l:
        raise ValueError("need |j| <= l")
    theta = np.asarray(theta, dtype=float)
    P, _, _ = legendre_tables(l, theta)
    return _sign_j(j) * P[l, abs(j)] * np.exp(1j * j * np.asarray(phi))


def eval_vector_harmonic(l, j, kind, theta, phi):
    """Evaluate ``Y^{(kind)}_{l,j}`` as ambient complex 3-vectors.

    At the poles the azimuth ``phi`` labels the limiting direction of approach,
    so that the value is the continuous extension along that meridian.
    """
    if l < 1 or abs(j) > l:
        raise ValueError("need l >= 1 and |j| <= l")
    if kind not in (1, 2):
        raise ValueError("kind must be 1 or 2")
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    at, ap = _vsh_frame_components(l, j, theta, phi)
    if kind == 2:
        at, ap = ap, -at
    _, e_t, e_p = spherical_frame(theta, phi)
    return at[..., None] * e_t + ap[..., None] * e_p


def _vsh_frame_components(l, j, theta, phi):
    P, dP, Ps = legendre_tables(l, theta)
    m = abs(j)
    c = _sign_j(j) * np.exp(1j * j * phi) / np.sqrt(l * (l + 1.0))
    at = c * dP[l, m]
    # (i j / sin) Pbar = i sign(j) * (|j| Pbar / sin)
    ap = c * 1j * np.sign(j) * Ps[l, m]
    return at, ap


def eval_scalar_expansion(coeffs, n, points, gradient=False):
    """Evaluate a scalar expansion (and optionally its surface gradient).

    Parameters
    ----------
    coeffs : complex array of length ``(n+1)**2``
    points : array ``(..., 3)`` of unit vectors
    gradient : bool
        If true also return the tangential gradient as ambient vectors.

    Notes
    -----
    The recurrence is run on the fly, so memory stays proportional to the
    number of points rather than to ``n**2`` times that.
    """
    points = np.asarray(points, dtype=float)
    theta, phi = cartesian_to_spherical(points)
    x = np.cos(theta)
    s = np.sin(theta)
    pole = s == 0.0
    safe = np.where(pole, 1.0, s)
    c = np.asarray(coeffs)
    val = np.zeros(theta.shape, dtype=complex)
    if gradient:
        g_t = np.zeros(theta.shape, dtype=complex)
        g_p = np.zeros(theta.shape, dtype=complex)
    pmm = np.full(theta.shape, 1.0 / np.sqrt(4 * np.pi))
    pole_sign = np.sign(x)
    for m in range(n + 1):
        if m > 0:
            pmm = np.sqrt((2 * m + 1) / (2.0 * m)) * s * pmm
        # P_l^{m-1}, P_l^m and P_l^{m+1} are needed for the derivative; we run
        # three recurrences side by side for the derivative case.
        cols = [m] if not gradient else [m - 1, m, m + 1]
        # coefficient combination for +-m
        e_pos = np.exp(1j * m * phi)
        accum_v = np.zeros(theta.shape, dtype=complex)
        accum_d = np.zeros(theta.shape, dtype=complex)
        accum_s = np.zeros(theta.shape, dtype=complex)
        for l, Pl in _legendre_column_iter(n, m, x, pmm, s, cols):
            cp = c[scalar_index(l, m)]
            if m > 0:
                cm = c[scalar_index(l, -m)] * (-1.0) ** m
                cm = cm * np.exp(-2j * m * phi)
            else:
                cm = 0.0
            comb_ = cp + cm  # times e^{i m phi} gives both +-m terms
            accum_v += comb_ * Pl[1 if gradient else 0]
            if gradient:
                if m == 0:
                    d = -np.sqrt(l * (l + 1.0)) * Pl[2]
                else:
                    up = np.sqrt((l - m) * (l + m + 1.0)) * Pl[2]
                    d = 0.5 * (np.sqrt((l + m) * (l - m + 1.0)) * Pl[0] - up)
                accum_d += comb_ * d
                if m > 0:
                    ps = m * Pl[1] / safe
                    if np.any(pole):
                        lim = (np.sqrt((2 * l + 1) / (4 * np.pi))
                               * np.sqrt(l * (l + 1.0)) / 2 * pole_sign ** (l + 1))
                        ps = np.where(pole, lim if m == 1 else 0.0, ps)
                    diffc = cp - cm
                    accum_s += 1j * diffc * ps
        val += accum_v * e_pos
        if gradient:
            g_t += accum_d * e_pos
            g_p += accum_s * e_pos
    if not gradient:
        return val
    _, e_t, e_p = spherical_frame(theta, phi)
    grad = g_t[..., None] * e_t + g_p[..., None] * e_p
    return val, grad


def _legendre_column_iter(n, m, x, pmm, s, cols):
    """Yield ``(l, [Pbar_l^k for k in cols])`` for ``l = m..n``.

    Each column ``k`` is generated by its own upward recurrence seeded at the
    sectoral value; columns with ``k < 0`` are mirrored from ``k = 1`` (only
    needed for ``m = 0`` where the ladder formula does not use them) and
    entries with ``k > l`` are zero.
    """
    seeds = {}
    for k in cols:
        if k < 0:
            continue
        if k == m:
            seeds[k] = pmm
        elif k == m - 1:
            # Pbar_{m-1}^{m-1} = pmm / (sqrt((2m+1)/(2m)) s)
            # recompute from scratch to avoid dividing by s
            p = np.full(x.shape, 1.0 / np.sqrt(4 * np.pi))
            for mm in range(1, k + 1):
                p = np.sqrt((2 * mm + 1) / (2.0 * mm)) * s * p
            seeds[k] = p
        else:  # k == m + 1
            seeds[k] = np.sqrt((2 * k + 1) / (2.0 * k)) * s * pmm
    # (P_{l-2}, P_{l-1}); the m-1 column starts one degree below l = m
    state = {k: [None, seeds[k] if k < m else None] for k in seeds}
    for l in range(m, n + 1):
        out = []
        for k in cols:
            if k < 0 or k > l:
                out.append(0.0)
                continue
            st = state[k]
            if l == k:
                cur = seeds[k]
            elif l == k + 1:
                cur = np.sqrt(2 * k + 3.0) * x * seeds[k]
            else:
                a = np.sqrt((4.0 * l * l - 1) / (l * l - k * k))
                b = np.sqrt(((l - 1.0) ** 2 - k * k) / (4.0 * (l - 1) ** 2 - 1))
                cur = a * (x * st[1] - b * st[0])
            st[0], st[1] = st[1], cur
            out.append(cur)
        yield l, out


# ---------------------------------------------------------------------------
# transforms on a quadrature grid


class SphericalTransform:
    """Separable synthesis and discrete projection on a product grid.

    Parameters
    ----------
    grid : QuadratureGrid
    n : int, optional
        Truncation degree of the expansions, defaults to ``grid.n``.
    """

    def __init__(self, grid, n=None):
        self.grid = grid
        self.n = grid.n if n is None else int(n)
        if 2 * self.n + 1 > 2 * grid.n + 1 + 2 * grid.n + 1:
            raise ValueError("expansion degree too large for grid")
        n = self.n
        P, dP, Ps = legendre_tables(n, grid.theta_nodes)
        self.nphi = 2 * grid.n + 2
        if n >= grid.n + 1:
            raise ValueError("azimuthal aliasing: need n <= grid.n")
        ls, js = degree_arrays(n)
        m = np.abs(js)
        sj = _sign_j(js)
        # [tau, coeff] tables
        self._S = (sj[:, None] * P[ls, m]).T.copy()
        lv, jv = degree_arrays(n, vector=True)
        mv = np.abs(jv)
        sv = (_sign_j(jv) / np.sqrt(lv * (lv + 1.0)))[:, None]
        self._At = (sv * dP[lv, mv]).T.copy()
        self._Ap = (sv * 1j * np.sign(jv)[:, None] * Ps[lv, mv]).T.copy()
        self._js = js
        self._jv = jv

    # -- internal Fourier helpers ------------------------------------------
    def _fourier_analysis(self, values, js):
        """``sum_rho values[tau, rho] e^{-i j phi_rho}`` for each j."""
        F = np.fft.fft(values, axis=1)
        return F[:, js % self.nphi]

    def _fourier_synthesis(self, coeff_tau, js):
        """``sum_j coeff_tau[tau, idx(j)] e^{i j phi_rho}``."""
        T = coeff_tau.shape[0]
        buf = np.zeros((T, self.nphi) + coeff_tau.shape[2:], dtype=complex)
        np.add.at(buf, (slice(None), js % self.nphi), coeff_tau)
        return np.fft.ifft(buf, axis=1) * self.nphi

    # -- scalar --------------------------------------------------------------
    def synth_scalar(self, c):
        c = np.asarray(c)
        return self._fourier_synthesis(self._S * c, self._js)

    def analyze_scalar(self, values):
        values = np.asarray(values)
        g = self.grid
        F = self._fourier_analysis(values, self._js)
        return g.mu_weight * np.einsum("t,tk,tk->k", g.nu_weights, self._S, F)

    # -- tangential, frame components -------------------------------------
    def synth_frame(self, c):
        """Return ``(u_theta, u_phi)`` nodal arrays from a VshCoeffVector."""
        c = np.asarray(c)
        N = self._At.shape[1]
        a, b = c[:N], c[N:]
        ut = self._fourier_synthesis(self._At * a + self._Ap * b, self._jv)
        up = self._fourier_synthesis(self._Ap * a - self._At * b, self._jv)
        return ut, up

    def analyze_frame(self, ut, up):
        g = self.grid
        Ft = self._fourier_analysis(np.asarray(ut), self._jv)
        Fp = self._fourier_analysis(np.asarray(up), self._jv)
        w = g.mu_weight * g.nu_weights[:, None]
        At, Ap = np.conj(self._At), np.conj(self._Ap)
        a = np.sum(w * (At * Ft + Ap * Fp), axis=0)
        b = np.sum(w * (Ap * Ft - At * Fp), axis=0)
        return np.concatenate([a, b])

    def synth_tangential(self, c):
        ut, up = self.synth_frame(c)
        g = self.grid
        return ut[..., None] * g.e_theta + up[..., None] * g.e_phi

    def analyze_tangential(self, values):
        g = self.grid
        values = np.asarray(values)
        ut = np.einsum("trk,trk->tr", values, g.e_theta)
        up = np.einsum("trk,trk->tr", values, g.e_phi)
        return self.analyze_frame(ut, up)


@lru_cache(maxsize=64)
def _transform(grid, n):
    return SphericalTransform(grid, n)


def _get_transform(grid, n):
    return _transform(grid, grid.n if n is None else int(n))


def project_scalar(grid, samples, n=None):
    """Discrete projection of nodal samples onto scalar harmonics.

    ``samples`` has shape ``grid.shape`` or ``grid.shape + (k,)``; in the
    latter case ``k`` coefficient vectors are returned as an array ``(k, N)``.
    """
    samples = np.asarray(samples)
    if samples.shape[:2] != grid.shape:
        raise ValueError("samples do not match the grid")
    tr = _get_transform(grid, n)
    if samples.ndim == 2:
        return tr.analyze_scalar(samples)
    return np.stack([tr.analyze_scalar(samples[..., k])
                     for k in range(samples.shape[-1])])


def project_tangential(grid, samples, n=None):
    """Discrete projection of ambient 3-vector samples onto ``Y1``, ``Y2``."""
    samples = np.asarray(samples)
    if samples.shape != grid.shape + (3,):
        raise ValueError("samples must have shape grid.shape + (3,)")
    return _get_transform(grid, n).analyze_tangential(samples)


def synthesize_scalar(grid, coeffs, n=None):
    return _get_transform(grid, n).synth_scalar(coeffs)


def synthesize_tangential(grid, coeffs, n=None):
    return _get_transform(grid, n).synth_tangential(coeffs)


# ---------------------------------------------------------------------------
# spectral surface operators


def _n_from_vector_len(length):
    N = length // 2
    n = int(round(np.sqrt(N + 1))) - 1
    if 2 * n_vector(n) != length:
        raise ValueError("invalid tangential coefficient length")
    return n


def _n_from_scalar_len(length):
    n = int(round(np.sqrt(length))) - 1
    if n_scalar(n) != length:
        raise ValueError("invalid scalar coefficient length")
    return n


def surface_grad(c):
    """Surface gradient of a scalar expansion as tangential coefficients."""
    c = np.asarray(c)
    n = _n_from_scalar_len(c.shape[-1])
    lv, _ = degree_arrays(n, vector=True)
    out = np.zeros(c.shape[:-1] + (2 * n_vector(n),), dtype=complex)
    out[..., : n_vector(n)] = np.sqrt(lv * (lv + 1.0)) * c[..., 1:]
    return out


def surface_curl(c):
    """Vector surface curl ``grad u x xhat`` of a scalar expansion."""
    c = np.asarray(c)
    n = _n_from_scalar_len(c.shape[-1])
    lv, _ = degree_arrays(n, vector=True)
    out = np.zeros(c.shape[:-1] + (2 * n_vector(n),), dtype=complex)
    out[..., n_vector(n):] = np.sqrt(lv * (lv + 1.0)) * c[..., 1:]
    return out


def surface_div(v):
    """Surface divergence of a tangential expansion as scalar coefficients."""
    v = np.asarray(v)
    n = _n_from_vector_len(v.shape[-1])
    lv, _ = degree_arrays(n, vector=True)
    out = np.zeros(v.shape[:-1] + (n_scalar(n),), dtype=complex)
    out[..., 1:] = -np.sqrt(lv * (lv + 1.0)) * v[..., : n_vector(n)]
    return out


def rotate_n_cross(v):
    """Coefficients of ``xhat x v``: ``Y1 -> -Y2`` and ``Y2 -> Y1``."""
    v = np.asarray(v)
    N = v.shape[-1] // 2
    return np.concatenate([v[..., N:], -v[..., :N]], axis=-1)


# ---------------------------------------------------------------------------
# rotations


def _Pz(phi):
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _Qy(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_to_north(xhat):
    """Orthogonal ``T = P(phi) Q(-theta) P(-phi)`` with ``T xhat = (0,0,1)``."""
    xhat = np.asarray(xhat, dtype=float)
    theta, phi = cartesian_to_spherical(xhat)
    return _Pz(phi) @ _Qy(-theta) @ _Pz(-phi)


def _jacobi_at_zero(n, a, b):
    """Exact value of the Jacobi polynomial ``P_n^{(a,b)}(0)``."""
    total = 0
    for t in range(n + 1):
        total += (-1) ** t * comb(n + a, n - t) * comb(n + b, t)
    return Fraction(total, 2 ** n)


def _d_canonical(l, mp, m):
    """``d^l_{mp,m}(pi/2)`` for ``mp >= |m|`` from the Jacobi closed form."""
    p0 = _jacobi_at_zero(l - mp, mp - m, mp + m)
    ratio = Fraction(factorial(l + mp) * factorial(l - mp),
                     factorial(l + m) * factorial(l - m))
    sq = ratio * p0 * p0 / Fraction(4 ** mp)
    val = np.sqrt(float(sq))
    return val if p0 >= 0 else -val


@lru_cache(maxsize=None)
def _wigner_d_half_pi(l):
    d = np.empty((2 * l + 1, 2 * l + 1))
    for a in range(-l, l + 1):
        for b in range(-l, l + 1):
            big = max(abs(a), abs(b))
            if a == big:
                v = _d_canonical(l, a, b)
            elif -a == big:
                v = (-1) ** ((a - b) % 2) * _d_canonical(l, -a, -b)
            elif b == big:
                v = (-1) ** ((a - b) % 2) * _d_canonical(l, b, a)
            else:
                v = _d_canonical(l, -b, -a)
            d[a + l, b + l] = v
    d.flags.writeable = False
    return d


def wigner_d_half_pi(l):
    """Wigner matrix ``d^l_{a,b}(pi/2)`` as an array indexed ``[a+l, b+l]``."""
    return _wigner_d_half_pi(int(l))


@dataclass(frozen=True, eq=False)
class RotationTable:
    """Colatitude-dependent rotation coefficients for a grid.

    ``F[tau, l, jt + n, j + n]`` holds

        F_{tau l jt j} = e^{i(j-jt) pi/2} sum_m d^l_{jt m}(pi/2) d^l_{j m}(pi/2) e^{i m theta_tau},

    zero-padded for ``|jt|, |j| > l``. For an outer node ``x = (theta_tau,
    phi_rho)`` and ``T = rotation_to_north(x)`` one has

        Y_{l,j}(T^{-1} z) = sum_jt F_{tau l jt j} e^{i(j-jt) phi_rho} Y_{l,jt}(z),

    and the same identity holds for ``Y1``, ``Y2`` after applying ``T^{-1}``
    to the vectors on the right.
    """

    n: int
    theta_nodes: np.ndarray
    F: np.ndarray = field(repr=False)
    dHalfPi: tuple = field(repr=False)

    def rotation_coefficients(self, tau, phi):
        """Full rotation matrices ``D[l, jt+n, j+n]`` for node ``(tau, phi)``."""
        n = self.n
        ms = np.arange(-n, n + 1)
        phase = np.exp(1j * (ms[None, :] - ms[:, None]) * phi)
        return self.F[tau] * phase


def build_rotation_table(n, grid):
    """Tabulate the rotation coefficients up to degree ``n`` on ``grid``."""
    n = int(n)
    if n < 1:
        raise ValueError("n must be at least 1")
    theta = np.asarray(grid.theta_nodes)
    T = theta.size
    F = np.zeros((T, n + 1, 2 * n + 1, 2 * n + 1), dtype=complex)
    ds = []
    for l in range(n + 1):
        d = wigner_d_half_pi(l)
        ds.append(d)
        m = np.arange(-l, l + 1)
        e = np.exp(1j * np.outer(theta, m))  # (T, 2l+1)
        block = np.einsum("am,tm,bm->tab", d, e, d)
        ph = np.exp(1j * (m[None, :] - m[:, None]) * np.pi / 2)
        F[:, l, n - l:n + l + 1, n - l:n + l + 1] = block * ph
    F.flags.writeable = False
    return RotationTable(n, theta.copy(), F, tuple(ds))


@lru_cache(maxsize=32)
def single_layer_alpha(grid):
    """Weights ``alpha_tau = sum_{l<=n} P_l(zeta_tau)`` of the product rule.

    With these, ``sum_{tau,rho} w alpha_tau f(z)`` integrates ``f(z)/|n - z|``
    exactly for spherical polynomials ``f`` of degree ``<= n``, where ``n`` is
    the grid order and ``n = (0, 0, 1)`` the north pole.
    """
    z = grid.zeta
    p0, p1 = np.ones_like(z), z.copy()
    total = p0 + p1
    for l in range(2, grid.n + 1):
        p0, p1 = p1, ((2 * l - 1) * z * p1 - (l - 1) * p0) / l
        total = total + p1
    if grid.n == 0:
        total = p0
    total.flags.writeable = False
    return total


# ---------------------------------------------------------------------------
# Sobolev norms and real subspace


def sobolev_weights(n, s):
    """Diagonal weights ``(1 + l^2)^s`` on a scalar layout of degree ``n``."""
    ls, _ = degree_arrays(n)
    return (1.0 + ls.astype(float) ** 2) ** s


def sobolev_norm(c, s):
    """``sqrt(sum (1 + l^2)^s |c_{l,j}|^2)`` for a scalar coefficient vector."""
    c = np.asarray(c)
    n = _n_from_scalar_len(c.shape[-1])
    return float(np.sqrt(np.sum(sobolev_weights(n, s) * np.abs(c) ** 2)))


def _conj_partner(n):
    ls, js = degree_arrays(n)
    idx = ls * ls + ls - js
    sign = np.where(js % 2 == 0, 1.0, -1.0)
    return idx, sign


def real_projection(c):
    """Orthogonal projection onto coefficients of real-valued functions.

    Real functions satisfy ``c_{l,-j} = (-1)^j conj(c_{l,j})`` in this basis.
    """
    c = np.asarray(c, dtype=complex)
    n = _n_from_scalar_len(c.shape[-1])
    idx, sign = _conj_partner(n)
    return 0.5 * (c + sign * np.conj(c[..., idx]))


def is_real_coefficients(c, tol=1e-12):
    c = np.asarray(c)
    scale = max(1.0, float(np.max(np.abs(c)))) if c.size else 1.0
    return bool(np.max(np.abs(real_projection(c) - c), initial=0.0) <= tol * scale)
