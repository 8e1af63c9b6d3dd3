"""Dense discrete operators of the transformed transmission system.

The weakly singular operators are discretised by rotating every outer grid
node to the north pole, integrating with the ``alpha``-weighted product rule
on an inner grid of order ``n'`` and projecting back onto the vector
harmonics of degree ``<= n``. For one outer colatitude ring ``tau`` and all
azimuths ``rho`` at once the pipeline is

* ``E``: azimuthal sums over ``rho'`` of the weighted kernel blocks (FFT);
* ``D``: colatitude sums over ``tau'`` against the vector-harmonic profiles;
* ``C``: the rotation sums with ``F_{tau l jt j} e^{i (j - jt) phi_rho}``;
* ``B``: the azimuthal back-transform over ``rho`` (FFT);

and the final colatitude projection accumulates the ring into the matrix.

Matrices act on VshCoeffVector layouts ``[kind 1, kind 2]``; rows are test
functions and columns trial functions.
"""

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import sphere_basis as sb
from .geometry import piola_push_frame
from .kernels import c_factors, contract_tensors, m_factors

__all__ = [
    "DielectricConfig",
    "BlockOperator",
    "OperatorAssembler",
    "FarFieldOperator",
    "default_inner_order",
    "assemble_M",
    "assemble_Cdiff",
    "assemble_operators",
    "assemble_KDM",
    "assemble_KIM",
    "assemble_farfield",
    "bilinear_gram",
    "rotation_matrix",
    "transpose_relation",
    "transpose_relation_residual",
    "project_incident_traces",
    "save_matrix",
    "load_matrix",
]


@dataclass(frozen=True)
class DielectricConfig:
    """Material constants of the exterior (``e``) and interior (``i``) media."""

    kappa_e: float
    kappa_i: float
    mu_e: float = 1.0
    mu_i: float = 1.0

    def __post_init__(self):
        for name in ("kappa_e", "kappa_i", "mu_e", "mu_i"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be a positive real number")
            object.__setattr__(self, name, v)

    @property
    def rho_m(self):
        return self.mu_e * self.kappa_i ** 2 / (self.mu_i * self.kappa_e ** 2)

    @property
    def rho_j(self):
        return self.mu_i / self.mu_e

    @property
    def zero_contrast(self):
        return self.kappa_i == self.kappa_e and self.mu_i == self.mu_e

    def to_dict(self):
        return {"kappa_e": self.kappa_e, "kappa_i": self.kappa_i,
                "mu_e": self.mu_e, "mu_i": self.mu_i}


@dataclass(frozen=True, eq=False)
class BlockOperator:
    """A 2x2 block operator over the two vector-harmonic kinds.

    ``matrix`` has side ``2 N`` with ``N = (n+1)^2 - 1``; ``block(a, b)``
    returns the ``N x N`` block for test kind ``a`` and trial kind ``b``.
    """

    matrix: np.ndarray = field(repr=False)
    n: int
    n_inner: int
    label: str = ""
    kappas: tuple = ()

    def __post_init__(self):
        N = sb.n_vector(self.n)
        if self.matrix.shape != (2 * N, 2 * N):
            raise ValueError("matrix does not match the degree")
        self.matrix.flags.writeable = False

    @property
    def side(self):
        return self.matrix.shape[0]

    def block(self, a, b):
        N = self.side // 2
        return self.matrix[(a - 1) * N:a * N, (b - 1) * N:b * N]

    def __matmul__(self, other):
        return self.matrix @ other


def default_inner_order(n):
    """Inner order ``n' = 2n + 1``, raised to ``n + 4`` for very small ``n``."""
    return max(2 * n + 1, n + 4)


def _check_orders(n, n_inner):
    if n < 1:
        raise ValueError("n must be at least 1")
    if n_inner - n <= 3:
        raise ValueError("inner order must satisfy n' - n > 3")
    if (n_inner - 1) / n <= 1:
        raise ValueError("inner order must satisfy n' = a n + 1 with a > 1")


def _vsh_profiles(n, theta):
    """Colatitude profiles of ``Y1``, ``Y2`` without the ``e^{ij phi}`` factor.

    Returns an array ``[tau, beta, kind, l-1, j+n]`` where ``beta`` selects the
    ``e_theta`` or ``e_phi`` component.
    """
    P, dP, Ps = sb.legendre_tables(n, theta)
    J = 2 * n + 1
    lv, jv = sb.degree_arrays(n, vector=True)
    mv = np.abs(jv)
    c = sb._sign_j(jv) / np.sqrt(lv * (lv + 1.0))
    at = np.zeros((theta.size, n, J), dtype=complex)
    ap = np.zeros_like(at)
    at[:, lv - 1, jv + n] = (c[:, None] * dP[lv, mv]).T
    ap[:, lv - 1, jv + n] = (c[:, None] * 1j * np.sign(jv)[:, None] * Ps[lv, mv]).T
    A = np.empty((theta.size, 2, 2, n, J), dtype=complex)
    A[:, 0, 0], A[:, 1, 0] = at, ap
    A[:, 0, 1], A[:, 1, 1] = ap, -at
    return A


def _compact_index(n):
    lv, jv = sb.degree_arrays(n, vector=True)
    return (lv - 1) * (2 * n + 1) + jv + n


class OperatorAssembler:
    """Shared grids, tables and ring pipeline for one surface and degree.

    Parameters
    ----------
    param : Surface
        Parametrisation ``q`` of the boundary.
    n : int
        Degree of the trial and test spaces.
    n_inner : int, optional
        Order ``n'`` of the inner rule, see :func:`default_inner_order`.
    threads : int, optional
        Number of worker threads over outer rings.
    """

    def __init__(self, param, n, n_inner=None, threads=1, grid=None,
                 grid_inner=None, rot_table=None):
        n = int(n)
        n_inner = default_inner_order(n) if n_inner is None else int(n_inner)
        _check_orders(n, n_inner)
        self.param = param
        self.n = n
        self.n_inner = n_inner
        self.threads = max(1, int(threads))
        self.grid = sb.build_gauss_grid(n) if grid is None else grid
        self.grid_inner = sb.build_gauss_grid(n_inner) if grid_inner is None else grid_inner
        if self.grid.n != n or self.grid_inner.n != n_inner:
            raise ValueError("grid orders do not match n and n'")
        self.rot = sb.build_rotation_table(n, self.grid) if rot_table is None else rot_table
        if self.rot.n != n:
            raise ValueError("rotation table degree does not match n")
        gi = self.grid_inner
        alpha = sb.single_layer_alpha(gi)
        chord = 2.0 * np.sin(gi.theta_nodes / 2.0)
        self._alpha_chord = alpha * chord
        self._wq = gi.mu_weight * gi.nu_weights
        J = 2 * n + 1
        Ain = _vsh_profiles(n, gi.theta_nodes)
        # (jt, tau' beta, kind l)
        self._Ain = np.ascontiguousarray(
            Ain.transpose(4, 0, 1, 2, 3).reshape(J, gi.theta_nodes.size * 2, 2 * n))
        Aout = _vsh_profiles(n, self.grid.theta_nodes)
        w = self.grid.mu_weight * self.grid.nu_weights
        # conj test profiles times weights, [tau, alpha, kind, l', j'+n]
        self._Aout = np.conj(Aout) * w[:, None, None, None, None]
        self.frame = param.grid_frame(self.grid)
        self._m = np.arange(-n, n + 1)
        q = self.frame.q
        self._diam = max(1.0, float(np.max(np.linalg.norm(q, axis=-1))))

    # -- kernel blocks on one ring ------------------------------------------
    def _ring_geometry(self, tau):
        g, gi = self.grid, self.grid_inner
        xs = g.points[tau]
        Ts = np.stack([sb.rotation_to_north(x) for x in xs])
        y = np.einsum("tsk,pkl->ptsl", gi.points, Ts)
        wt = np.einsum("tsk,pkl->ptsl", gi.e_theta, Ts)
        wp = np.einsum("tsk,pkl->ptsl", gi.e_phi, Ts)
        q, (vt, vp) = self.param.evaluate(y, wt, wp)
        d = self.frame.q[tau][:, None, None, :] - q
        r = np.linalg.norm(d, axis=-1)
        if np.min(r) < 1e-12 * self._diam:
            raise ValueError("coincident points in the rotated inner grid")
        t1x = self.frame.t1[tau][:, None, None, :]
        t2x = self.frame.t2[tau][:, None, None, :]
        V, V1, V2 = contract_tensors(t1x, t2x, d, [vt, vp])
        aR = self._alpha_chord[None, :, None] / r
        return r, aR, V, V1, V2

    def _ring_kernels(self, tau, specs):
        r, aR, V, V1, V2 = self._ring_geometry(tau)
        e = (Ellipsis, None, None)
        out = []
        for spec in specs:
            if spec[0] == "M":
                f1, f2 = m_factors(spec[1], r)
                K = (aR * f1 + 1j * f2)[e] * V
            else:
                ae = c_factors(spec[1], r)
                ai = c_factors(spec[2], r)
                a1, b1, a2, b2 = (x - y for x, y in zip(ae, ai))
                K = (aR * a1 + 1j * a2)[e] * V1 + (aR * b1 + 1j * b2)[e] * V2
            K *= self._wq[None, :, None, None, None]
            out.append(K)
        return out

    # -- pipeline -----------------------------------------------------------
    def _ring_contribution(self, tau, K):
        n = self.n
        J = 2 * n + 1
        P, Tp, Sp = K.shape[:3]
        m = self._m
        # E: sum_rho' K e^{i jt phi_rho'}
        Kh = np.fft.ifft(K, axis=2)[:, :, m % Sp] * Sp
        # D: colatitude sums against inner profiles
        Kr = Kh.transpose(2, 0, 3, 1, 4).reshape(J, P * 2, Tp * 2)
        G = np.matmul(Kr, self._Ain).reshape(J, P, 2, 2, n)
        # C: rotation sums
        phi = self.grid.phi_nodes
        G = G * np.exp(-1j * np.outer(m, phi))[:, :, None, None, None]
        Gl = G.transpose(4, 1, 2, 3, 0).reshape(n, P * 4, J)
        C = np.matmul(Gl, self.rot.F[tau, 1:]).reshape(n, P, 2, 2, J)
        C *= np.exp(1j * np.outer(phi, m))[None, :, None, None, :]
        # B: sum_rho C e^{-i j' phi_rho}
        B = np.fft.fft(C, axis=1)[:, m % P]
        # final colatitude projection (weights folded into _Aout)
        return np.einsum("xaiJ,LJxbj->aiJbLj", self._Aout[tau], B, optimize=True)

    def assemble(self, specs):
        """Assemble the operators described by ``specs``.

        Each spec is ``("M", kappa)`` or ``("C", kappa_e, kappa_i)``; the
        result is a list of :class:`BlockOperator` in the same order.
        """
        specs = [tuple(s) for s in specs]
        for s in specs:
            if s[0] not in ("M", "C") or len(s) != (2 if s[0] == "M" else 3):
                raise ValueError(f"invalid operator spec {s!r}")
        n = self.n
        J = 2 * n + 1
        acc = [np.zeros((2, n, J, 2, n, J), dtype=complex) for _ in specs]

        def work(tau):
            return [self._ring_contribution(tau, K) for K in self._ring_kernels(tau, specs)]

        taus = range(self.grid.theta_nodes.size)
        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as ex:
                parts = ex.map(work, taus)
                for contrib in parts:
                    for a, c in zip(acc, contrib):
                        a += c
        else:
            for tau in taus:
                for a, c in zip(acc, work(tau)):
                    a += c
        idx = _compact_index(n)
        N = idx.size
        label = getattr(self.param, "label", type(self.param).__name__)
        ops = []
        for s, a in zip(specs, acc):
            flat = a.reshape(2, n * J, 2, n * J)[:, idx][:, :, :, idx]
            ops.append(BlockOperator(np.ascontiguousarray(flat.reshape(2 * N, 2 * N)),
                                     n, self.n_inner, label, tuple(float(k) for k in s[1:])))
        return ops


def _assembler(param, n, n_inner, grid, grid_inner, rot_table, threads=1):
    return OperatorAssembler(param, n, n_inner, threads, grid, grid_inner, rot_table)


def assemble_M(param, kappa, n, n_inner=None, grid=None, grid_inner=None,
               rot_table=None, threads=1):
    """Discrete transformed double-layer operator ``M_kappa``."""
    asm = _assembler(param, n, n_inner, grid, grid_inner, rot_table, threads)
    return asm.assemble([("M", float(kappa))])[0]


def assemble_Cdiff(param, kappa_e, kappa_i, n, n_inner=None, grid=None,
                   grid_inner=None, rot_table=None, threads=1):
    """Discrete ``kappa_e C_{kappa_e} - kappa_i C_{kappa_i}``."""
    asm = _assembler(param, n, n_inner, grid, grid_inner, rot_table, threads)
    return asm.assemble([("C", float(kappa_e), float(kappa_i))])[0]


def assemble_operators(param, config, n, n_inner=None, threads=1):
    """``(M_e, M_i, Cdiff)`` for ``config`` in a single pass over the rings."""
    asm = OperatorAssembler(param, n, n_inner, threads)
    return tuple(asm.assemble([("M", config.kappa_e), ("M", config.kappa_i),
                               ("C", config.kappa_e, config.kappa_i)]))


def _system_blocks(config, M_e, M_i, Cdiff):
    if not (M_e.n == M_i.n == Cdiff.n):
        raise ValueError("operator blocks have different degrees")
    Me, Mi, Cd = M_e.matrix, M_i.matrix, Cdiff.matrix
    I = np.eye(Me.shape[0])
    c1, c2 = 1.0 + config.rho_m, 1.0 + config.rho_j
    return I, c1, c2, Me - config.rho_m * Mi, Me - config.rho_j * Mi, Cd


def assemble_KDM(config, M_e, M_i, Cdiff):
    """System matrix of the direct method acting on ``(u1; u2)``."""
    I, c1, c2, A, D, Cd = _system_blocks(config, M_e, M_i, Cdiff)
    mu = config.mu_e
    return np.block([[c1 * I + A, mu / config.kappa_e ** 2 * Cd],
                     [Cd / mu, c2 * I + D]])


def assemble_KIM(config, M_e, M_i, Cdiff):
    """System matrix of the indirect method acting on ``(m; j)``."""
    I, c1, c2, A, D, Cd = _system_blocks(config, M_e, M_i, Cdiff)
    mu = config.mu_e
    return np.block([[c1 * I - A, -Cd / mu],
                     [-mu / config.kappa_e ** 2 * Cd, c2 * I - D]])


# ---------------------------------------------------------------------------
# transpose relation


def bilinear_gram(n):
    """Gram matrix ``S`` of the bilinear pairing on one VshCoeffVector.

    ``int Y^{(a)}_{l,j} . Y^{(b)}_{l',j'} = delta_ab delta_ll' (-1)^j
    delta_{j',-j}``, so ``S`` is a signed permutation with ``S^2 = I``.
    """
    lv, jv = sb.degree_arrays(n, vector=True)
    N = lv.size
    partner = lv * lv + lv - jv - 1
    sign = np.where(jv % 2 == 0, 1.0, -1.0)
    S = np.zeros((2 * N, 2 * N))
    for k in range(2):
        S[k * N + np.arange(N), k * N + partner] = sign
    return S


def rotation_matrix(n):
    """Coefficient matrix of ``Y1 -> Y2``, ``Y2 -> -Y1`` on one VshCoeffVector."""
    N = sb.n_vector(n)
    R = np.zeros((2 * N, 2 * N))
    R[N + np.arange(N), np.arange(N)] = 1.0
    R[np.arange(N), N + np.arange(N)] = -1.0
    return R


def transpose_relation(KDM, n):
    """``-S (R + R) K_DM (R + R) S``, the predicted transpose of ``K_IM``.

    The bilinear pairing of two densities is ``u^T S v`` in coefficients, so
    the operator identity ``K_IM^T = -(R + R) K_DM (R + R)`` reads as above at
    matrix level.
    """
    S = bilinear_gram(n)
    R = rotation_matrix(n)
    Z = np.zeros_like(R)
    RR = np.block([[R, Z], [Z, R]])
    SS = np.block([[S, Z], [Z, S]])
    return -SS @ RR @ KDM @ RR @ SS


def transpose_relation_residual(KDM, KIM, n):
    """Relative Frobenius residual of the transpose relation."""
    pred = transpose_relation(KDM, n)
    return float(np.linalg.norm(KIM.T - pred) / np.linalg.norm(KIM))


# ---------------------------------------------------------------------------
# far field


@dataclass(frozen=True, eq=False)
class FarFieldOperator:
    """Discrete far-field operator ``G`` at a set of observation directions.

    ``Fj`` and ``Fm`` have shape ``(n_dirs, 3, 2N)`` and map the Piola
    transformed densities ``j`` and ``m`` to ambient far-field vectors.
    ``far_grid`` is the far-sphere Gauss grid when the directions are its
    nodes (flattened in grid order) and ``None`` otherwise.
    """

    Fj: np.ndarray = field(repr=False)
    Fm: np.ndarray = field(repr=False)
    xhat: np.ndarray = field(repr=False)
    far_grid: object = field(default=None, repr=False)
    n: int = 0

    def apply(self, j, m):
        """Far-field samples ``(n_nodes, 3)`` of the densities ``(j, m)``."""
        return self.Fj @ np.asarray(j) + self.Fm @ np.asarray(m)

    def apply_direct(self, u):
        """Far field of a direct-method solution ``(u1; u2) = (j; m)``."""
        N2 = self.Fj.shape[-1]
        return self.apply(u[:N2], u[N2:])

    def apply_indirect(self, density):
        """Far field of an indirect-method density ordered ``(m; j)``."""
        N2 = self.Fj.shape[-1]
        return self.apply(density[N2:], density[:N2])

    def matrix(self, ordering="direct"):
        """Stacked matrix of shape ``(3 n_nodes, 4N)``."""
        A = self.Fj.reshape(-1, self.Fj.shape[-1])
        B = self.Fm.reshape(-1, self.Fm.shape[-1])
        return np.hstack([A, B] if ordering == "direct" else [B, A])


def _basis_frame_values(grid, n):
    """Frame components of every ``Y^{(b)}_{l,j}`` at the grid nodes.

    Returns ``(ut, up)`` of shape ``grid.shape + (2N,)``.
    """
    A = _vsh_profiles(n, grid.theta_nodes)  # [tau, beta, kind, l-1, j+n]
    lv, jv = sb.degree_arrays(n, vector=True)
    prof = A[:, :, :, lv - 1, jv + n]  # [tau, beta, kind, N]
    e = np.exp(1j * np.outer(grid.phi_nodes, jv))  # [rho, N]
    vals = prof[:, None] * e[None, :, None, None, :]  # [tau, rho, beta, kind, N]
    shape = grid.shape + (2 * lv.size,)
    ut = vals[:, :, 0].reshape(shape)
    up = vals[:, :, 1].reshape(shape)
    return ut, up


def assemble_farfield(param, kappa_e, n, n_far=25, mu_e=1.0, grid=None,
                      directions=None):
    """Far-field matrices for densities of degree ``n``.

    The observation directions are the nodes of the far-sphere Gauss grid of
    order ``n_far`` unless explicit unit ``directions`` ``(k, 3)`` are given.
    """
    grid = sb.build_gauss_grid(n) if grid is None else grid
    if directions is None:
        if n_far < 1:
            raise ValueError("n_far must be at least 1")
        far = sb.build_gauss_grid(n_far)
        xh = far.points.reshape(-1, 3)
    else:
        far = None
        xh = np.atleast_2d(np.asarray(directions, dtype=float))
        if xh.shape[-1] != 3 or not np.allclose(np.linalg.norm(xh, axis=-1), 1.0):
            raise ValueError("directions must be unit vectors")
    fr = param.grid_frame(grid)
    ut, up = _basis_frame_values(grid, n)
    w = grid.weights
    # J * density for every basis function: (nodes, 2N, 3)
    vec = (ut[..., None] * fr.t1[:, :, None, :] + up[..., None] * fr.t2[:, :, None, :])
    vec = (vec * w[:, :, None, None]).reshape(-1, ut.shape[-1], 3)
    E = np.exp(-1j * kappa_e * xh @ fr.q.reshape(-1, 3).T)
    I = np.einsum("fg,gkc->fkc", E, vec, optimize=True)  # (nf, 2N, 3)
    xb = xh[:, None, :]
    Fj = 1j * kappa_e / (4 * np.pi) * np.cross(xb, I)
    Fm = mu_e / (4 * np.pi) * (I - np.sum(xb * I, -1)[..., None] * xb)
    Fj = np.ascontiguousarray(Fj.transpose(0, 2, 1))
    Fm = np.ascontiguousarray(Fm.transpose(0, 2, 1))
    Fj.flags.writeable = False
    Fm.flags.writeable = False
    return FarFieldOperator(Fj, Fm, xh, far, n)


# ---------------------------------------------------------------------------
# right-hand sides


def project_incident_traces(param, sampler, n, mu_e=1.0, grid=None):
    """Coefficients of the Piola transformed traces ``(n x E, n x curl E / mu_e)``.

    Parameters
    ----------
    param : Surface
    sampler : callable
        ``sampler(points) -> (E, curl_E)`` for ambient points ``(..., 3)``.
    n : int
    mu_e : float

    Returns
    -------
    ndarray of length ``4 N``: the two traces stacked as VshCoeffVectors.
    """
    grid = sb.build_gauss_grid(n) if grid is None else grid
    fr = param.grid_frame(grid)
    E, curlE = sampler(fr.q)
    out = []
    for field_ in (np.cross(fr.normal, E), np.cross(fr.normal, curlE) / mu_e):
        ut, up = piola_push_frame(fr, field_)
        out.append(sb._get_transform(grid, n).analyze_frame(ut, up))
    return np.concatenate(out)


# ---------------------------------------------------------------------------
# binary dump

_MAGIC = b"SDMAT001"


def save_matrix(path, matrix, n, kappas=()):
    """Write a square complex matrix with a small header.

    Layout: magic, ``side`` and ``n`` as int64, the number of wavenumbers and
    their values as float64, then the entries row-major as complex128.
    """
    matrix = np.asarray(matrix, dtype=np.complex128)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError("matrix must be square")
    kappas = [float(k) for k in kappas]
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qqq", matrix.shape[0], int(n), len(kappas)))
        fh.write(struct.pack(f"<{len(kappas)}d", *kappas))
        fh.write(np.ascontiguousarray(matrix).astype("<c16").tobytes())


def load_matrix(path):
    """Read a file written by :func:`save_matrix`; returns ``(matrix, n, kappas)``."""
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError("not a matrix dump")
        side, n, nk = struct.unpack("<qqq", fh.read(24))
        kappas = struct.unpack(f"<{nk}d", fh.read(8 * nk))
        data = np.frombuffer(fh.read(), dtype="<c16")
    if data.size != side * side:
        raise ValueError("truncated matrix dump")
    return data.reshape(side, side).astype(np.complex128), int(n), tuple(kappas)
