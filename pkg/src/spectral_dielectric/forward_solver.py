"""Incident fields, direct and indirect solves, far fields and convergence runs.

The direct (Mueller) system is solved for the total exterior traces
``u = (n x E, n x curl E / mu_e)`` with right-hand side ``2 u_inc`` and the
far field is ``G u``. The indirect system is solved for layer densities
``(m, j)`` with jump data ``(g, f)``; its far field is ``G(j, m)``.

An interior point source is not an entire field, so the direct system does
not model it. Its scattering problem is posed through jump data instead:
the exterior field equals ``-E_inc`` and the interior field vanishes, which
is reproduced by the indirect system with ``f = -n x E_inc`` and
``g = -n x curl E_inc / mu_e`` (see :func:`solve_point_source`).
"""

import csv
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from . import assembly as asm
from . import sphere_basis as sb

__all__ = [
    "PlaneWave",
    "PointSource",
    "HerglotzWave",
    "FarFieldSamples",
    "ForwardSystem",
    "DirectSolution",
    "IndirectSolution",
    "ReportRow",
    "eval_incident_traces",
    "solve_direct",
    "solve_indirect",
    "solve_point_source",
    "exact_point_source_farfield",
    "convergence_experiment",
    "write_report_csv",
    "REPORT_COLUMNS",
]


# ---------------------------------------------------------------------------
# incident fields


def _unit(v, name):
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector")
    nrm = np.linalg.norm(v)
    if not abs(nrm - 1.0) <= 1e-12:
        raise ValueError(f"{name} must be a unit vector")
    return v


@dataclass(frozen=True, eq=False)
class PlaneWave:
    """``E(x) = p exp(i kappa_e x . d)`` with ``d . p = 0``."""

    d: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        d, p = _unit(self.d, "d"), _unit(self.p, "p")
        if abs(d @ p) > 1e-14:
            raise ValueError("plane wave needs d . p = 0")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "p", p)

    def fields(self, x, config):
        k = config.kappa_e
        e = np.exp(1j * k * (np.asarray(x) @ self.d))[..., None]
        return self.p * e, 1j * k * np.cross(self.d, self.p) * e


@dataclass(frozen=True, eq=False)
class PointSource:
    """``E(x) = grad Phi(kappa_e, x - s) x p`` for a source ``s`` inside."""

    s: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        if s.shape != (3,):
            raise ValueError("s must be a 3-vector")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "p", _unit(self.p, "p"))

    def fields(self, x, config):
        k = config.kappa_e
        d = np.asarray(x) - self.s
        r = np.linalg.norm(d, axis=-1)[..., None]
        dh = d / r
        phi = np.exp(1j * k * r) / (4 * np.pi * r)
        d1 = phi * (1j * k - 1.0 / r)                  # Phi'(r)
        d2 = phi * ((1j * k - 1.0 / r) ** 2 + 1.0 / r ** 2)  # Phi''(r)
        E = np.cross(d1 * dh, self.p)
        dp = np.sum(dh * self.p, -1)[..., None]
        hess_p = d2 * dh * dp + d1 / r * (self.p - dh * dp)
        # curl(grad Phi x p) = kappa^2 Phi p + Hess(Phi) p
        return E, k * k * phi * self.p + hess_p


@dataclass(frozen=True, eq=False)
class HerglotzWave:
    """Vector Herglotz field with tangential kernel ``h`` on a far grid.

    ``E(y) = (mu_e / 4 pi) sum_w w(x) exp(-i kappa_e x . y) h(x)``, the far
    grid quadrature of the corresponding integral over the unit sphere.
    """

    far_grid: sb.QuadratureGrid
    kernel: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.kernel, dtype=complex)
        if h.shape != self.far_grid.shape + (3,):
            raise ValueError("kernel must have shape far_grid.shape + (3,)")
        object.__setattr__(self, "kernel", h)

    def fields(self, y, config):
        k = config.kappa_e
        g = self.far_grid
        xh = g.points.reshape(-1, 3)
        wh = (g.weights[..., None] * self.kernel).reshape(-1, 3)
        y = np.asarray(y)
        ph = np.exp(-1j * k * (y.reshape(-1, 3) @ xh.T))
        c = config.mu_e / (4 * np.pi)
        E = c * ph @ wh
        curlE = c * ph @ (-1j * k * np.cross(xh, wh))
        return E.reshape(y.shape), curlE.reshape(y.shape)


def eval_incident_traces(inc, config):
    """Sampler ``points -> (E, curl E)`` for use with the trace projection."""
    return lambda x: inc.fields(x, config)


# ---------------------------------------------------------------------------
# far fields


@dataclass(frozen=True, eq=False)
class FarFieldSamples:
    """Far-field vectors ``values[k]`` at unit directions ``xhat[k]``."""

    xhat: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    n_far: int = 0

    def tangential_defect(self):
        return float(np.max(np.abs(np.sum(self.xhat * self.values, -1)), initial=0.0))

    @property
    def tangential(self):
        return self.tangential_defect() <= 1e-12

    def max_error(self, other):
        """``max_k |values_k - other_k|`` (Euclidean norm per direction)."""
        o = other.values if isinstance(other, FarFieldSamples) else np.asarray(other)
        return float(np.max(np.linalg.norm(self.values - o, axis=-1)))


def exact_point_source_farfield(kappa_e, s, p, xhat):
    """``-(i kappa_e / 4 pi) exp(-i kappa_e xhat . s) (xhat x p)``."""
    xhat = np.atleast_2d(np.asarray(xhat, dtype=float))
    s = np.asarray(s, dtype=float)
    ph = np.exp(-1j * kappa_e * (xhat @ s))[:, None]
    vals = -(1j * kappa_e / (4 * np.pi)) * ph * np.cross(xhat, p)
    return FarFieldSamples(xhat, vals)


# ---------------------------------------------------------------------------
# systems


def _factor(K):
    with warnings.catch_warnings():
        # singularity is reported below as an error
        warnings.simplefilter("ignore", LinAlgWarning)
        lu = lu_factor(K, check_finite=True)
    diag = np.abs(np.diag(lu[0]))
    if np.min(diag) <= 1e-14 * max(1.0, np.max(diag)):
        raise np.linalg.LinAlgError("system matrix is numerically singular")
    return lu


@dataclass(eq=False)
class DirectSolution:
    u: np.ndarray
    farfield: FarFieldSamples
    lu: tuple = field(repr=False)


@dataclass(eq=False)
class IndirectSolution:
    density: np.ndarray
    farfield: FarFieldSamples


class ForwardSystem:
    """Assembled operators, factorizations and far-field matrices.

    Everything is built lazily and reused for any number of incident fields.

    Parameters
    ----------
    param : Surface
    config : DielectricConfig
    n : int
    n_inner : int, optional
    n_far : int
        Order of the far-field Gauss grid.
    threads : int
    """

    def __init__(self, param, config, n, n_inner=None, n_far=25, threads=1):
        self.param = param
        self.config = config
        self.n = int(n)
        self.n_inner = asm.default_inner_order(self.n) if n_inner is None else int(n_inner)
        self.n_far = int(n_far)
        self.threads = threads
        t = time.perf_counter()
        self.M_e, self.M_i, self.Cdiff = asm.assemble_operators(
            param, config, self.n, self.n_inner, threads)
        self.assembly_seconds = time.perf_counter() - t
        self.far = asm.assemble_farfield(param, config.kappa_e, self.n, self.n_far,
                                         config.mu_e)
        self._KDM = self._KIM = None
        self._lu_dm = self._lu_im = None
        self._relation = None

    @property
    def N2(self):
        return 2 * sb.n_vector(self.n)

    @property
    def KDM(self):
        if self._KDM is None:
            self._KDM = asm.assemble_KDM(self.config, self.M_e, self.M_i, self.Cdiff)
        return self._KDM

    @property
    def KIM(self):
        if self._KIM is None:
            self._KIM = asm.assemble_KIM(self.config, self.M_e, self.M_i, self.Cdiff)
        return self._KIM

    @property
    def lu_dm(self):
        if self._lu_dm is None:
            self._lu_dm = _factor(self.KDM)
        return self._lu_dm

    @property
    def lu_im(self):
        if self._lu_im is None:
            self._lu_im = _factor(self.KIM)
        return self._lu_im

    def _signed_maps(self):
        if self._relation is None:
            S = asm.bilinear_gram(self.n)
            R = asm.rotation_matrix(self.n)
            Z = np.zeros_like(R)
            SS = np.block([[S, Z], [Z, S]])
            RR = np.block([[R, Z], [Z, R]])
            self._relation = SS @ RR, RR @ SS
        return self._relation

    def incident_traces(self, inc):
        return asm.project_incident_traces(self.param, eval_incident_traces(inc, self.config),
                                           self.n, self.config.mu_e)

    def farfield_direct(self, u):
        return FarFieldSamples(self.far.xhat, self.far.apply_direct(u), self.n_far)

    def farfield_indirect(self, density):
        return FarFieldSamples(self.far.xhat, self.far.apply_indirect(density), self.n_far)

    # -- solves -------------------------------------------------------------
    def solve_direct(self, inc=None, u_inc=None):
        """Solve ``K_DM u = 2 u_inc`` for an incident field or given traces."""
        if u_inc is None:
            u_inc = self.incident_traces(inc)
        u = lu_solve(self.lu_dm, 2.0 * np.asarray(u_inc, dtype=complex))
        return DirectSolution(u, self.farfield_direct(u), self.lu_dm)

    def solve_indirect(self, g, f, reuse=False):
        """Solve ``K_IM (m; j) = 2 (g; f)``.

        With ``reuse=True`` the factorization of ``K_DM`` is used through the
        transpose relation instead of factorizing ``K_IM``.
        """
        b = 2.0 * np.concatenate([np.asarray(g, dtype=complex), np.asarray(f, dtype=complex)])
        if reuse:
            x = self.solve_relation(b)
        else:
            x = lu_solve(self.lu_im, b)
        return IndirectSolution(x, self.farfield_indirect(x))

    def relation_matrix(self):
        """The ``K_IM`` predicted by the transpose relation from ``K_DM``."""
        A, B = self._signed_maps()
        return -(A @ self.KDM @ B).T

    def solve_relation(self, b):
        """Solve with :meth:`relation_matrix` using the ``K_DM`` factorization.

        ``(-(A K B)^T)^{-1} = -A^{-T} K^{-T} B^{-T}`` with ``A = S(R+R)``,
        ``B = (R+R)S``; both are signed permutations, so ``A^{-T} = A`` and
        ``B^{-T} = B``.
        """
        A, B = self._signed_maps()
        return -A @ lu_solve(self.lu_dm, B @ b, trans=1)

    def solve_point_source(self, ps):
        """Indirect solve with jump data of an interior point source."""
        u = self.incident_traces(ps)
        N2 = self.N2
        return self.solve_indirect(-u[N2:], -u[:N2])


def solve_direct(param, config, inc, n, n_inner=None, n_far=25, system=None):
    """Direct method for one incident field; see :class:`ForwardSystem`."""
    system = ForwardSystem(param, config, n, n_inner, n_far) if system is None else system
    return system.solve_direct(inc)


def solve_indirect(param, config, rhs, n, n_inner=None, n_far=25, reuse=False, system=None):
    """Indirect method for jump data ``rhs = (g, f)``."""
    system = ForwardSystem(param, config, n, n_inner, n_far) if system is None else system
    g, f = rhs
    return system.solve_indirect(g, f, reuse=reuse)


def solve_point_source(param, config, ps, n, n_inner=None, n_far=25, system=None):
    """Far field scattered by the obstacle for an interior point source."""
    system = ForwardSystem(param, config, n, n_inner, n_far) if system is None else system
    return system.solve_point_source(ps)


# ---------------------------------------------------------------------------
# convergence experiment

REPORT_COLUMNS = ("shape", "n", "err_ps", "re_pw", "im_pw", "assembly_seconds",
                  "solve_seconds")

DEFAULT_SOURCE = np.array([0.0, 0.1 / np.sqrt(2.0), -0.1 / np.sqrt(2.0)])


@dataclass(frozen=True)
class ReportRow:
    shape: str
    n: int
    err_ps: float
    re_pw: float
    im_pw: float
    assembly_seconds: float
    solve_seconds: float

    def as_dict(self):
        return {c: getattr(self, c) for c in REPORT_COLUMNS}


def convergence_experiment(param, config, n_list, n_far=25, n_inner=None,
                           source=None, polarization=(1.0, 0.0, 0.0),
                           direction=(0.0, 0.0, 1.0), label=None, threads=1,
                           callback=None):
    """Point-source error and plane-wave point values for each ``n``.

    For every degree the point-source error is the maximum over the far grid
    of ``|E_inf - E_exact|``, and the plane-wave value is
    ``E_inf(d) . p`` for the plane wave with direction ``d`` and
    polarization ``p``. At zero contrast the error column holds instead the
    maximum of the plane-wave far field, which should vanish.
    """
    s = DEFAULT_SOURCE if source is None else np.asarray(source, dtype=float)
    p = np.asarray(polarization, dtype=float)
    d = np.asarray(direction, dtype=float)
    if hasattr(param, "contains") and not param.contains(s):
        raise ValueError("point source must lie inside the obstacle")
    label = label or getattr(param, "label", "surface")
    ps, pw = PointSource(s, p), PlaneWave(d, p)
    rows = []
    for n in n_list:
        system = ForwardSystem(param, config, n, n_inner, n_far, threads)
        t = time.perf_counter()
        sol_pw = system.solve_direct(pw)
        if config.zero_contrast:
            # nothing scatters: report the size of the plane-wave far field
            err = float(np.max(np.linalg.norm(sol_pw.farfield.values, axis=-1)))
        else:
            sol_ps = system.solve_point_source(ps)
            exact = exact_point_source_farfield(config.kappa_e, s, p, system.far.xhat)
            err = sol_ps.farfield.max_error(exact)
        Fd = asm.assemble_farfield(param, config.kappa_e, system.n, mu_e=config.mu_e,
                                   directions=d[None, :])
        val = Fd.apply_direct(sol_pw.u)[0] @ p
        row = ReportRow(label, int(n), float(err), float(val.real), float(val.imag),
                        system.assembly_seconds, time.perf_counter() - t)
        rows.append(row)
        if callback is not None:
            callback(row)
    return rows


def write_report_csv(rows, path):
    """Write report rows with the columns of :data:`REPORT_COLUMNS`."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow(r.as_dict())
