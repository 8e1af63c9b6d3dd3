"""Frechet derivative of the boundary-to-far-field map and its adjoint.

For a perturbation ``xi`` of the parametrization the derivative is the far
field of the transmission problem with jump data (contrast form)

    f' = -s (mu_e - mu_i) u2 x n - (mu_e/kappa_e^2 - mu_i/kappa_i^2) curl_G(s div_G u2),
    g' = -s (kappa_e^2/mu_e - kappa_i^2/mu_i) u1 x n - (1/mu_e - 1/mu_i) curl_G(s div_G u1),

where ``s = xi . n`` and ``(u1, u2)`` are the total exterior traces of the
forward solution. On the unit sphere the surface operators become

    (div_G v) o q = div_S2(P v) / J,        P curl_G v = curl_S2(v o q),

with ``P`` the Piola transform, and both are diagonal in the harmonic bases.
Pointwise products are formed on a product grid of order ``n_prod`` and
projected back to degree ``n``.

The adjoint with respect to ``Re <., .>`` on the far sphere and the ``H^s``
product on the parameters is the exact transpose of the discrete chain: far
field weights, ``K_IM^{-H}``, the transposed pointwise terms and finally the
inverse Sobolev weights on the real subspace.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_solve

from . import sphere_basis as sb
from .geometry import piola_pull_frame, piola_push_frame

__all__ = [
    "PerturbationField",
    "DerivativeBoundaryData",
    "LinearizedForward",
    "derivative_boundary_data",
    "apply_Fprime",
    "apply_Fprime_adjoint",
    "farfield_inner",
]


@dataclass(frozen=True, eq=False)
class PerturbationField:
    """A perturbation of the parametrization on the reference sphere.

    ``kind == "radial"``: ``xi = xi_r xhat`` with scalar coefficients
    ``coeffs`` (star shapes). ``kind == "vector"``: ``xi`` has three scalar
    coefficient vectors ``coeffs[c]`` for the Cartesian components.
    """

    coeffs: np.ndarray
    kind: str = "radial"

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if self.kind == "radial":
            if c.ndim != 1:
                raise ValueError("radial perturbation needs one coefficient vector")
        elif self.kind == "vector":
            if c.ndim != 2 or c.shape[0] != 3:
                raise ValueError("vector perturbation needs coefficients of shape (3, N)")
        else:
            raise ValueError("kind must be 'radial' or 'vector'")
        sb._n_from_scalar_len(c.shape[-1])
        object.__setattr__(self, "coeffs", c)

    @property
    def degree(self):
        return sb._n_from_scalar_len(self.coeffs.shape[-1])

    @classmethod
    def radial(cls, coeffs):
        return cls(coeffs, "radial")

    @classmethod
    def vector(cls, coeffs):
        return cls(coeffs, "vector")


@dataclass(frozen=True, eq=False)
class DerivativeBoundaryData:
    """Piola transformed jump data ``(g', f')`` as VshCoeffVectors."""

    gprime: np.ndarray
    fprime: np.ndarray

    def stacked(self):
        return np.concatenate([self.gprime, self.fprime])


def farfield_inner(a, b, weights):
    """``sum_k w_k a_k . conj(b_k)`` for far-field samples ``(..., n_dirs, 3)``."""
    return np.sum(weights[:, None] * a * np.conj(b))


class LinearizedForward:
    """Forward solutions at one parametrization and the derivative machinery.

    Parameters
    ----------
    system : ForwardSystem
        Assembled operators at the current parametrization.
    incidents : sequence of incident fields
    n_prod : int, optional
        Order of the product grid, default ``max(2n + 1, n_r)``.
    n_r : int, optional
        Degree of radial perturbations, defaults to ``n``.
    """

    def __init__(self, system, incidents, n_prod=None, n_r=None):
        self.system = system
        self.incidents = list(incidents)
        cfg = system.config
        n = system.n
        self.n = n
        self.n_r = n if n_r is None else int(n_r)
        n_prod = max(2 * n + 1, self.n_r) if n_prod is None else int(n_prod)
        if n_prod < max(n, self.n_r):
            raise ValueError("product grid order must be at least n and n_r")
        self.grid = sb.build_gauss_grid(n_prod)
        self.tr = sb.SphericalTransform(self.grid, n)
        self.tr_r = sb.SphericalTransform(self.grid, self.n_r)
        self.frame = system.param.grid_frame(self.grid)
        self.xn = np.sum(self.grid.points * self.frame.normal, -1)
        self.w = self.grid.weights
        far = system.far
        if far.far_grid is None:
            raise ValueError("the forward system needs a far-field grid")
        self.far_weights = far.far_grid.weights.reshape(-1)
        self._Find = far.matrix("indirect")
        # forward solves and fixed trace data
        self.solutions = [system.solve_direct(inc) for inc in self.incidents]
        self.farfields = np.stack([s.farfield.values for s in self.solutions])
        N2 = system.N2
        self._T = []
        self._D = []
        for sol in self.solutions:
            u1, u2 = sol.u[:N2], sol.u[N2:]
            self._T.append([self._cross_n_frame(u1), self._cross_n_frame(u2)])
            self._D.append([self._div_over_J(u1), self._div_over_J(u2)])
        ke, ki, me, mi = cfg.kappa_e, cfg.kappa_i, cfg.mu_e, cfg.mu_i
        # coefficients (a, b) with g' = a P(s u1 x n) + b curl(s div u1), same for f'
        self.coef_g = (-(ke ** 2 / me - ki ** 2 / mi), -(1.0 / me - 1.0 / mi))
        self.coef_f = (-(me - mi), -(me / ke ** 2 - mi / ki ** 2))

    @property
    def m(self):
        return len(self.incidents)

    # -- fixed trace data -------------------------------------------------
    def _cross_n_frame(self, u):
        """Frame components of ``P(u x n)`` on the product grid."""
        ut, up = self.tr.synth_frame(u)
        amb = piola_pull_frame(self.frame, ut, up)
        return np.stack(piola_push_frame(self.frame, np.cross(amb, self.frame.normal)))

    def _div_over_J(self, u):
        """Samples of ``(div_G u) o q = div_S2(P u) / J``."""
        return self.tr.synth_scalar(sb.surface_div(u)) / self.frame.J

    # -- normal component of the perturbation -----------------------------
    def normal_component(self, xi):
        """Samples of ``s = xi . n`` on the product grid."""
        if xi.kind == "radial":
            if xi.degree != self.n_r:
                raise ValueError("perturbation degree does not match n_r")
            return self.tr_r.synth_scalar(xi.coeffs) * self.xn
        n_xi = xi.degree
        if n_xi > self.grid.n:
            raise ValueError("perturbation degree exceeds the product grid")
        tr = sb._get_transform(self.grid, n_xi)
        comps = np.stack([tr.synth_scalar(c) for c in xi.coeffs], -1)
        return np.sum(comps * self.frame.normal, -1)

    def _normal_component_adjoint(self, sigma):
        """Adjoint of ``c -> s`` for radial perturbations of degree ``n_r``."""
        return self.tr_r.analyze_scalar(sigma * self.xn / self.w)

    # -- derivative data -----------------------------------------------------
    def boundary_data_from_normal(self, s, k):
        """``(g', f')`` for wave ``k`` from samples of ``s = xi . n``."""
        out = []
        for (a, b), T, D in ((self.coef_g, self._T[k][0], self._D[k][0]),
                             (self.coef_f, self._T[k][1], self._D[k][1])):
            v = a * self.tr.analyze_frame(s * T[0], s * T[1])
            v = v + b * sb.surface_curl(self.tr.analyze_scalar(s * D))
            out.append(v)
        return DerivativeBoundaryData(out[0], out[1])

    def boundary_data(self, xi, k):
        return self.boundary_data_from_normal(self.normal_component(xi), k)

    def _boundary_data_adjoint(self, yg, yf, k):
        """Adjoint of ``s -> (g', f')`` for wave ``k``; returns samples."""
        sigma = np.zeros(self.grid.shape, dtype=complex)
        n = self.n
        lv, _ = sb.degree_arrays(n, vector=True)
        root = np.sqrt(lv * (lv + 1.0))
        N = lv.size
        for y, (a, b), T, D in ((yg, self.coef_g, self._T[k][0], self._D[k][0]),
                                (yf, self.coef_f, self._T[k][1], self._D[k][1])):
            vt, vp = self.tr.synth_frame(y)
            sigma += a * self.w * (np.conj(T[0]) * vt + np.conj(T[1]) * vp)
            z = np.zeros(sb.n_scalar(n), dtype=complex)
            z[1:] = root * y[N:]
            sigma += b * self.w * np.conj(D) * self.tr.synth_scalar(z)
        return sigma

    # -- derivative and adjoint ----------------------------------------------
    def apply(self, xi):
        """``F'[q] xi`` as far-field samples of shape ``(m, n_dirs, 3)``."""
        s = self.normal_component(xi)
        sysm = self.system
        out = []
        for k in range(self.m):
            bd = self.boundary_data_from_normal(s, k)
            sol = sysm.solve_indirect(bd.gprime, bd.fprime)
            out.append(sol.farfield.values)
        return np.stack(out)

    def adjoint_l2(self, h):
        """Coefficient-space adjoint ``L^H W h`` before the Sobolev weights.

        ``h`` has shape ``(m, n_dirs, 3)``; the result is a complex scalar
        coefficient vector of degree ``n_r`` with
        ``Re sum conj(result) c = Re <F' c, h>_W`` for every ``c``.
        """
        h = np.asarray(h, dtype=complex)
        if h.shape != self.farfields.shape:
            raise ValueError("h does not match the far grid and number of waves")
        sysm = self.system
        N2 = sysm.N2
        sigma = np.zeros(self.grid.shape, dtype=complex)
        for k in range(self.m):
            wh = (self.far_weights[:, None] * h[k]).reshape(-1)
            y = lu_solve(sysm.lu_im, self._Find.conj().T @ wh, trans=2) * 2.0
            sigma += self._boundary_data_adjoint(y[:N2], y[N2:], k)
        return self._normal_component_adjoint(sigma)

    def adjoint(self, h, s):
        """``F'[q]^* h`` in ``H^s``: a real scalar coefficient vector."""
        z = sb.real_projection(self.adjoint_l2(h))
        return z / sb.sobolev_weights(self.n_r, s)

    def residual(self, data):
        """``data - F(q)`` for far-field data of shape ``(m, n_dirs, 3)``."""
        return np.asarray(data) - self.farfields

    def norm(self, h):
        """Far-field ``L^2`` norm summed over waves."""
        return float(np.sqrt(np.real(farfield_inner(h.reshape(-1, 3), h.reshape(-1, 3),
                                                    np.tile(self.far_weights, self.m)))))

    def inner(self, a, b):
        """``Re <a, b>`` summed over waves."""
        return float(np.real(farfield_inner(a.reshape(-1, 3), b.reshape(-1, 3),
                                            np.tile(self.far_weights, self.m))))


def derivative_boundary_data(state, xi, k=0):
    """Jump data ``(g', f')`` of the derivative for incident wave ``k``."""
    return state.boundary_data(xi, k)


def apply_Fprime(state, xi):
    """``F'[q] xi`` for all incident waves, shape ``(m, n_dirs, 3)``."""
    return state.apply(xi)


def apply_Fprime_adjoint(state, h, s):
    """``F'[q]^* h`` with respect to the ``H^s`` product on radial perturbations."""
    return state.adjoint(h, s)
