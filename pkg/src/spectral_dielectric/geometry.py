"""Surface parametrisations ``q: S^2 -> Gamma`` and the Piola transform.

Every surface exposes ``evaluate(y, *ws)`` returning ``q(y)`` and the
differentials ``Dq(y) w`` for tangent vectors ``w`` at the unit vectors ``y``.
This is the only primitive the assembly needs: contracting the differential
with arbitrary tangent directions avoids any dependence on the polar frame,
which is singular at the poles.
"""

import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import sphere_basis as sb

__all__ = [
    "SurfaceFrame",
    "Surface",
    "Sphere",
    "Peanut",
    "RoundedTetrahedron",
    "StarShape",
    "StarSurface",
    "make_shape",
    "star_to_param",
    "peanut_star_approximation",
    "piola_push",
    "piola_pull",
    "piola_push_frame",
    "piola_pull_frame",
]


@dataclass(frozen=True, eq=False)
class SurfaceFrame:
    """Pointwise geometric data at parameter points ``xhat``.

    ``t1 = Dq e_theta``, ``t2 = Dq e_phi``, ``J = |t1 x t2|`` and
    ``normal = (t1 x t2) / J``.
    """

    xhat: np.ndarray
    e_theta: np.ndarray
    e_phi: np.ndarray
    q: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    normal: np.ndarray
    J: np.ndarray

    @property
    def cotangent1(self):
        """``t^1 = (t2 x n) / J``."""
        return np.cross(self.t2, self.normal) / self.J[..., None]

    @property
    def cotangent2(self):
        """``t^2 = (n x t1) / J``."""
        return np.cross(self.normal, self.t1) / self.J[..., None]

    @property
    def metric(self):
        """First fundamental form ``(g11, g12, g22)``."""
        return (np.sum(self.t1 * self.t1, -1), np.sum(self.t1 * self.t2, -1),
                np.sum(self.t2 * self.t2, -1))


class Surface:
    """Base class of closed surfaces parametrised over the unit sphere."""

    label = "surface"

    def evaluate(self, y, *ws):
        """Return ``(q(y), [Dq(y) w for w in ws])``."""
        raise NotImplementedError

    def position(self, y):
        return self.evaluate(y)[0]

    def differential(self, y, w):
        return self.evaluate(y, w)[1][0]

    def frame(self, xhat, e_theta=None, e_phi=None):
        """Geometric data at unit vectors ``xhat``.

        The polar frame is computed from ``xhat`` unless supplied (grids carry
        their own frames, which avoids ambiguities at the poles).
        """
        xhat = np.asarray(xhat, dtype=float)
        if e_theta is None or e_phi is None:
            th, ph = sb.cartesian_to_spherical(xhat)
            _, e_theta, e_phi = sb.spherical_frame(th, ph)
        q, (t1, t2) = self.evaluate(xhat, e_theta, e_phi)
        N = np.cross(t1, t2)
        J = np.linalg.norm(N, axis=-1)
        if np.any(J <= 0):
            raise ValueError("singular parametrisation (J <= 0)")
        return SurfaceFrame(xhat, e_theta, e_phi, q, t1, t2, N / J[..., None], J)

    def grid_frame(self, grid):
        """Geometric data on the nodes of a quadrature grid (cached)."""
        return _grid_frame(self, grid)

    def contains(self, point):
        """Whether ``point`` lies strictly inside; ``None`` if unknown."""
        return None

    def params(self):
        return {}

    def __repr__(self):
        return f"{type(self).__name__}({self.params()})"


@lru_cache(maxsize=16)
def _grid_frame(surface, grid):
    return surface.frame(grid.points, grid.e_theta, grid.e_phi)


class Sphere(Surface):
    """Sphere of given radius centred at the origin."""

    label = "sphere"

    def __init__(self, radius=1.0):
        if not radius > 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)

    def evaluate(self, y, *ws):
        y = np.asarray(y, dtype=float)
        return self.radius * y, [self.radius * np.asarray(w) for w in ws]

    def contains(self, point):
        return bool(np.linalg.norm(point) < self.radius)

    def params(self):
        return {"radius": self.radius}


class Peanut(Surface):
    """``q(y) = r(y_3) (y_1, 2 y_2, y_3)`` with a peanut-shaped profile."""

    label = "peanut"
    _A = np.array([1.0, 2.0, 1.0])
    _K = (1.0 + np.sqrt(2.0)) ** -0.5

    @classmethod
    def profile(cls, c):
        """``r`` and ``dr/dc`` as functions of ``c = cos(theta)``."""
        u = 2.0 * c * c - 1.0  # cos(2 theta)
        s = np.sqrt(1.0 + u * u)
        base = u + s
        r = cls._K * np.sqrt(base)
        dr = cls._K * 0.5 / np.sqrt(base) * (1.0 + u / s) * 4.0 * c
        return r, dr

    def evaluate(self, y, *ws):
        y = np.asarray(y, dtype=float)
        r, dr = self.profile(y[..., 2])
        Ay = self._A * y
        q = r[..., None] * Ay
        out = [dr[..., None] * np.asarray(w)[..., 2:3] * Ay + r[..., None] * (self._A * w)
               for w in ws]
        return q, out

    @classmethod
    def ray_radius(cls, xhat):
        """Distance from the origin to the surface along unit directions."""
        p = np.asarray(xhat, dtype=float) / cls._A
        rad = np.linalg.norm(p, axis=-1)
        r, _ = cls.profile(p[..., 2] / rad)
        return r / rad

    def contains(self, point):
        p = np.asarray(point, dtype=float) / self._A
        rad = np.linalg.norm(p)
        if rad == 0:
            return True
        r, _ = self.profile(p[2] / rad)
        return bool(rad < r)


class _RadialSurface(Surface):
    """Surfaces ``q(y) = r(y) y`` given ``r`` and its tangential gradient."""

    def radius_and_gradient(self, y):
        raise NotImplementedError

    def evaluate(self, y, *ws):
        y = np.asarray(y, dtype=float)
        r, g = self.radius_and_gradient(y)
        q = r[..., None] * y
        out = []
        for w in ws:
            w = np.asarray(w)
            gw = np.sum(g * w, axis=-1)
            out.append(gw[..., None] * y + r[..., None] * w)
        return q, out

    def contains(self, point):
        p = np.asarray(point, dtype=float)
        rad = np.linalg.norm(p)
        if rad == 0:
            return True
        r, _ = self.radius_and_gradient(p / rad)
        return bool(rad < r)


class RoundedTetrahedron(_RadialSurface):
    """Radial surface ``r = (H + 5^{-3} H~)^{-1/5}`` with ``p = 5`` powers.

    ``H = sum_k |min(0, v_k . y)|^p`` and ``H~ = sum_k max(0, v_k . y)^p``
    over the four vertex directions ``v_k``.
    """

    label = "rounded_tetrahedron"
    p = 5
    _V = np.array([[1, 1, 1], [-1, -1, 1], [-1, 1, -1], [1, -1, -1]], dtype=float) / np.sqrt(3)

    def radius_and_gradient(self, y):
        y = np.asarray(y, dtype=float)
        p = self.p
        t = y @ self._V.T  # (..., 4)
        neg = np.maximum(-t, 0.0)
        pos = np.maximum(t, 0.0)
        c = 5.0 ** -3
        S = np.sum(neg ** p, -1) + c * np.sum(pos ** p, -1)
        dS = (-p * neg ** (p - 1) + c * p * pos ** (p - 1)) @ self._V
        r = S ** (-1.0 / p)
        grad = (-1.0 / p) * S[..., None] ** (-1.0 / p - 1.0) * dS
        # keep only the tangential part
        grad = grad - np.sum(grad * y, -1)[..., None] * y
        return r, grad


class StarShape:
    """Real positive radial function stored by its scalar coefficients.

    Parameters
    ----------
    coeffs : complex array of length ``(n_r+1)**2``
    n_r : int, optional
        Truncation degree; inferred from the length if omitted.
    """

    def __init__(self, coeffs, n_r=None, check=True):
        coeffs = np.asarray(coeffs, dtype=complex).copy()
        if n_r is None:
            n_r = int(round(np.sqrt(coeffs.size))) - 1
        if coeffs.size != sb.n_scalar(n_r):
            raise ValueError("coefficient length does not match n_r")
        if check and not sb.is_real_coefficients(coeffs, tol=1e-10):
            raise ValueError("coefficients do not describe a real function")
        self.n_r = int(n_r)
        self.coeffs = sb.real_projection(coeffs)
        self.coeffs.flags.writeable = False
        if check:
            g = sb.build_gauss_grid(max(self.n_r, 2))
            if np.min(self.radius(g.points)) <= 0:
                raise ValueError("radius must be positive at all quadrature points")

    @classmethod
    def sphere(cls, radius=1.0, n_r=0):
        c = np.zeros(sb.n_scalar(n_r), dtype=complex)
        c[0] = radius * np.sqrt(4 * np.pi)
        return cls(c, n_r)

    @classmethod
    def from_function(cls, func, n_r, grid_order=None):
        """Project a real function of unit vectors onto degree ``n_r``."""
        g = sb.build_gauss_grid(grid_order or max(2 * n_r, n_r + 2))
        vals = np.asarray(func(g.points), dtype=float)
        c = sb.project_scalar(g, vals, n=n_r)
        return cls(sb.real_projection(c), n_r)

    def radius(self, points):
        return sb.eval_scalar_expansion(self.coeffs, self.n_r, points).real

    def radius_and_gradient(self, points):
        v, g = sb.eval_scalar_expansion(self.coeffs, self.n_r, points, gradient=True)
        return v.real, g.real

    def with_degree(self, n_r):
        """Zero-pad or truncate to another degree."""
        c = np.zeros(sb.n_scalar(n_r), dtype=complex)
        k = min(c.size, self.coeffs.size)
        c[:k] = self.coeffs[:k]
        return StarShape(c, n_r)

    def to_param(self):
        return StarSurface(self)

    # -- serialisation -------------------------------------------------------
    def to_dict(self):
        ls, js = sb.degree_arrays(self.n_r)
        rows = [[int(l), int(j), float(c.real), float(c.imag)]
                for l, j, c in zip(ls, js, self.coeffs) if c != 0]
        return {"n_r": self.n_r, "coeffs": rows}

    @classmethod
    def from_dict(cls, doc):
        try:
            n_r = int(doc["n_r"])
            c = np.zeros(sb.n_scalar(n_r), dtype=complex)
            for l, j, re, im in doc["coeffs"]:
                l, j = int(l), int(j)
                if not (0 <= l <= n_r and abs(j) <= l):
                    raise ValueError(f"invalid index (l={l}, j={j})")
                c[sb.scalar_index(l, j)] = complex(float(re), float(im))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed star-shape document: {exc}") from exc
        if not sb.is_real_coefficients(c, tol=1e-10):
            raise ValueError("coefficients violate the real-valuedness constraint")
        return cls(c, n_r)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class StarSurface(_RadialSurface):
    """Surface ``q = r xhat`` of a :class:`StarShape`."""

    label = "star"

    def __init__(self, shape):
        self.shape = shape

    def radius_and_gradient(self, y):
        return self.shape.radius_and_gradient(y)

    def params(self):
        return self.shape.to_dict()


def peanut_star_approximation(n_r, grid_order=None):
    """Star shape whose radius is the projection of the peanut's ray radius."""
    return StarShape.from_function(Peanut.ray_radius, n_r, grid_order)


def star_to_param(shape):
    return StarSurface(shape)


def make_shape(label, params=None):
    """Construct one of the built-in surfaces.

    ``label`` is one of ``sphere`` (``radius``), ``peanut``,
    ``rounded_tetrahedron`` or ``star`` (``n_r`` and ``coeffs`` as in the
    star-shape file format, or ``file``).
    """
    params = dict(params or {})
    if label == "sphere":
        return Sphere(params.get("radius", 1.0))
    if label == "peanut":
        return Peanut()
    if label == "rounded_tetrahedron":
        return RoundedTetrahedron()
    if label == "star":
        if "file" in params:
            return StarShape.from_json(params["file"]).to_param()
        return StarShape.from_dict(params).to_param()
    raise ValueError(f"unknown shape label {label!r}")


# ---------------------------------------------------------------------------
# Piola transform


def piola_push_frame(frame, v):
    """``J [Dq]^{-1} v`` as ``(e_theta, e_phi)`` components."""
    v = np.asarray(v)
    ut = np.sum(v * np.cross(frame.t2, frame.normal), -1)
    up = np.sum(v * np.cross(frame.normal, frame.t1), -1)
    return ut, up


def piola_pull_frame(frame, ut, up):
    """``(1/J) [Dq] u`` for frame components ``(ut, up)``."""
    return (ut[..., None] * frame.t1 + up[..., None] * frame.t2) / frame.J[..., None]


def piola_push(frame, v):
    """Push tangential fields on ``Gamma`` to ambient vectors on ``S^2``."""
    if np.any(frame.J <= 0):
        raise ValueError("singular Jacobian")
    ut, up = piola_push_frame(frame, v)
    return ut[..., None] * frame.e_theta + up[..., None] * frame.e_phi


def piola_pull(frame, u):
    """Inverse of :func:`piola_push`."""
    if np.any(frame.J <= 0):
        raise ValueError("singular Jacobian")
    u = np.asarray(u)
    ut = np.sum(u * frame.e_theta, -1)
    up = np.sum(u * frame.e_phi, -1)
    return piola_pull_frame(frame, ut, up)
