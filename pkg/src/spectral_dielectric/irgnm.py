"""Iteratively regularized Gauss-Newton reconstruction of star shapes.

Each Newton step solves the Tikhonov-regularized linearized problem

    (alpha_N I + sum_k F'_k* F'_k) dq = sum_k F'_k*(data_k - F_k(q_N)) + alpha_N (q_0 - q_N)

by conjugate gradients in the ``H^s`` inner product. ``H^s`` is realized
diagonally on scalar coefficients with weights ``(1 + l^2)^s``. The
regularization parameters follow ``alpha_N = alpha_0 decay^N`` and the
iteration stops once the residual drops below ``tau delta``.
"""

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import sphere_basis as sb
from .assembly import DielectricConfig
from .forward_solver import ForwardSystem, PlaneWave
from .geometry import StarShape
from .shape_derivative import LinearizedForward, PerturbationField

__all__ = [
    "IrgnmConfig",
    "MeasurementSet",
    "CgInfo",
    "IrgnmResult",
    "farfield_norm",
    "synthesize_data",
    "cg_normal_step",
    "normal_operator",
    "run_irgnm",
    "read_history",
    "DELTA_FLOOR",
]

#: relative floor on the noise level used for exact data
DELTA_FLOOR = 1e-8


@dataclass(frozen=True)
class IrgnmConfig:
    """Parameters of the regularized Newton iteration.

    Parameters
    ----------
    alpha0 : float or None
        Initial regularization parameter. ``None`` selects
        ``0.1 * ||data||^2 / ||q0||_s^2``.
    decay : float
        Factor applied to ``alpha`` per Newton step.
    tau : float
        Discrepancy constant.
    s : float
        Sobolev index of the parameter space, ``s > 2``.
    max_newton : int
        Maximal number of Newton steps.
    cg_tol, cg_max : float, int
        Relative residual tolerance and iteration cap of the inner CG.
    n_fwd : int
        Discretization order of the forward solver used in the inversion.
    n_inv : int
        Degree of the reconstructed radial function.
    n_inner : int or None
        Inner quadrature order of the forward solver.
    threads : int
    """

    alpha0: float = None
    decay: float = 2.0 / 3.0
    tau: float = 4.0
    s: float = 2.5
    max_newton: int = 20
    cg_tol: float = 1e-8
    cg_max: int = 200
    n_fwd: int = 10
    n_inv: int = 4
    n_inner: int = None
    threads: int = 1

    def __post_init__(self):
        if self.alpha0 is not None and not self.alpha0 > 0:
            raise ValueError("alpha0 must be positive")
        if not 0 < self.decay < 1:
            raise ValueError("decay must lie in (0, 1)")
        if not self.tau > 1:
            raise ValueError("tau must exceed 1")
        if not self.s > 2:
            raise ValueError("the Sobolev index must exceed 2")
        if self.max_newton < 0 or self.cg_max < 1 or not self.cg_tol > 0:
            raise ValueError("invalid iteration limits")
        if self.n_fwd < 1 or self.n_inv < 0:
            raise ValueError("invalid discretization orders")

    def to_dict(self):
        return asdict(self)


def farfield_norm(values, weights):
    """``sqrt(sum_k ||E_k||^2_{L^2})`` for samples of shape ``(m, n_dirs, 3)``."""
    values = np.asarray(values)
    return float(np.sqrt(np.sum(weights[None, :, None] * np.abs(values) ** 2)))


@dataclass(eq=False)
class MeasurementSet:
    """Far-field data of ``m`` plane waves on the far-sphere Gauss grid.

    ``data`` has shape ``(m, n_dirs, 3)``, ``delta`` bounds the summed
    ``L^2`` noise and ``n_far`` is the order of the far grid.
    """

    config: DielectricConfig
    incidents: list
    data: np.ndarray
    delta: float
    n_far: int
    seed: int = None
    noise_level: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        grid = sb.build_gauss_grid(self.n_far)
        if self.data.shape != (len(self.incidents), grid.size, 3):
            raise ValueError("data shape does not match the incidents and far grid")
        if not self.delta >= 0:
            raise ValueError("delta must be non-negative")
        for inc in self.incidents:
            if abs(np.dot(inc.d, inc.p)) > 1e-12:
                raise ValueError("incident polarization must be orthogonal to the direction")

    @property
    def m(self):
        return len(self.incidents)

    @property
    def far_weights(self):
        return sb.build_gauss_grid(self.n_far).weights.reshape(-1)

    def norm(self):
        return farfield_norm(self.data, self.far_weights)

    def to_dict(self):
        return {
            "version": 1,
            "config": self.config.to_dict(),
            "n_far": self.n_far,
            "delta": self.delta,
            "seed": self.seed,
            "noise_level": self.noise_level,
            "incidents": [{"d": list(map(float, i.d)), "p": list(map(float, i.p))}
                          for i in self.incidents],
            "data_re": self.data.real.tolist(),
            "data_im": self.data.imag.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            cfg = DielectricConfig(**doc["config"])
            incs = [PlaneWave(i["d"], i["p"]) for i in doc["incidents"]]
            data = np.asarray(doc["data_re"], dtype=float) + 1j * np.asarray(doc["data_im"], dtype=float)
            return cls(cfg, incs, data, float(doc["delta"]), int(doc["n_far"]),
                       doc.get("seed"), float(doc.get("noise_level", 0.0)), doc.get("meta", {}))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed measurement document: {exc}") from exc

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _tangential_noise(rng, xhat, shape):
    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return z - np.sum(z * xhat, -1)[..., None] * xhat


def synthesize_data(shape, config, incidents, noise_level=0.0, seed=0, n_synth=15,
                    n_far=20, n_inner=None, threads=1):
    """Far-field data of a star shape with optional tangential noise.

    The noise is complex Gaussian, projected onto the tangent planes and
    scaled so that its summed ``L^2`` norm equals ``noise_level`` times the
    summed norm of the clean data; ``delta`` is that norm.
    """
    if not isinstance(shape, StarShape):
        raise TypeError("shape must be a StarShape")
    if noise_level < 0:
        raise ValueError("noise level must be non-negative")
    system = ForwardSystem(shape.to_param(), config, n_synth, n_inner, n_far, threads)
    clean = np.stack([system.solve_direct(inc).farfield.values for inc in incidents])
    grid = sb.build_gauss_grid(n_far)
    w = grid.weights.reshape(-1)
    data = clean.copy()
    delta = 0.0
    if noise_level > 0:
        rng = np.random.default_rng(seed)
        xhat = grid.points.reshape(-1, 3)
        noise = _tangential_noise(rng, xhat[None], clean.shape)
        delta = noise_level * farfield_norm(clean, w)
        noise *= delta / farfield_norm(noise, w)
        data = clean + noise
    meta = {"n_synth": int(n_synth), "truth": shape.to_dict()}
    return MeasurementSet(config, list(incidents), data, float(delta), int(n_far), seed,
                          float(noise_level), meta)


@dataclass(frozen=True)
class CgInfo:
    iterations: int
    residual: float
    converged: bool


def _hs_inner(x, y, weights):
    return float(np.real(np.sum(weights * x * np.conj(y))))


def normal_operator(state, alpha, s):
    """``x -> alpha x + F'* F' x`` on real radial coefficient vectors."""
    def apply(x):
        return alpha * x + state.adjoint(state.apply(PerturbationField.radial(x)), s)
    return apply


def cg_normal_step(state, data, q_N, q0, alpha, s, tol=1e-8, maxiter=200):
    """Regularized Gauss-Newton update by CG in the ``H^s`` inner product.

    Parameters
    ----------
    state : LinearizedForward
        Forward solutions and derivative at ``q_N``.
    data : array ``(m, n_dirs, 3)``
    q_N, q0 : scalar coefficient vectors of the current iterate and the
        initial guess (degree ``state.n_r``).
    alpha : float

    Returns
    -------
    dq : real coefficient vector
    info : CgInfo

    Raises
    ------
    RuntimeError
        If a non-positive curvature is encountered.
    """
    wts = sb.sobolev_weights(state.n_r, s)
    A = normal_operator(state, alpha, s)
    b = state.adjoint(state.residual(data), s) + alpha * (np.asarray(q0) - np.asarray(q_N))
    b = sb.real_projection(b)
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = _hs_inner(r, r, wts)
    bnorm = np.sqrt(rr)
    if bnorm == 0:
        return x, CgInfo(0, 0.0, True)
    for it in range(1, maxiter + 1):
        Ap = A(p)
        curv = _hs_inner(p, Ap, wts)
        if not curv > 0:
            raise RuntimeError(f"non-positive curvature {curv:.3e} at CG iteration {it}")
        a = rr / curv
        x = x + a * p
        r = r - a * Ap
        rr_new = _hs_inner(r, r, wts)
        if np.sqrt(rr_new) <= tol * bnorm:
            return x, CgInfo(it, float(np.sqrt(rr_new) / bnorm), True)
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x, CgInfo(maxiter, float(np.sqrt(rr) / bnorm), False)


@dataclass(eq=False)
class IrgnmResult:
    shape: StarShape
    iterates: list
    residuals: list
    alphas: list
    stop_reason: str
    delta: float
    history: list
    flags: list = field(default_factory=list)

    @property
    def iterations(self):
        return len(self.iterates) - 1


def _damped_shape(q, dq, n_r, max_halvings=30):
    for _ in range(max_halvings):
        try:
            return StarShape(q + dq, n_r), dq
        except ValueError:
            dq = 0.5 * dq
    raise RuntimeError("could not keep the radius positive by step damping")


def read_history(path):
    """Records of an iterate history file (one JSON object per line)."""
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def run_irgnm(measurements, config, q0, start=None, start_index=0, history_path=None,
              callback=None, log=None):
    """Regularized Newton iteration for star-shaped obstacles.

    Parameters
    ----------
    measurements : MeasurementSet
    config : IrgnmConfig
    q0 : StarShape
        Initial guess and regularization anchor.
    start : StarShape, optional
        Iterate to resume from (defaults to ``q0``) with index ``start_index``.
    history_path : path, optional
        JSON lines file receiving ``{N, alpha, residual, r_coeffs}`` per iterate.
        When resuming, records are appended and the starting iterate, already
        present in the file, is not written again.
    callback : callable, optional
        Called with each history record.

    Returns
    -------
    IrgnmResult
    """
    n_r = config.n_inv
    q0c = q0.with_degree(n_r).coeffs.copy()
    q = (q0 if start is None else start).with_degree(n_r).coeffs.copy()
    wts = sb.sobolev_weights(n_r, config.s)
    data = measurements.data
    dnorm = measurements.norm()
    delta = max(measurements.delta, DELTA_FLOOR * dnorm)
    alpha0 = config.alpha0
    if alpha0 is None:
        alpha0 = 0.1 * dnorm ** 2 / _hs_inner(q0c, q0c, wts)
    fh = open(history_path, "a" if start is not None else "w") if history_path else None
    iterates, residuals, alphas, history, flags = [], [], [], [], []
    increases = 0
    N = int(start_index)
    stop = None
    try:
        while True:
            shape = StarShape(q, n_r)
            t0 = time.perf_counter()
            system = ForwardSystem(shape.to_param(), measurements.config, config.n_fwd,
                                   config.n_inner, measurements.n_far, config.threads)
            state = LinearizedForward(system, measurements.incidents, n_r=n_r)
            res = farfield_norm(state.residual(data), measurements.far_weights)
            alpha = alpha0 * config.decay ** N
            rec = {"N": N, "alpha": alpha, "residual": res, "r_coeffs": shape.to_dict()}
            if residuals and res > residuals[-1]:
                increases += 1
                flags.append(f"residual increased at N={N}")
            else:
                increases = 0
            iterates.append(shape)
            residuals.append(res)
            alphas.append(alpha)
            history.append(rec)
            if fh and not (start is not None and N == start_index):
                fh.write(json.dumps(rec) + "\n")
                fh.flush()
            if callback:
                callback(rec)
            if res <= config.tau * delta:
                stop = "discrepancy"
            elif increases >= 2:
                stop = "stagnation"
            elif N - start_index >= config.max_newton:
                stop = "max_newton"
            if stop:
                break
            dq, info = cg_normal_step(state, data, q, q0c, alpha, config.s,
                                      config.cg_tol, config.cg_max)
            if log:
                log(f"N={N} residual={res:.3e} alpha={alpha:.3e} cg={info.iterations} "
                    f"time={time.perf_counter() - t0:.1f}s")
            _, dq = _damped_shape(q, dq, n_r)
            q = q + dq
            N += 1
    finally:
        if fh:
            fh.close()
    return IrgnmResult(iterates[-1], iterates, residuals, alphas, stop, delta, history, flags)
