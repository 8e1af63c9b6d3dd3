"""Spectral solver for electromagnetic scattering by dielectric obstacles and
regularized Newton reconstruction of star-shaped obstacles."""

from . import assembly, forward_solver, geometry, irgnm, kernels, shape_derivative, sphere_basis
from .assembly import DielectricConfig
from .forward_solver import ForwardSystem, HerglotzWave, PlaneWave, PointSource
from .geometry import Peanut, RoundedTetrahedron, Sphere, StarShape, make_shape
from .irgnm import IrgnmConfig, MeasurementSet, run_irgnm, synthesize_data
from .shape_derivative import LinearizedForward, PerturbationField

__all__ = [
    "assembly",
    "forward_solver",
    "geometry",
    "irgnm",
    "kernels",
    "shape_derivative",
    "sphere_basis",
    "DielectricConfig",
    "ForwardSystem",
    "HerglotzWave",
    "PlaneWave",
    "PointSource",
    "Peanut",
    "RoundedTetrahedron",
    "Sphere",
    "StarShape",
    "make_shape",
    "IrgnmConfig",
    "MeasurementSet",
    "run_irgnm",
    "synthesize_data",
    "LinearizedForward",
    "PerturbationField",
]

__version__ = "0.1.0"
