"""Harmonic map flow into spheres and quantitative stratification of its singular set."""

from .geometry import GridSpec, ParabolicBall, SpaceTimePoint, ball_volume, parabolic_distance, tubular_volume
from .solver import Snapshot, load_trajectory, make_analytic, run, save_trajectory
from .windows import Window, WindowSpec, l2_distance_sq, sample_window
from .energies import dirichlet_scale_invariant, struwe_annulus, struwe_total
from .candidates import Candidate, Dictionary, InvariancePlane, best_fit
from .strata import ScaleParams, regularity_scale, scale_bits, strata_membership
from .analysis import cone_split_classify, cover_by_class, minkowski_fit, recursive_cover

__version__ = "0.1.0"

__all__ = [
    "GridSpec", "ParabolicBall", "SpaceTimePoint", "ball_volume", "parabolic_distance", "tubular_volume",
    "Snapshot", "load_trajectory", "make_analytic", "run", "save_trajectory",
    "Window", "WindowSpec", "l2_distance_sq", "sample_window",
    "dirichlet_scale_invariant", "struwe_annulus", "struwe_total",
    "Candidate", "Dictionary", "InvariancePlane", "best_fit",
    "ScaleParams", "regularity_scale", "scale_bits", "strata_membership",
    "cone_split_classify", "cover_by_class", "minkowski_fit", "recursive_cover",
]
