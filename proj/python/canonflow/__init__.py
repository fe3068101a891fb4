"""Canonical flow matching toolkit (C++ core)."""

from ._core import (
    __version__,
    canonicalize,
    energy_distance,
    fiedler_vector,
    gaussian_condvar,
    haar_rotation,
    hungarian,
    kabsch_align,
    ks_normal,
    ks_two_sample,
    mixture_log_density,
    mixture_score,
    parse_sdf,
    parse_xyz,
    to_xyz,
    train_c4,
    sample_checkpoint_points,
    molecule_metrics,
    verify_theory,
)

__all__ = [
    "__version__",
    "canonicalize",
    "energy_distance",
    "fiedler_vector",
    "gaussian_condvar",
    "haar_rotation",
    "hungarian",
    "kabsch_align",
    "ks_normal",
    "ks_two_sample",
    "mixture_log_density",
    "mixture_score",
    "parse_sdf",
    "parse_xyz",
    "to_xyz",
    "train_c4",
    "sample_checkpoint_points",
    "molecule_metrics",
    "verify_theory",
]
