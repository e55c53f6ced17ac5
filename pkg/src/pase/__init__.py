"""Two-level augmented subspace eigensolver for symmetric pencils ``A x = lam B x``."""
from .augmented import (
    AugmentedPencil,
    AugmentedVector,
    apply_shift,
    assemble_augmented,
    back_transform,
    precond_transform,
    probe_spd,
)
from .driver import BatchConfig, ConvergenceReport, PaseConfig, batch_solve, check_convergence, correction_step, pase_solve
from .errors import *  # noqa: F401,F403
from .gcg import gcg_aug, gcg_aug_shifted
from .problems import Hierarchy, lshape_hierarchy, mesh_hierarchy, square_hierarchy
from .solvers import BcgConfig, block_cg

__version__ = "0.1.0"
