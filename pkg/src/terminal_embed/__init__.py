"""Terminal embeddings: nonlinear extensions of Johnson-Lindenstrauss maps.

A linear JL map of a training set X is extended to all of R^N by solving a
small convex program per query; the extension preserves distances between
every training point and every query.  The package also provides Gaussian
width and dimension calculators, data readers and synthetic generators, and
a compressive nearest-neighbour benchmark harness.
"""
__version__ = "0.1.0"

from .errors import (DegenerateInput, DimensionError, DomainError, FormatError,
                     InfeasibleError, InsufficientData, NumericalError, TerminalEmbedError)
from .geometry import (ManifoldParams, PointSet, SecantSet, gaussian_width_mc,
                       manifold_alpha, manifold_beta, manifold_width_bound,
                       target_dimension, unit_ball_volume, unit_secants)
from .jl import (DistortionStats, JLMatrix, apply_scaled, hull_distortion_estimate,
                 jl_distortion_stats, load_jl, sample_jl, save_jl)
from .solver import (ExtensionResult, Objective, PiConvention, SolverConfig, TerminalModel,
                     constraint_violation, embed_batch, embed_point, extension_objective,
                     nearest_train_point, solve_extension)
from .datasets import (SplitSpec, SplitStrategy, gen_circle_tube, gen_sparse, gen_two_manifolds,
                       read_csv, read_idx, split)
from .harness import (ExperimentReport, distortion_extremes, mean_nonlinearity, nn_classify,
                      run_experiment)
from .persist import load_model, save_model
