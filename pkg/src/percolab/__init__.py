"""Fractal percolation on M-adic cube trees: sampling, porosity and pruned block processes."""

__version__ = "0.1.0"

from .errors import FormatError, ParameterError, PercolabError, ResourceCapError, SubcriticalError
from .gw import (BoundReport, OffspringDistribution, annular_bounds, binomial_offspring, bound_c,
                 bound_lpor_dim, bound_lpor_lower, bound_upor_dim, bound_upor_lower, extinction_prob,
                 fractal_dimension, general_offspring, poisson_binomial_offspring, survival_offspring,
                 survival_offspring_pmf)
from .mcube import CubeAddress
from .porosity import (OccupiedSet, annular_porosity_at, box_dimension, conical_central_cube,
                       hole_meeting_children, level_set, porosity_at, upor_lpor_estimate)
from .pruner import PruneRule, PrunedTree, apply_prune, block_offspring_stats, pruned_dimension
from .sampler import (PercolationConfig, PercolationTree, condition_on_nonextinction,
                      mark_survivors_exact, sample_ensemble, sample_mu_points, sample_tree,
                      surviving_count)
from .treeio import deserialize, serialize
