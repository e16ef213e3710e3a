"""Stationary non-causal random fields on integer lattices: Picard evaluation, finite-dependency
truncations, separable statistics, closed-form deviation bounds and their Monte Carlo checks."""

from .bounds import (BoundParams, BoundReport, approx_error_bound, deviation_bound_s, deviation_bound_tilde,
                     epsilon_for_probability, log_depth_bound, normalized_bound, recommend_d, s_threshold,
                     upsilon, upsilon_sup)
from .innovations import (Constant, FieldView, Gaussian, InnovationSource, SwapVariable, TruncatedGaussian,
                          Uniform, field_value, moment_vm, swap_index_set)
from .kernels import BACKEND
from .lattice import IndexSet, Orthotope, bound_counts, dilation_cardinality, orthotope_points
from .model import (FieldModel, NonContractiveModel, PicardConfig, ar_model, brnn_model, check_contraction,
                    evaluate_window, picard_evaluate, stencil_model)
from .statistics import (SeparableStatistic, check_lipschitz_separable, make_statistic, s_exact, s_tilde,
                         s_tilde_swapped)

__version__ = "0.1.0"
