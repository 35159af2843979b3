"""Monte Carlo fundamental solutions of non-divergence parabolic equations.

Driftless diffusions dX = sigma dB are reweighted by a Feynman-Kac factor
to estimate fundamental solutions; reflection couplings measure how fast
two copies meet; closed-form kernels and a Crank-Nicolson solver serve
as oracles.
"""

__version__ = "0.1.0"

from .coefficients import (CallableField, CoefficientField, ConstantField, DiscontinuousField,
                           EllipticityBounds, ExpressionField, SamplingGrid, SinField, make_preset,
                           sqrt_spd, validation_reports)
from .coupling import (CouplingStats, coupling_time_stats, estimate_coupling_exponent,
                       reflection_matrix, simulate_coupled_pair)
from .errors import *  # noqa: F401,F403
from .estimator import (DensityEstimate, GaussianEnvelope, HolderReport, chapman_kolmogorov_check,
                        estimate_fundamental, estimate_holder_exponent, estimate_px_density,
                        fit_gaussian_envelope, kde_expectation, moment_bound_check,
                        pinned_expectation)
from .reference import (ConstantCoefficientKernel, Grid1D, backward_residual_check,
                        crank_nicolson_1d, gaussian_kernel)
from .rng import RngStream
from .sde import (TimeGrid, accumulate_weight, feynman_kac_solve, run_paths, simulate_bridge,
                  simulate_paths, weight_split)
