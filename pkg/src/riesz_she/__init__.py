"""Monte Carlo laboratory for spatial averages of the stochastic heat
equation with Riesz-correlated multiplicative noise."""

__version__ = "0.1.0"

from .noise import (Lattice, RieszSpec, SpatialField, SpectralCovariance,
                    build_embedding, cell_self_energy, covariance_diagnostic,
                    riesz_kernel_eval, sample_slice)
from .engine import (DegenerateSigmaError, FieldState, InitialCondition,
                     InstabilityError, NonlinearitySpec, Trajectory,
                     heat_semigroup, mean_field, simulate, step)
from .observables import (LimitConstants, Region, estimate_eta, k_beta,
                          limit_covariance, predicted_sigma, region_average)
from .stats import (SampleSet, StatsReport, correlation_decay_check,
                    functional_cov_check, increment_moment_fit, ks_distance,
                    lemma31_check, rate_fit, scaling_fit, standardize)
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .runner import ResultSet, emit_results, run_experiment
