"""sgdlab: a laboratory for SGD learning-rate protocols.

Trains with constant, uniformly random and cyclic cosine learning rates,
estimates the gradient-noise diffusion matrix, simulates the continuous
Langevin approximation, and verifies the effective-temperature picture of
the stationary state, all under a reproducible experiment harness.
"""

__version__ = "0.1.0"

from .errors import (CapacityError, ConfigError, DivergenceError,
                     IdxFormatError, MisuseError)
from .protocols import (ProtocolKind, ProtocolSpec, alpha_variance,
                        rate_at_epoch, rate_trace, sample_alpha, sample_alphas)
from .objectives import (BilayerPerceptron, LogisticRegression, Objective,
                         QuadraticEnsemble, gradient_check, minibatch_grad)
from .optimizer import (EpochStats, HyperParams, OptimizerState,
                        TrainingRecord, read_run_csv, sgd_step, train,
                        write_run_csv, write_run_summary)
from .mnist import (generate_digits, load_mnist_subset, read_idx_images,
                    read_idx_labels, stratified_subset, write_digit_dataset,
                    write_idx_images, write_idx_labels)
from .diffusion import (BatchScheme, DiffusionReport, MomentMode,
                        alpha_second_moment, analytic_covariance,
                        empirical_covariance, isotropic_scalar, noise_sample,
                        trace_diffusion_scalar)
from .thermo import (GibbsComparison, GibbsDensity, ThermoParams,
                     compare_to_gibbs, effective_temperature, same_temperature)
from .sde import (OuTransition, SdeParams, SdeState, WeakErrorResult,
                  continuous_mean, discrete_mean_trajectory, em_step,
                  exact_ou_step, sample_stationary, weak_error_probe)
from .harness import (EqualTemperatureConfig, EqualTemperatureReport,
                      ExperimentConfig, SweepResult, build_objective,
                      run_equal_temperature_experiment, run_protocol_sweep)
