"""Multiscale inference on the shape of a multivariate density observed with additive error."""

from .kernel import (LaplaceError, SpectralError, TestKernel, Triple, kernel_inner_product,
                     make_deconv_kernel_laplace, make_deconv_kernel_spectral, make_quartic_kernel,
                     make_smooth_kernel)
from .estimator import Sample, compute_V, critical_value, pilot_density, read_sample_csv, test_statistic, weights
from .limit import build_limit_model, calibrate_quantiles, simulate_kappa
from .inference import (DecisionReport, MultiscaleTest, TripleGrid, build_grid, candidate_set, detect_modes,
                        monotonicity_map, run_multiscale_test)
from .simulate import Scenario, reproduce_table, sample_laplace_noise, sample_scenario

__version__ = "0.1.0"
