"""Particle-based laboratory for mean-field training of an MLP + linear
attention model on in-context feature-learning tasks."""

__version__ = "0.1.0"

from .activations import SIGMOID, TANH, Activation, get_activation
from .ensembles import (Ensemble, Particle, PiConfig, h_ensemble, h_particle,
                        hull_decompose, mix, path_norm, pi_ensemble,
                        rotate_pushforward, sample_pi, second_moment_a)
from .quadrature import (EvalSet, FeatureMatrix, SigmaSpectrum, cov,
                         draw_eval_set, eval_set_from_descriptor, features,
                         ridge_inverse, sigma_spectrum,
                         SingularFeatureCovariance, RIDGE_EPS)
from .objective import (CovPack, attention_optimum, finite_prompt_loss,
                        loss_tf, loss_tf_trace, projection_floor,
                        reduced_loss, reduced_loss_value, test_error)
from .dynamics import (TrainConfig, TrainLog, TrainRecord, attention_gd_step,
                       birth_death, func_deriv, gd_step, gp_perturb,
                       grad_field, grad_func_deriv, grad_norm_l2, train)
from .landscape import (Band, BandResult, ProbeReport, band_check,
                        first_order_slope, homotopy_scan, probe_report,
                        second_order_curvature, steepest_rotation,
                        symmetrizing_rotation)
from .spectral import (EvoCheck, HessianOperator, SpectralReport,
                       apply_hessian, eigen, evo_check, hessian_matrix,
                       subsample_uniform, trace_term, trace_term_blocks)
from .scenarios import (Scenario, build_scenario, chaos_experiment,
                        finite_width_scaling, init_model, make_teacher,
                        run_fig1a, run_fig1b, run_fig1c, run_fig1d,
                        run_mode, run_train)
