"""Causal effect estimation for functional treatments under modified
treatment policies: FPCA truncation, policy application, outcome-regression,
density-ratio weighting, and cross-fitted doubly robust estimation."""

from .fgrid import (Dataset, DimensionError, FunctionalSample, TimeGrid,
                    ValidationError, from_arrays, inner_product, l2_distance,
                    validate_dataset)
from .fpca import (DecayReport, FpcaModel, KRule, ScoreMatrix, decay_diagnostic,
                   fit_fpca, load_fpca, project_scores, reconstruct, save_fpca,
                   tail_residual)
from .policy import (ModificationPolicy, RenormalizationError, apply_policy,
                     apply_policy_dataset, shifted_scores)
from .outcome import OutcomeModel, fit_outcome, predict_m, predict_m_batch
from .weights import (AugmentedDataset, BalanceReport, WeightModel,
                      balance_diagnostics, build_augmented, effective_sample_size,
                      fit_weight_model)
from .estimators import (MftpEstimate, PipelineConfig, aipw_with_nuisances,
                         bootstrap_ci, estimate_aipw, estimate_all, estimate_ipw,
                         estimate_or)
from .simgen import (GPKernel, ScenarioResult, SimConfig, build_context,
                     gen_covariates, gen_outcome, generate_dataset, k_sweep,
                     mean_outcome, mse_slope, oracle_truth, run_scenario,
                     sample_gp, scenario_config)

__version__ = "0.1.0"
