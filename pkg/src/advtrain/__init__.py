"""Adversarial training for linear regression and two-layer networks."""

from .attack import AttackSpec, AttackUndefined, linear_attack, network_attack, pgd_attack
from .datagen import CovarianceError, GenModel, make_gen_model, sample_dataset, sparse_theta
from .estimators import AdversarialLasso, AdversarialLinearRegression, TwoLayerAdversarialRegressor
from .experiments import (ConfigError, ExperimentConfig, PRESET_NAMES, emit_plotdata, get_preset,
                          load_config, run_experiment)
from .highdim import min_norm_interpolator
from .network import TwoLayerNet
from .risk import monte_carlo_risk, null_threshold, optimal_theta, population_risk
from .train import (TrainConfig, Trajectory, adv_train_lasso, adv_train_linear, adv_train_two_layer,
                    schedule_from_theorem)

__version__ = "0.1.0"

__all__ = [
    "AdversarialLasso", "AdversarialLinearRegression", "AttackSpec", "AttackUndefined", "ConfigError",
    "CovarianceError", "ExperimentConfig", "GenModel", "PRESET_NAMES", "TrainConfig", "Trajectory",
    "TwoLayerAdversarialRegressor", "TwoLayerNet", "adv_train_lasso", "adv_train_linear",
    "adv_train_two_layer", "emit_plotdata", "get_preset", "linear_attack", "load_config",
    "make_gen_model", "min_norm_interpolator", "monte_carlo_risk", "network_attack", "null_threshold",
    "optimal_theta", "pgd_attack", "population_risk", "run_experiment", "sample_dataset",
    "schedule_from_theorem", "sparse_theta",
]
