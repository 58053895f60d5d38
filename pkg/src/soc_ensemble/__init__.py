"""Deep ensembles of Gaussian-output MLPs, written in plain numpy.

Each member predicts a mean and a variance, is trained on the Gaussian
negative log-likelihood with Adam, and the ensemble is combined as a uniform
mixture. Includes toy and simulated-drive data, evaluation and a CLI.
"""

from .nn_core import (GaussianPrediction, LayerSpec, NetworkParams, SpecError, backward,
                      forward, grad_check, init_params, mse_loss, nll_loss)
from .optimizer import AdamState, LrGrid, adam_step, lr_grid_search
from .data import (Dataset, ScalerStats, fit_scaler, load_csv, split_chrono,
                   synthetic_drive_generate, toy_generate)
from .ensemble import (Ensemble, EnsembleConfig, load_ensemble, mixture_moments,
                       predict_mixture, predictive, save_ensemble, train_ensemble)
from .evaluation import MetricReport, coverage, nll_metric, rmse_metric

__version__ = "0.1.0"
