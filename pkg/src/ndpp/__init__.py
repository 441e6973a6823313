"""Scalable learning and MAP inference for low-rank nonsymmetric DPPs."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .kernel import (BlockC, InferenceKernel, NdppParams, check_p0, check_psd_quadratic,
                     kernel_from_matrix, load_model, save_model, skew_factorize,
                     to_inference_kernel)
from .likelihood import (Gradients, LikelihoodReport, log_normalizer, objective,
                         objective_and_grad, regularizer, subset_logdet)
from .inference import (GreedyState, MapResult, condition_singletons, exact_map, greedy_map,
                        local_search, mcmc_map, stochastic_greedy)
from .training import (BasketDataset, TrainConfig, TrainTrace, fit, init_params,
                       load_baskets, split, train)
from .evaluation import (ApproxBoundReport, EvalReport, approx_bound_study,
                         auc_discrimination, mpr, relative_logdet_error, sample_synthetic_p0)
