"""Huber-loss empirical risk minimisation with an adaptive scale parameter."""
from .distributions import (
    Dataset, Example1, GaussMixture, RegressionModel, StudentT, SymmetricPareto, example1_cdf,
    example1_pdf, example1_quantile, generate_dataset, moment, sample_noise, toy_model,
)
from .errors import (
    EmptyDatasetError, HuberLearnError, InvalidInputError, NumericalError, OutOfDomainError,
    PreconditionError,
)
from .loss import empirical_risk, huber, huber_deriv, huber_weight
from .solver import ScheduleParams, SolverOptions, adaptive_sigma, fit_erm, psi_bound
from .spaces import Estimator, HypothesisSpace, covering_number_estimate, evaluate, make_space
from .theory import (
    BoundCheck, MomentInfo, comparison_gap, l2_distance, markov_tail_check, oracle_shift,
    relaxed_bernstein_check, risk_deriv_at, variance_bound_check,
)

__version__ = "0.1.0"
