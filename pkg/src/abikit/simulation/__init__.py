from .conjugate import (
    ConjugateGaussianConfig,
    ConjugateLikelihoodOracle,
    ConjugatePosteriorOracle,
    conjugate_gaussian_simulator,
    conjugate_log_likelihood,
    conjugate_log_marginal,
    conjugate_log_prior,
    conjugate_posterior,
)
from .core import (
    NamedBatch,
    SimulationError,
    Simulator,
    batch_size_of,
    concat_batches,
    make_simulator,
    sample,
    sample_parallel,
    subset,
)
from .lotka_volterra import (
    EmptyObservationError,
    LotkaVolterraConfig,
    ecology_model,
    expert_stats,
    integrate_rk4,
    lv_invariant,
    lv_prior,
    lv_rhs,
    make_lv_simulator,
    observation_model,
)
from .models import ModelMixture, gaussian_data_model, independent_model, normal_model
