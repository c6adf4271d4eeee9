"""Privatised diffusion learning with locally cancelling pairwise noise."""

from .diffusion import (
    AgentData, DiffusionConfig, LossSpec, PrivacyMode, adapt, combine, gradient, run_diffusion,
)
from .errors import (
    ConstructionError, DegenerateKeyError, DivergedError, InvalidConfigError, IsolatedAgentError,
    LGHError, NumericalError, ProtocolError,
)
from .experiment import (
    ExperimentConfig, closed_form_optimum, generate_data, load_config, msd_metrics, run_trials,
)
from .noise_protocol import (
    LocalGraphHomomorphicNoise, assemble_edge_masks, derive_shared_uniform, generate_pair_noises,
    laplace_from_keys, public_key, sample_secrets, verify_local_cancellation,
)
from .privacy_metrics import EpsilonConstants, audit_noise_pipeline, epsilon_bound, ks_statistic
from .topology import Adjacency, Topology, build_graph, metropolis_weights, split_neighborhood

__version__ = "0.1.0"
