"""Federated randomized Kaczmarz solver and simulation harness."""

from .core import (
    RngStream,
    SamplingScheme,
    as_matrix,
    as_vector,
    derive_seed,
    frobenius_norm_sq,
    hard_threshold,
    rk_step,
    sample_row,
    sample_rows,
)
from .errors import FedRKError
from .federation import (
    FedTrace,
    Partition,
    RoundStreams,
    RunConfig,
    ServerRoundSystem,
    build_server_system,
    client_local_update,
    fed_round,
    fed_run,
    partition_system,
    sample_clients,
    server_solve,
)
from .solver import (
    IterateTrace,
    LinearSystem,
    contraction_factor,
    decay_functional,
    fit_decay_rate,
    rk_run,
)
from .transport import Endpoint, decode, encode, run_client, run_server

__version__ = "0.1.0"

__all__ = [
    "RngStream",
    "SamplingScheme",
    "as_matrix",
    "as_vector",
    "derive_seed",
    "frobenius_norm_sq",
    "hard_threshold",
    "rk_step",
    "sample_row",
    "sample_rows",
    "FedRKError",
    "FedTrace",
    "Partition",
    "RoundStreams",
    "RunConfig",
    "ServerRoundSystem",
    "build_server_system",
    "client_local_update",
    "fed_round",
    "fed_run",
    "partition_system",
    "sample_clients",
    "server_solve",
    "IterateTrace",
    "LinearSystem",
    "contraction_factor",
    "decay_functional",
    "fit_decay_rate",
    "rk_run",
    "Endpoint",
    "decode",
    "encode",
    "run_client",
    "run_server",
    "__version__",
]
