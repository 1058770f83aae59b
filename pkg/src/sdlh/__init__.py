"""Nash equilibria of semidefinite games by Lemke-Howson style path tracing."""

from .bimatrix import (
    BimatrixGame,
    brute_force_2x2_sdg,
    embed_diagonal,
    labels_of,
    lemke_howson,
    support_enumeration,
)
from .errors import (
    DegenerateEndpoint,
    DegenerateGame,
    InvalidInput,
    PathFailure,
    PathLeavesStrategySpace,
    RangeExceeded,
    SdlhError,
    StallFailure,
)
from .events import EventKind, EventRecord, minor_scan, nondegeneracy_probe, puiseux_fit
from .game import (
    Mask,
    NashCertificate,
    PayoffTensor,
    SdGame,
    best_response_1,
    best_response_2,
    phi_A,
    phi_B_prime,
    strict_complementarity,
    verify_nash,
)
from .tracer import PathPoint, Trace, TraceOptions, perturb, start_point, trace_path

__version__ = "0.1.0"
