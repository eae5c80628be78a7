"""Communication-constrained distributed regularized regression.

A library and simulator for solving networked least-squares problems
with separable regularizers by a semi-stochastic proximal gradient
method, either centrally (with optional injected gradient errors) or
over a simulated synchronous network where every message is an n-bit
subtractively dithered quantization with geometrically refined
intervals.
"""

from .analysis import (EnvelopeParams, contraction_recursion, error_energy,
                       error_energy_constant, fit_linear_rate, gap_envelope,
                       moment_check)
from .central import (GaussianDecaying, NoError, Replay, Trace,
                      convergence_constants, exact_reference,
                      inexact_prox_svrg)
from .config import RunConfig, config_hash, parse_config
from .distributed import (BitLedger, Message, MessageKind, QuantLog,
                          bit_upper_bound, decode_message, encode_message,
                          reconstruct_error, reconstruct_round,
                          run_distributed)
from .errors import (ConfigError, FitRefusedError, GenerationError,
                     NonConvergenceError, ParameterError, ProtocolError,
                     QproxError)
from .problem import (Graph, ProblemInstance, RegularizerSpec,
                      SmoothnessReport, build_instance, generate_instance,
                      generate_regular_graph, prox_R, regularizer_value)
from .quantizer import (CodewordBlock, DitherStream, QuantizerState,
                        dithered_decode, dithered_encode, pack_codes,
                        quantize, refine, uniform_quantize, unpack_codes)

__version__ = "0.1.0"
