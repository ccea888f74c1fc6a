"""Channel coding, soft bit/symbol conversion, turbo reception, and
transfer-chart diagnostics."""

from .ldpc import LdpcCode, from_alist, ldpc_decode_spa, ldpc_encode, make_regular_code, to_alist
from .llr import llr_to_symbol_priors, symbols_to_extrinsic_llr
from .turbo import TurboResult, deinterleave, interleave, make_interleaver, turbo_receive
from .exit_chart import (
    ExitPoint,
    decoder_exit_curve,
    detector_exit_curve,
    j_function,
    j_inverse,
    mutual_information_from_llrs,
    synthesize_prior_llrs,
)

__all__ = [
    "LdpcCode",
    "make_regular_code",
    "from_alist",
    "to_alist",
    "ldpc_encode",
    "ldpc_decode_spa",
    "symbols_to_extrinsic_llr",
    "llr_to_symbol_priors",
    "make_interleaver",
    "interleave",
    "deinterleave",
    "turbo_receive",
    "TurboResult",
    "ExitPoint",
    "j_function",
    "j_inverse",
    "synthesize_prior_llrs",
    "mutual_information_from_llrs",
    "detector_exit_curve",
    "decoder_exit_curve",
]
