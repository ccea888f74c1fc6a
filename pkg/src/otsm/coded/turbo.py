"""Iterative receiver exchanging extrinsic soft information between a
message-passing detector and the sum-product decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import detectors
from ..channel import ChannelRealization
from ..modem import Constellation
from .ldpc import LLR_CLIP, LdpcCode, ldpc_decode_spa
from .llr import llr_to_symbol_priors, symbols_to_extrinsic_llr


def make_interleaver(length: int, seed: int) -> np.ndarray:
    """Seeded uniform permutation of the coded bits."""
    return np.random.default_rng(seed).permutation(length)


def interleave(values: np.ndarray, permutation: np.ndarray) -> np.ndarray:
    return np.asarray(values)[permutation]


def deinterleave(values: np.ndarray, permutation: np.ndarray) -> np.ndarray:
    out = np.empty_like(np.asarray(values))
    out[permutation] = values
    return out


@dataclass
class TurboResult:
    info_bits: np.ndarray
    converged: bool
    diverged: bool
    outer_iterations: int
    per_iteration_info_ber: list[float] | None


def _run_detector(kind, y, h, constellation, priors, noise_precision, options, svd):
    if kind == "amp":
        if noise_precision is None:
            raise ValueError("the scalar message-passing detector needs the noise precision")
        return detectors.amp_detect(
            y, h, noise_precision, constellation, options=options, priors=priors
        )
    if kind == "vamp-em":
        return detectors.vamp_em_detect(
            y,
            h,
            constellation,
            options=options,
            noise_precision=noise_precision,
            priors=priors,
            svd=svd,
        )
    raise ValueError(f"turbo detector must be 'amp' or 'vamp-em', got {kind!r}")


def turbo_receive(
    y,
    channel,
    code: LdpcCode,
    constellation: Constellation,
    detector: str = "vamp-em",
    outer_iterations: int = 4,
    inner_iterations: int = 4,
    interleaver_seed: int = 0,
    noise_precision: float | None = None,
    detector_options=None,
    true_info_bits=None,
) -> TurboResult:
    """Detector/decoder loop over one frame.

    ``channel`` is either a channel realization (its payload matrix and
    cached SVD are reused across the outer iterations) or a plain
    matrix.  Decoder extrinsics are interleaved back into per-symbol
    prior tables for the detector; detector extrinsics are
    deinterleaved into decoder channel LLRs.  When ``true_info_bits``
    is given, the per-outer-iteration information bit error ratio is
    recorded.
    """
    if isinstance(channel, ChannelRealization):
        h = channel.data_channel_dense()
        svd = channel.data_svd()
    else:
        h = np.asarray(channel, dtype=complex)
        svd = None
    n_sym = h.shape[1]
    bits = constellation.bits_per_symbol
    if code.block_length != n_sym * bits:
        raise ValueError(
            f"code length {code.block_length} does not match the frame's {n_sym * bits} coded bits"
        )
    perm = make_interleaver(code.block_length, interleaver_seed)

    decoder_ext = np.zeros(code.block_length)
    info_bits = np.zeros(code.message_length, dtype=np.uint8)
    diagnostics = [] if true_info_bits is not None else None
    converged = False
    diverged = False
    iterations = 0

    for it in range(1, outer_iterations + 1):
        detector_prior_llrs = interleave(decoder_ext, perm)
        priors = llr_to_symbol_priors(detector_prior_llrs, constellation) if it > 1 else None
        try:
            result = _run_detector(
                detector, y, h, constellation, priors, noise_precision, detector_options, svd
            )
        except detectors.DetectorDivergence as err:
            diverged = True
            if err.result is None:
                break
            result = err.result
        det_ext = symbols_to_extrinsic_llr(
            result.extrinsic_mean,
            result.extrinsic_variance,
            detector_prior_llrs if it > 1 else None,
            constellation,
        )
        channel_llrs = deinterleave(det_ext, perm)
        hard, posterior, dec_converged = ldpc_decode_spa(channel_llrs, code, inner_iterations)
        decoder_ext = np.clip(posterior - channel_llrs, -LLR_CLIP, LLR_CLIP)
        info_bits = hard[code.info_positions]
        iterations = it
        if diagnostics is not None:
            errors = np.count_nonzero(info_bits != np.asarray(true_info_bits, dtype=np.uint8))
            diagnostics.append(errors / info_bits.size)
        if dec_converged:
            converged = True
            break

    if diagnostics is not None and diagnostics:
        diagnostics += [diagnostics[-1]] * (outer_iterations - len(diagnostics))
    return TurboResult(
        info_bits=info_bits,
        converged=converged,
        diverged=diverged,
        outer_iterations=iterations,
        per_iteration_info_ber=diagnostics,
    )
