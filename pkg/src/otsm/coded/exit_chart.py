"""Extrinsic-information transfer measurement for detector and decoder.

A-priori inputs are synthesised from the consistent Gaussian model
(LLR ~ N(s * sigma^2 / 2, sigma^2) for transmitted sign s), with sigma
obtained by bisecting the Gaussian mutual-information function.
Extrinsic information is measured with the averaging estimator
I = 1 - E[log2(1 + exp(-L * s))] against the known bits.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .. import detectors
from ..channel import ChannelRealization, apply_channel
from ..modem import Constellation, assemble_frame
from .ldpc import LLR_CLIP, LdpcCode, ldpc_decode_spa, ldpc_encode
from .llr import llr_to_symbol_priors, symbols_to_extrinsic_llr


@dataclass(frozen=True)
class ExitPoint:
    i_a: float
    i_e: float
    component: str


@lru_cache(maxsize=1)
def _hermite_nodes():
    return np.polynomial.hermite.hermgauss(96)


def j_function(sigma: float) -> float:
    """Mutual information of the consistent Gaussian LLR channel."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0.0:
        return 0.0
    nodes, weights = _hermite_nodes()
    llr = sigma**2 / 2.0 + sigma * np.sqrt(2.0) * nodes
    loss = np.logaddexp(0.0, -llr) / np.log(2.0)
    return float(max(0.0, min(1.0, 1.0 - np.sum(weights * loss) / np.sqrt(np.pi))))


def j_inverse(i_a: float) -> float:
    """Bisection inverse of :func:`j_function` on [0, 1)."""
    if not 0.0 <= i_a < 1.0:
        raise ValueError("mutual information must lie in [0, 1)")
    if i_a == 0.0:
        return 0.0
    lo, hi = 1e-6, 60.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if j_function(mid) < i_a:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def synthesize_prior_llrs(bits, i_a: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian-consistent a-priori LLRs carrying mutual information ``i_a``."""
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    sigma = j_inverse(i_a)
    signs = 1.0 - 2.0 * bits.astype(float)
    return sigma**2 / 2.0 * signs + sigma * rng.standard_normal(bits.size)


def mutual_information_from_llrs(llrs, bits) -> float:
    """Averaging estimator of the information the LLRs carry about the bits."""
    llrs = np.clip(np.asarray(llrs, dtype=float).ravel(), -LLR_CLIP, LLR_CLIP)
    signs = 1.0 - 2.0 * np.asarray(bits, dtype=float).ravel()
    loss = np.logaddexp(0.0, -llrs * signs) / np.log(2.0)
    return float(min(1.0, max(0.0, 1.0 - np.mean(loss))))


def detector_exit_point(
    kind: str,
    realization: ChannelRealization,
    constellation: Constellation,
    i_a: float,
    rng: np.random.Generator,
    detector_options=None,
    noise_precision: float | None = None,
) -> float:
    """One detector activation on a fresh frame with synthetic priors."""
    h = realization.data_channel_dense()
    n_sym = h.shape[1]
    bits = rng.integers(0, 2, size=n_sym * constellation.bits_per_symbol).astype(np.uint8)
    x = constellation.map_bits(bits)
    frame = assemble_frame(x, realization.cfg)
    y = apply_channel(frame.vector, realization, rng).received
    prior_llrs = synthesize_prior_llrs(bits, i_a, rng) if i_a > 0 else np.zeros(bits.size)
    priors = llr_to_symbol_priors(prior_llrs, constellation) if i_a > 0 else None
    try:
        if kind == "amp":
            result = detectors.amp_detect(
                y, h, realization.noise_precision, constellation,
                options=detector_options, priors=priors,
            )
        elif kind == "vamp-em":
            result = detectors.vamp_em_detect(
                y, h, constellation,
                options=detector_options, noise_precision=noise_precision,
                priors=priors, svd=realization.data_svd(),
            )
        else:
            raise ValueError(f"detector must be 'amp' or 'vamp-em', got {kind!r}")
    except detectors.DetectorDivergence as err:
        if err.result is None:
            return 0.0
        result = err.result
    ext = symbols_to_extrinsic_llr(
        result.extrinsic_mean,
        result.extrinsic_variance,
        prior_llrs if i_a > 0 else None,
        constellation,
    )
    return mutual_information_from_llrs(ext, bits)


def detector_exit_curve(
    kind: str,
    realizations,
    constellation: Constellation,
    i_a_grid,
    rng: np.random.Generator,
    detector_options=None,
    noise_precision: float | None = None,
) -> list[ExitPoint]:
    """Median transfer curve of a detector over a channel ensemble."""
    points = []
    for i_a in i_a_grid:
        samples = [
            detector_exit_point(
                kind, real, constellation, float(i_a), rng,
                detector_options=detector_options, noise_precision=noise_precision,
            )
            for real in realizations
        ]
        points.append(ExitPoint(i_a=float(i_a), i_e=float(np.median(samples)), component="detector"))
    return points


def decoder_exit_curve(
    code: LdpcCode,
    i_a_grid,
    rng: np.random.Generator,
    inner_iterations: int = 4,
    blocks_per_point: int = 4,
) -> list[ExitPoint]:
    """Transfer curve of the sum-product decoder fed only a-priori LLRs."""
    points = []
    for i_a in i_a_grid:
        measures = []
        for _ in range(blocks_per_point):
            info = rng.integers(0, 2, size=code.message_length).astype(np.uint8)
            word = ldpc_encode(info, code)
            llrs = synthesize_prior_llrs(word, float(i_a), rng)
            _, posterior, _ = ldpc_decode_spa(llrs, code, inner_iterations)
            extrinsic = np.clip(posterior - np.clip(llrs, -LLR_CLIP, LLR_CLIP), -LLR_CLIP, LLR_CLIP)
            measures.append(mutual_information_from_llrs(extrinsic, word))
        points.append(ExitPoint(i_a=float(i_a), i_e=float(np.mean(measures)), component="decoder"))
    return points
