"""Soft conversion between detector symbol estimates and bit LLRs.

Sign convention throughout: positive LLR means bit 0.  Values are
clipped to +-30 so tanh/exp arithmetic stays exact in double
precision.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from ..modem import Constellation
from .ldpc import LLR_CLIP


def _clip(llrs):
    return np.clip(llrs, -LLR_CLIP, LLR_CLIP)


def symbols_to_extrinsic_llr(
    ext_mean,
    ext_var,
    prior_llrs,
    constellation: Constellation,
) -> np.ndarray:
    """Per-bit extrinsic LLRs from Gaussian symbol estimates.

    Each symbol estimate is treated as the true symbol plus complex
    Gaussian noise of variance ``ext_var`` (scalar or per symbol).  The
    numerator/denominator sums run over alphabet points partitioned by
    the target bit, each point weighted by the priors of its *other*
    bits, so the a-priori information of the target bit never leaks
    into the output.
    """
    mean = np.asarray(ext_mean, dtype=complex).ravel()
    n_sym = mean.size
    bits = constellation.bits_per_symbol
    var = np.broadcast_to(np.asarray(ext_var, dtype=float), mean.shape)
    var = np.maximum(var, 1e-30)
    if prior_llrs is None:
        prior_llrs = np.zeros(n_sym * bits)
    priors = _clip(np.asarray(prior_llrs, dtype=float).reshape(n_sym, bits))

    # log P(bit = 0 / 1) from the LLR, computed stably.
    lp0 = -np.logaddexp(0.0, -priors)
    lp1 = -np.logaddexp(0.0, priors)
    labels = constellation.labels.astype(float)  # (K, bits)
    # Symbol log-prior: sum over bit positions of the matching bit probability.
    symbol_lp = lp0 @ (1.0 - labels).T + lp1 @ labels.T  # (J, K)
    gauss = -np.abs(mean[:, None] - constellation.points[None, :]) ** 2 / var[:, None]

    out = np.empty((n_sym, bits))
    for n in range(bits):
        per_bit_lp = np.where(constellation.labels[:, n] == 0, lp0[:, [n]], lp1[:, [n]])
        metric = gauss + symbol_lp - per_bit_lp
        zero_set = constellation.labels[:, n] == 0
        out[:, n] = logsumexp(metric[:, zero_set], axis=1) - logsumexp(metric[:, ~zero_set], axis=1)
    return _clip(out.ravel())


def llr_to_symbol_priors(prior_llrs, constellation: Constellation) -> np.ndarray:
    """Per-symbol probability table from independent per-bit LLRs.

    Row j holds P(x_j = a_k) as the product over bit positions of
    (1 + s * tanh(L/2)) / 2 with s = +1 for a label bit of 0 and -1
    for 1; rows sum to one exactly.
    """
    bits = constellation.bits_per_symbol
    priors = _clip(np.asarray(prior_llrs, dtype=float))
    if priors.size % bits != 0:
        raise ValueError(f"LLR count {priors.size} is not a multiple of {bits}")
    priors = priors.reshape(-1, bits)
    t = np.tanh(priors / 2.0)  # (J, bits)
    signs = 1.0 - 2.0 * constellation.labels.astype(float)  # (K, bits)
    table = np.prod(0.5 * (1.0 + signs[None, :, :] * t[:, None, :]), axis=2)
    return table
