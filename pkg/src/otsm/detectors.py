"""Symbol detectors for y = H x + n over a discrete alphabet.

Four estimators share the interface: exhaustive maximum-likelihood
search, a ridge-regularised linear (LMMSE) solve, scalar message
passing with an Onsager-corrected residual (AMP), and vector message
passing on the SVD of H with expectation-maximisation noise learning,
per-message precision re-estimation, and damping (VAMP-EM).  The
message-passing detectors expose extrinsic means/variances so a soft
decoder can close a turbo loop, and accept per-symbol prior
probability tables from such a loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .modem import Constellation

PRECISION_FLOOR = 1e-11
_VARIANCE_FLOOR = 1e-30


class DetectorDivergence(RuntimeError):
    """Raised when an iterative detector produces non-finite state.

    Carries the last finite result so a caller can still count the
    frame (flagged as diverged) instead of losing it.
    """

    def __init__(self, message: str, result: "DetectorResult"):
        super().__init__(message)
        self.result = result


@dataclass
class DetectorResult:
    """Hard decisions plus the soft outputs a turbo loop consumes."""

    indices: np.ndarray
    symbols: np.ndarray
    extrinsic_mean: np.ndarray
    extrinsic_variance: np.ndarray
    iterations: int = 1
    noise_precision: float | None = None
    history: list[np.ndarray] | None = None


@dataclass
class AmpOptions:
    max_iterations: int = 6
    tolerance: float = 1e-10
    record_history: bool = False


@dataclass
class VampOptions:
    max_iterations: int = 4
    denoiser_iterations: int = 2
    lmmse_iterations: int = 1
    damping: float = 0.8
    tolerance: float = 1e-10
    auto_tune: bool = True
    precision_floor: float = PRECISION_FLOOR
    record_history: bool = False

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValueError(f"damping must lie in (0, 1], got {self.damping}")
        if self.denoiser_iterations < 1 or self.lmmse_iterations < 1:
            raise ValueError("inner iteration counts must be >= 1")


def _log_priors(priors, count: int, order: int) -> np.ndarray:
    if priors is None:
        return np.zeros((count, order))
    priors = np.asarray(priors, dtype=float)
    if priors.shape != (count, order):
        raise ValueError(f"prior table must be {(count, order)}, got {priors.shape}")
    sums = priors.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ValueError("prior rows must sum to 1")
    with np.errstate(divide="ignore"):
        return np.log(priors)


def _denoiser_probs(means, precisions, points, log_priors) -> np.ndarray:
    """Posterior symbol probabilities for Gaussian observations of the alphabet.

    Works in the log domain with per-row max subtraction so very high
    precisions cannot underflow.
    """
    means = np.asarray(means, dtype=complex)
    precisions = np.broadcast_to(np.asarray(precisions, dtype=float), means.shape)
    logits = log_priors - precisions[:, None] * np.abs(means[:, None] - points[None, :]) ** 2
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    return probs


def _posterior_moments(probs, points):
    mean = probs @ points
    var = np.sum(probs * np.abs(points[None, :] - mean[:, None]) ** 2, axis=1)
    return mean, var


def denoise_posterior(means, variances, constellation: Constellation, priors=None):
    """Exact per-component Bayes posterior of a discrete symbol in Gaussian noise.

    ``variances`` broadcasts over components and may be infinite (an
    uninformative observation).  Returns (posterior means, posterior
    variances).
    """
    means = np.asarray(means, dtype=complex).ravel()
    variances = np.broadcast_to(np.asarray(variances, dtype=float), means.shape)
    if np.any(variances <= 0):
        raise ValueError("observation variances must be positive")
    with np.errstate(divide="ignore"):
        precisions = np.where(np.isinf(variances), 0.0, 1.0 / variances)
    log_p = _log_priors(priors, means.size, constellation.order)
    probs = _denoiser_probs(means, precisions, constellation.points, log_p)
    return _posterior_moments(probs, constellation.points)


def _as_operator(matrix):
    """Return (H, |H|^2, H^H, |H^H|^2) keeping sparse inputs sparse."""
    if sp.issparse(matrix):
        h = matrix.tocsr()
        habs2 = h.multiply(h.conj()).real.tocsr()
        return h, habs2, h.conj().T.tocsr(), habs2.T.tocsr()
    h = np.asarray(matrix, dtype=complex)
    habs2 = np.abs(h) ** 2
    return h, habs2, h.conj().T, habs2.T


def _result_from_probs(probs, points, ext_mean, ext_var, iterations, noise_precision=None, history=None):
    idx = np.argmax(probs, axis=1)
    ext_var = np.broadcast_to(np.asarray(ext_var, dtype=float), idx.shape).copy()
    return DetectorResult(
        indices=idx,
        symbols=points[idx],
        extrinsic_mean=np.asarray(ext_mean, dtype=complex).copy(),
        extrinsic_variance=ext_var,
        iterations=iterations,
        noise_precision=noise_precision,
        history=history,
    )


def ml_detect(y, matrix, constellation: Constellation, max_candidates: int = 1 << 16) -> np.ndarray:
    """Exhaustive minimum-distance search over the full alphabet power.

    Candidates are enumerated in lexicographic symbol-index order, so
    distance ties resolve to the lexicographically smallest sequence.
    Refuses search spaces above ``max_candidates``.
    """
    y = np.asarray(y, dtype=complex).ravel()
    h = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix, dtype=complex)
    n_sym = h.shape[1]
    total = constellation.order ** n_sym
    if total > max_candidates:
        raise ValueError(
            f"search space {constellation.order}^{n_sym} = {total} exceeds cap {max_candidates}"
        )
    idx = _candidate_indices(constellation.order, n_sym)
    candidates = constellation.points[idx]
    residual = y[:, None] - h @ candidates.T
    best = int(np.argmin(np.sum(np.abs(residual) ** 2, axis=0)))
    return candidates[best].copy()


@lru_cache(maxsize=32)
def _candidate_indices(order: int, n_sym: int) -> np.ndarray:
    rows = order**n_sym
    weights = order ** np.arange(n_sym - 1, -1, -1, dtype=np.int64)
    idx = (np.arange(rows)[:, None] // weights[None, :]) % order
    idx = idx.astype(np.uint8)
    idx.setflags(write=False)
    return idx


def lmmse_detect(y, matrix, gamma_s: float, constellation: Constellation) -> DetectorResult:
    """Ridge-regularised linear estimate with nearest-point decisions."""
    if gamma_s <= 0:
        raise ValueError("symbol SNR must be positive")
    y = np.asarray(y, dtype=complex).ravel()
    h = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix, dtype=complex)
    gram = h.conj().T @ h + (1.0 / gamma_s) * np.eye(h.shape[1])
    cov = np.linalg.inv(gram) / gamma_s
    x_hat = np.linalg.solve(gram, h.conj().T @ y)
    idx = constellation.hard_decide(x_hat)
    return DetectorResult(
        indices=idx,
        symbols=constellation.points[idx],
        extrinsic_mean=x_hat,
        extrinsic_variance=np.maximum(np.real(np.diag(cov)), _VARIANCE_FLOOR),
        iterations=1,
    )


def amp_detect(
    y,
    matrix,
    noise_precision: float,
    constellation: Constellation,
    options: AmpOptions | None = None,
    priors=None,
) -> DetectorResult:
    """Scalar message passing with Onsager-corrected residuals.

    Alternates the exact symbol denoiser with a componentwise linear
    stage; the residual keeps a memory term that decorrelates the two.
    The noise precision is assumed known.  Extrinsic outputs are the
    final denoiser inputs (r, v_r).
    """
    opts = options or AmpOptions()
    if noise_precision <= 0:
        raise ValueError("noise precision must be positive")
    y = np.asarray(y, dtype=complex).ravel()
    h, habs2, hh, hhabs2 = _as_operator(matrix)
    n_obs, n_sym = h.shape
    points = constellation.points
    log_p = _log_priors(priors, n_sym, constellation.order)

    r = np.zeros(n_sym, dtype=complex)
    v_r = np.ones(n_sym)
    s = np.zeros(n_obs, dtype=complex)
    x_prev = None
    probs = None
    history = [] if opts.record_history else None
    last_good = None
    iterations = 0

    for t in range(1, opts.max_iterations + 1):
        probs = _denoiser_probs(r, 1.0 / v_r, points, log_p)
        x_hat, v_x = _posterior_moments(probs, points)
        if not (np.all(np.isfinite(x_hat)) and np.all(np.isfinite(v_x))):
            raise DetectorDivergence(f"non-finite denoiser state at iteration {t}", last_good)
        last_good = _result_from_probs(probs, points, r, v_r, t - 1)
        if history is not None:
            history.append(np.argmax(probs, axis=1))

        v_p = habs2 @ v_x
        p = h @ x_hat - v_p * s
        v_s = 1.0 / (v_p + 1.0 / noise_precision)
        s = v_s * (y - p)
        v_r = 1.0 / np.maximum(hhabs2 @ v_s, _VARIANCE_FLOOR)
        r = x_hat + v_r * (hh @ s)
        iterations = t
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(v_r))):
            raise DetectorDivergence(f"non-finite residual state at iteration {t}", last_good)

        if x_prev is not None:
            ref = np.sum(np.abs(x_prev) ** 2)
            if ref > 0 and np.sum(np.abs(x_hat - x_prev) ** 2) < opts.tolerance * ref:
                break
        x_prev = x_hat

    return _result_from_probs(probs, points, r, v_r, iterations, history=history)


def vamp_lmmse_stage(r2, gamma2: float, noise_precision: float, svd, y):
    """Linear stage evaluated through the SVD, avoiding a matrix inverse.

    Returns the conditional mean and the averaged divergence
    alpha = mean(gamma2 / (gamma_n s_j^2 + gamma2)) in (0, 1].
    """
    u, s_vals, vh = svd
    r2 = np.asarray(r2, dtype=complex).ravel()
    y = np.asarray(y, dtype=complex).ravel()
    denom = noise_precision * s_vals**2 + gamma2
    y_bar = noise_precision * s_vals * (u.conj().T @ y)
    x2 = vh.conj().T @ ((y_bar + gamma2 * (vh @ r2)) / denom)
    alpha = float(np.mean(gamma2 / denom))
    return x2, alpha


def em_noise_update(y, matrix, x2, gamma2: float, noise_precision_prev: float, singular_values):
    """One expectation-maximisation step for the noise precision.

    The reciprocal of the updated precision averages the data residual
    plus the posterior-uncertainty correction summed over the channel
    rank.
    """
    y = np.asarray(y, dtype=complex).ravel()
    h = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix, dtype=complex)
    s_vals = np.asarray(singular_values, dtype=float)
    rank_mask = s_vals > 1e-12 * max(s_vals.max(initial=0.0), _VARIANCE_FLOOR)
    s2 = s_vals[rank_mask] ** 2
    residual = np.sum(np.abs(y - h @ np.asarray(x2, dtype=complex).ravel()) ** 2)
    correction = np.sum(s2 / (noise_precision_prev * s2 + gamma2))
    inv = (residual + correction) / y.size
    return 1.0 / max(inv, _VARIANCE_FLOOR)


def vamp_em_detect(
    y,
    matrix,
    constellation: Constellation,
    options: VampOptions | None = None,
    noise_precision: float | None = None,
    priors=None,
    svd=None,
) -> DetectorResult:
    """Vector message passing on the SVD of H with noise learning.

    Outer iterations alternate a denoiser block (symbol posterior plus
    precision re-estimation) with a linear block (SVD-form conditional
    mean, precision re-estimation, and, when the noise precision is
    unknown, its expectation-maximisation update).  Messages back to
    the denoiser are damped.  Extrinsic outputs are the final denoiser
    input r1 with variance 1/gamma1.
    """
    opts = options or VampOptions()
    y = np.asarray(y, dtype=complex).ravel()
    h = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix, dtype=complex)
    if svd is None:
        svd = np.linalg.svd(h, full_matrices=False)
    u, s_vals, vh = svd
    n_obs, n_sym = h.shape
    points = constellation.points
    log_p = _log_priors(priors, n_sym, constellation.order)
    floor = opts.precision_floor

    def clamp(value):
        return max(value, floor) if floor else value

    learn_noise = noise_precision is None
    gamma_n = n_obs / np.sum(np.abs(y) ** 2) if learn_noise else float(noise_precision)
    gamma1 = 0.0
    r1 = np.zeros(n_sym, dtype=complex)
    x1_prev = None
    probs = None
    history = [] if opts.record_history else None
    last_good = None
    iterations = 0

    for t in range(1, opts.max_iterations + 1):
        # Denoiser block: posterior moments, then re-estimate the input precision.
        for _ in range(opts.denoiser_iterations):
            probs = _denoiser_probs(r1, gamma1, points, log_p)
            x1, v_x1 = _posterior_moments(probs, points)
            eta1 = 1.0 / max(np.mean(v_x1), _VARIANCE_FLOOR)
            if opts.auto_tune:
                gamma1 = 1.0 / (np.mean(np.abs(x1 - r1) ** 2) + 1.0 / eta1)
        if not np.all(np.isfinite(x1)):
            raise DetectorDivergence(f"non-finite denoiser state at iteration {t}", last_good)
        last_good = _result_from_probs(
            probs, points, r1, 1.0 / max(gamma1, _VARIANCE_FLOOR), t - 1,
            noise_precision=gamma_n,
        )
        if history is not None:
            history.append(np.argmax(probs, axis=1))

        gamma2 = clamp(eta1 - gamma1)
        r2 = (eta1 * x1 - gamma1 * r1) / gamma2

        # Linear block through the SVD, with its own precision re-estimation
        # and the noise-precision update when gamma_n is being learned.  The
        # block's final state is indexed one past the nominal count, so the
        # body runs lmmse_iterations + 1 times; the message fed back below
        # pairs the last posterior with the last re-estimated precision (one
        # re-estimate behind), which keeps the recursion contractive where
        # an exactly-paired subtraction is not.
        for _ in range(opts.lmmse_iterations + 1):
            x2, alpha2 = vamp_lmmse_stage(r2, gamma2, gamma_n, svd, y)
            eta2 = gamma2 / alpha2
            if opts.auto_tune:
                gamma2_next = 1.0 / (np.mean(np.abs(x2 - r2) ** 2) + 1.0 / eta2)
            else:
                gamma2_next = gamma2
            if learn_noise:
                gamma_n = em_noise_update(y, h, x2, gamma2_next, gamma_n, s_vals)
            gamma2 = gamma2_next

        raw = eta2 - gamma2
        new_gamma1 = clamp(raw)
        gamma1 = (1.0 - opts.damping) * gamma1 + opts.damping * new_gamma1
        gamma1 = clamp(gamma1) if floor else gamma1
        r1 = (1.0 - opts.damping) * r1 + opts.damping * (eta2 * x2 - gamma2 * r2) / new_gamma1
        iterations = t
        if not (np.all(np.isfinite(r1)) and math.isfinite(gamma1) and math.isfinite(gamma_n)):
            raise DetectorDivergence(f"non-finite message state at iteration {t}", last_good)

        if x1_prev is not None:
            ref = np.sum(np.abs(x1_prev) ** 2)
            if ref > 0 and np.sum(np.abs(x1 - x1_prev) ** 2) < opts.tolerance * ref:
                break
        x1_prev = x1

    probs = _denoiser_probs(r1, gamma1, points, log_p)
    ext_var = 1.0 / max(gamma1, _VARIANCE_FLOOR)
    return _result_from_probs(
        probs, points, r1, ext_var, iterations,
        noise_precision=gamma_n, history=history,
    )
