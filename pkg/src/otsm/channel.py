"""Time-varying multipath channels for delay-sequency frames.

Paths are described by a complex gain, a delay in grid bins, and a
Doppler index in sequency-rate bins.  From these the module builds the
banded time-domain channel matrix and its delay-sequency conjugation
(zero-padded frames), or the shift/phase-ramp product form used by the
cyclic-prefix analysis, and applies channel plus white Gaussian noise.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .modem import OtsmConfig
from .transforms import perfect_shuffle, wht_matrix

SPEED_OF_LIGHT = 299792458.0

# Standard nine-tap extended vehicular A power-delay profile.
EVA_EXCESS_DELAY_NS = (0.0, 30.0, 150.0, 310.0, 370.0, 710.0, 1090.0, 1730.0, 2510.0)
EVA_POWER_DB = (0.0, -1.5, -1.4, -3.6, -0.6, -9.1, -7.0, -12.0, -16.9)


@dataclass(frozen=True)
class DelayDopplerPath:
    """One propagation path: complex gain, delay bins, Doppler bins."""

    gain: complex
    delay: float
    doppler: float

    @property
    def has_integer_delay(self) -> bool:
        return abs(self.delay - round(self.delay)) < 1e-9

    @property
    def delay_index(self) -> int:
        if not self.has_integer_delay:
            raise ValueError(f"path delay {self.delay} is not an integer number of bins")
        return int(round(self.delay))


def complex_gaussian(rng: np.random.Generator, size, variance=1.0) -> np.ndarray:
    scale = np.sqrt(np.asarray(variance, dtype=float) / 2.0)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def sample_paths_uniform(
    count: int,
    l_max: int,
    k_max: int,
    rng: np.random.Generator,
    fractional_doppler: bool = False,
) -> list[DelayDopplerPath]:
    """Draw paths with i.i.d. CN(0, 1/P) gains on a uniform delay/Doppler grid.

    The first path sits at delay zero; the rest draw integer delays
    uniformly from 1..l_max (or zero when l_max == 0).  Doppler indices
    are uniform integers in [-k_max, k_max], optionally with a uniform
    fractional offset in [-1/2, 1/2].
    """
    if count < 1:
        raise ValueError("path count must be >= 1")
    if l_max < 0:
        raise ValueError(f"maximum delay index must be non-negative, got {l_max}")
    if k_max < 0:
        raise ValueError(f"maximum Doppler index must be non-negative, got {k_max}")
    gains = complex_gaussian(rng, count, variance=1.0 / count)
    delays = np.zeros(count)
    if l_max > 0 and count > 1:
        delays[1:] = rng.integers(1, l_max + 1, size=count - 1)
    dopplers = rng.integers(-k_max, k_max + 1, size=count).astype(float)
    if fractional_doppler:
        dopplers = dopplers + rng.uniform(-0.5, 0.5, size=count)
    return [DelayDopplerPath(g, d, k) for g, d, k in zip(gains, delays, dopplers)]


def max_doppler_index(speed_kmh: float, carrier_hz: float, n: int, delta_f_hz: float) -> float:
    """Largest Doppler bin index for a given speed and frame geometry."""
    doppler_hz = (speed_kmh / 3.6) * carrier_hz / SPEED_OF_LIGHT
    return doppler_hz * n / delta_f_hz


def sample_paths_eva(
    speed_kmh: float,
    carrier_hz: float,
    delta_f_hz: float,
    m: int,
    n: int,
    rng: np.random.Generator,
    fractional_doppler: bool = True,
    max_delay_bins: int | None = None,
) -> list[DelayDopplerPath]:
    """Nine-path EVA realization with Jakes-spectrum Doppler.

    Tap delays are quantised to the 1/(M delta_f) grid (several taps may
    share a bin; their contributions add when the channel matrix is
    built).  Each path gets Doppler k = k_max * cos(phi) with phi
    uniform; pass ``fractional_doppler=False`` to round to integer bins.
    """
    if speed_kmh <= 0:
        raise ValueError("speed must be positive")
    delays_s = np.asarray(EVA_EXCESS_DELAY_NS) * 1e-9
    bins = np.round(delays_s * m * delta_f_hz).astype(int)
    if max_delay_bins is not None and bins.max() > max_delay_bins:
        raise ValueError(
            f"EVA delay spread needs {bins.max()} bins but only {max_delay_bins} fit the guard"
        )
    powers = 10.0 ** (np.asarray(EVA_POWER_DB) / 10.0)
    powers = powers / powers.sum()
    gains = complex_gaussian(rng, len(bins), variance=powers)
    k_max = max_doppler_index(speed_kmh, carrier_hz, n, delta_f_hz)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=len(bins))
    dopplers = k_max * np.cos(phases)
    if not fractional_doppler:
        dopplers = np.round(dopplers)
    return [DelayDopplerPath(g, float(d), float(k)) for g, d, k in zip(gains, bins, dopplers)]


def _check_zp_paths(paths: Sequence[DelayDopplerPath], cfg: OtsmConfig) -> None:
    l_limit = cfg.guard_length - 1
    for p in paths:
        if not p.has_integer_delay:
            raise ValueError(
                f"zero-padded frames support integer delay bins only, got {p.delay}"
            )
        if p.delay_index > l_limit:
            raise ValueError(
                f"path delay {p.delay_index} exceeds the guard ({cfg.guard_length} bins)"
            )


def build_time_domain_channel(paths: Sequence[DelayDopplerPath], cfg: OtsmConfig) -> sp.csr_matrix:
    """Banded MN x MN time-domain channel for zero-padded frames.

    Entry (q, q-l) holds sum_i h_i z_i^(q-l) over paths with delay l,
    z_i = exp(j 2 pi k_i / MN); rows with q < l have no contribution
    (no inter-frame memory thanks to the zero padding).
    """
    _check_zp_paths(paths, cfg)
    size = cfg.frame_size
    rows, cols, vals = [], [], []
    q = np.arange(size)
    for p in paths:
        l = p.delay_index
        z = np.exp(2j * np.pi * p.doppler / size)
        qs = q[l:]
        rows.append(qs)
        cols.append(qs - l)
        vals.append(p.gain * z ** (qs - l))
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(size, size),
        dtype=complex,
    )
    return mat.tocsr()


def _block_wht(cfg: OtsmConfig) -> sp.csr_matrix:
    w = wht_matrix(cfg.n)
    return sp.block_diag([w] * cfg.m, format="csr").astype(complex)


def build_ds_channel_zp(h_time: sp.spmatrix, cfg: OtsmConfig) -> sp.csr_matrix:
    """Conjugate the time-domain channel into the delay-sequency domain.

    The similarity transform is exact; with zero padding the payload
    never touches the wrapped (upper block) entries.
    """
    shuffle = perfect_shuffle(cfg.m, cfg.n)
    permuted = shuffle.conjugate(h_time)
    w_blocks = _block_wht(cfg)
    return (w_blocks @ permuted @ w_blocks).tocsr()


def cyclic_shift_indices(size: int, shift: int) -> np.ndarray:
    """Index array for the forward cyclic shift: out[q] = in[(q - shift) mod size]."""
    return (np.arange(size) - shift) % size


def build_ds_channel_cp(
    paths: Sequence[DelayDopplerPath], cfg: OtsmConfig
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Delay-sequency channel and per-path factors for cyclic-prefix frames.

    Returns (H, [D_1 .. D_P]) with H = sum_i h_i D_i, where D_i combines
    the cyclic delay shift and the Doppler phase ramp, conjugated by the
    shuffle/transform chain.  Doppler indices may be fractional; delays
    must be integers.
    """
    size = cfg.frame_size
    shuffle = perfect_shuffle(cfg.m, cfg.n)
    w_blocks = _block_wht(cfg).toarray()
    q = np.arange(size)
    factors = []
    total = np.zeros((size, size), dtype=complex)
    for p in paths:
        if not p.has_integer_delay:
            raise ValueError(f"cyclic-prefix frames support integer delays only, got {p.delay}")
        ramp = np.exp(2j * np.pi * q * p.doppler / size)
        shifted = np.diag(ramp)[cyclic_shift_indices(size, p.delay_index), :]
        inner = shuffle.conjugate(shifted)
        d = w_blocks @ inner @ w_blocks
        factors.append(d)
        total += p.gain * d
    return total, factors


class ChannelOutput(NamedTuple):
    received: np.ndarray
    gain_estimates: np.ndarray


class ChannelRealization:
    """One channel draw plus the matrices and factorisations derived from it.

    Derived objects (time/DS matrices, the dense payload submatrix and
    its SVD) are built on first use and cached; the object is treated as
    immutable afterwards, so it is safe to share across workers.
    """

    def __init__(
        self,
        paths: Sequence[DelayDopplerPath],
        cfg: OtsmConfig,
        noise_precision: float,
        csi_error_var: float = 0.0,
    ):
        if noise_precision <= 0:
            raise ValueError("noise precision must be positive")
        if csi_error_var < 0:
            raise ValueError("channel-estimate error variance must be non-negative")
        self.paths = list(paths)
        self.cfg = cfg
        self.noise_precision = float(noise_precision)
        self.csi_error_var = float(csi_error_var)
        self._cache: dict = {}

    @property
    def gains(self) -> np.ndarray:
        return np.array([p.gain for p in self.paths])

    @property
    def noise_variance(self) -> float:
        return 1.0 / self.noise_precision

    def _cached(self, key, builder):
        if key not in self._cache:
            self._cache[key] = builder()
        return self._cache[key]

    def time_channel(self) -> sp.csr_matrix:
        return self._cached("time", lambda: build_time_domain_channel(self.paths, self.cfg))

    def ds_channel(self):
        if self.cfg.guard == "zp":
            return self._cached("ds", lambda: build_ds_channel_zp(self.time_channel(), self.cfg))
        return self._cached("ds", lambda: build_ds_channel_cp(self.paths, self.cfg)[0])

    def per_path_factors(self) -> list[np.ndarray]:
        if self.cfg.guard != "cp":
            raise ValueError("per-path factors are defined for cyclic-prefix frames")
        return self._cached("factors", lambda: build_ds_channel_cp(self.paths, self.cfg)[1])

    def data_channel_dense(self) -> np.ndarray:
        """Dense MN x J matrix restricted to payload columns."""

        def build():
            h = self.ds_channel()
            h = h.toarray() if sp.issparse(h) else np.asarray(h)
            return np.ascontiguousarray(h[:, : self.cfg.data_symbols])

        return self._cached("data_dense", build)

    def data_svd(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self._cached(
            "svd", lambda: np.linalg.svd(self.data_channel_dense(), full_matrices=False)
        )

    def with_noise_precision(self, noise_precision: float) -> "ChannelRealization":
        other = ChannelRealization(self.paths, self.cfg, noise_precision, self.csi_error_var)
        other._cache = self._cache
        return other


def apply_channel(
    x: np.ndarray,
    realization: ChannelRealization,
    rng: np.random.Generator,
    domain: str = "ds",
    noiseless: bool = False,
) -> ChannelOutput:
    """Propagate a frame: channel matrix times input plus CN(0, 1/gamma_n) noise.

    ``domain`` selects the time-domain matrix ("time") or the
    delay-sequency matrix ("ds"); the unitary receive chain preserves
    the noise statistics, so both use the same noise precision.  When
    the realization carries a channel-estimate error variance, the
    returned gain estimates are the true gains plus CN(0, sigma_h^2)
    perturbations; otherwise they are the true gains.
    """
    x = np.asarray(x, dtype=complex).ravel()
    if domain == "time":
        h = realization.time_channel()
    elif domain == "ds":
        h = realization.ds_channel()
    else:
        raise ValueError(f"domain must be 'time' or 'ds', got {domain!r}")
    size = h.shape[1]
    if x.size != size:
        raise ValueError(f"expected input of length {size}, got {x.size}")
    received = h @ x
    if not noiseless:
        received = received + complex_gaussian(rng, received.size, realization.noise_variance)
    gains = realization.gains
    if realization.csi_error_var > 0:
        gains = gains + complex_gaussian(rng, gains.size, realization.csi_error_var)
    return ChannelOutput(received=received, gain_estimates=gains)


def paths_to_text(paths: Sequence[DelayDopplerPath]) -> str:
    """Serialise paths as 'gain_re gain_im delay doppler' lines."""
    out = io.StringIO()
    out.write("# gain_re gain_im delay doppler\n")
    for p in paths:
        out.write(f"{p.gain.real!r} {p.gain.imag!r} {p.delay!r} {p.doppler!r}\n")
    return out.getvalue()


def paths_from_text(text: str) -> list[DelayDopplerPath]:
    paths = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 4:
            raise ValueError(f"expected 4 fields per path line, got {len(fields)}: {line!r}")
        re_g, im_g, delay, doppler = map(float, fields)
        paths.append(DelayDopplerPath(complex(re_g, im_g), delay, doppler))
    return paths
