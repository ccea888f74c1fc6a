"""Bit mapping and the delay-sequency modulation chain.

Symbols live on an L_D x N delay-sequency grid (zero-padded up to M
delay bins, or M x N for the cyclic-prefix frame variant).  The
transmit chain applies the Walsh-Hadamard transform along the sequency
axis and interleaves delay/sequency blocks with the perfect shuffle;
the whole chain is unitary, so the receive transform is its exact
inverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .transforms import fwht

SUPPORTED_ORDERS = (2, 4, 16, 64)


def _gray(i: int) -> int:
    return i ^ (i >> 1)


@lru_cache(maxsize=None)
def _axis_levels(bits: int) -> np.ndarray:
    """Amplitudes for a reflected-Gray-coded axis, most positive first.

    Position i of the Gray sequence gets amplitude (L-1) - 2i, so the
    all-zero label lands on the most positive level and neighbouring
    levels differ in exactly one bit.
    """
    levels = 1 << bits
    amps = np.empty(levels)
    for i in range(levels):
        amps[_gray(i)] = (levels - 1) - 2 * i
    amps.setflags(write=False)
    return amps


@dataclass(frozen=True)
class Constellation:
    """Unit-energy alphabet with Gray bit labels.

    ``points[k]`` carries the bit pattern ``labels[k]``; labels are the
    binary expansion of k (first half of the bits selects the in-phase
    level, second half the quadrature level; BPSK uses a single real
    axis with 0 -> +1).
    """

    order: int
    points: np.ndarray
    labels: np.ndarray

    @property
    def bits_per_symbol(self) -> int:
        return int(math.log2(self.order))

    @classmethod
    def from_order(cls, order: int) -> "Constellation":
        if order not in SUPPORTED_ORDERS:
            raise ValueError(f"unsupported constellation order {order}; choose from {SUPPORTED_ORDERS}")
        bits = int(math.log2(order))
        labels = ((np.arange(order)[:, None] >> np.arange(bits - 1, -1, -1)) & 1).astype(np.uint8)
        if order == 2:
            raw = _axis_levels(1).astype(complex)
        else:
            half = bits // 2
            i_amp = _axis_levels(half)
            q_amp = _axis_levels(half)
            i_idx = np.arange(order) >> half
            q_idx = np.arange(order) & ((1 << half) - 1)
            raw = i_amp[i_idx] + 1j * q_amp[q_idx]
        points = raw / np.sqrt(np.mean(np.abs(raw) ** 2))
        points.setflags(write=False)
        labels.setflags(write=False)
        return cls(order=order, points=points, labels=labels)

    def map_bits(self, bits: np.ndarray) -> np.ndarray:
        """Map a bit sequence to symbols; length must divide into labels."""
        bits = np.asarray(bits, dtype=np.uint8).ravel()
        b = self.bits_per_symbol
        if bits.size % b != 0:
            raise ValueError(f"bit count {bits.size} is not a multiple of {b}")
        groups = bits.reshape(-1, b)
        idx = groups @ (1 << np.arange(b - 1, -1, -1))
        return self.points[idx]

    def hard_decide(self, values: np.ndarray) -> np.ndarray:
        """Nearest-point indices; ties resolve to the lower index."""
        values = np.asarray(values).ravel()
        d = np.abs(values[:, None] - self.points[None, :])
        return np.argmin(d, axis=1)

    def bits_from_indices(self, indices: np.ndarray) -> np.ndarray:
        return self.labels[np.asarray(indices)].ravel()

    def demap_hard(self, values: np.ndarray) -> np.ndarray:
        """Nearest-point hard demapping back to bits."""
        return self.bits_from_indices(self.hard_decide(values))


@dataclass(frozen=True)
class OtsmConfig:
    """Frame geometry: delay bins, sequency bins, guard interval, alphabet."""

    m: int
    n: int
    guard: str = "zp"
    guard_length: int = 0
    delta_f_hz: float = 15e3
    constellation_order: int = 4

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"delay bins must be >= 1, got {self.m}")
        if self.n < 1 or (self.n & (self.n - 1)) != 0:
            raise ValueError(f"sequency bins must be a power of two, got {self.n}")
        if self.guard not in ("zp", "cp"):
            raise ValueError(f"guard must be 'zp' or 'cp', got {self.guard!r}")
        if self.guard_length < 0:
            raise ValueError("guard length must be non-negative")
        if self.guard == "zp" and self.m - self.guard_length < 1:
            raise ValueError(
                f"zero padding of {self.guard_length} leaves no data rows in {self.m} delay bins"
            )
        if self.delta_f_hz <= 0:
            raise ValueError("subcarrier spacing must be positive")
        if self.constellation_order not in SUPPORTED_ORDERS:
            raise ValueError(f"unsupported constellation order {self.constellation_order}")

    @property
    def frame_size(self) -> int:
        return self.m * self.n

    @property
    def data_delay_bins(self) -> int:
        return self.m - self.guard_length if self.guard == "zp" else self.m

    @property
    def data_symbols(self) -> int:
        """Number of payload symbols; they occupy the first entries of x."""
        return self.n * self.data_delay_bins

    @property
    def symbol_duration(self) -> float:
        return 1.0 / self.delta_f_hz

    @property
    def bandwidth_hz(self) -> float:
        return self.m * self.delta_f_hz

    @property
    def frame_duration(self) -> float:
        return self.n * self.symbol_duration

    def constellation(self) -> Constellation:
        return Constellation.from_order(self.constellation_order)


@dataclass(frozen=True)
class DsFrame:
    """Delay-sequency frame: payload, guarded vector, and matrix view.

    ``vector`` is laid out delay-major: entry m*N + n holds grid cell
    (delay m, sequency n), so payload symbols occupy the first
    N*L_D entries and zero-padded rows sit at the end.
    """

    config: OtsmConfig
    data: np.ndarray
    vector: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return self.vector.reshape(self.config.m, self.config.n)

    @property
    def data_matrix(self) -> np.ndarray:
        return self.data.reshape(self.config.data_delay_bins, self.config.n)


def assemble_frame(data: np.ndarray, cfg: OtsmConfig) -> DsFrame:
    data = np.asarray(data, dtype=complex).ravel()
    if data.size != cfg.data_symbols:
        raise ValueError(f"expected {cfg.data_symbols} payload symbols, got {data.size}")
    full = np.zeros((cfg.m, cfg.n), dtype=complex)
    full[: cfg.data_delay_bins, :] = data.reshape(cfg.data_delay_bins, cfg.n)
    return DsFrame(config=cfg, data=data, vector=full.reshape(-1))


def otsm_modulate(data, cfg: OtsmConfig) -> np.ndarray:
    """Delay-sequency payload -> time-domain samples (length M*N).

    Sequency rows are Walsh-transformed and the result is read out
    column-major, which realises the unitary shuffle/transform chain;
    the output norm equals the input norm.
    """
    frame = data if isinstance(data, DsFrame) else assemble_frame(data, cfg)
    delay_time = fwht(frame.matrix, axis=1)
    return delay_time.reshape(-1, order="F")


def otsm_receive_transform(samples: np.ndarray, cfg: OtsmConfig) -> np.ndarray:
    """Time-domain samples -> delay-sequency vector (exact chain inverse)."""
    samples = np.asarray(samples, dtype=complex).ravel()
    if samples.size != cfg.frame_size:
        raise ValueError(f"expected {cfg.frame_size} samples, got {samples.size}")
    delay_time = samples.reshape(cfg.m, cfg.n, order="F")
    return fwht(delay_time, axis=1).reshape(-1)


def frame_bits_capacity(cfg: OtsmConfig, rate: float = 1.0) -> int:
    """Information bits carried by one frame at code rate ``rate``."""
    if not 0 < rate <= 1:
        raise ValueError(f"code rate must be in (0, 1], got {rate}")
    coded = cfg.data_symbols * int(math.log2(cfg.constellation_order))
    exact = coded * rate
    rounded = round(exact)
    if abs(exact - rounded) > 1e-9:
        raise ValueError(f"rate {rate} does not yield an integer bit count for {coded} coded bits")
    return int(rounded)
