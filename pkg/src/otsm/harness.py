"""Simulation orchestration: strict configuration, Monte Carlo sweeps,
analytical bound curves, transfer-chart runs, and result persistence.

Every random quantity in a sweep derives from (master seed, SNR index,
frame index) through a counter-based seed sequence, so results are
identical across reruns and worker counts; per-point counters are
integer sums, which makes the reduction order irrelevant.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import analysis, detectors
from . import channel as chan
from .coded import (
    decoder_exit_curve,
    deinterleave,
    detector_exit_curve,
    interleave,
    ldpc_encode,
    make_interleaver,
    make_regular_code,
    turbo_receive,
)
from .coded.exit_chart import ExitPoint, mutual_information_from_llrs
from .coded.ldpc import LLR_CLIP, ldpc_decode_spa
from .coded.llr import llr_to_symbol_priors, symbols_to_extrinsic_llr
from .modem import Constellation, OtsmConfig, assemble_frame, frame_bits_capacity

_BATCH_FRAMES = 64

try:  # version string recorded in run manifests
    from importlib.metadata import version as _pkg_version

    _VERSION = _pkg_version("otsm")
except Exception:  # pragma: no cover - metadata missing in odd installs
    _VERSION = "0.1.0+untracked"


class ConfigError(ValueError):
    """Configuration rejected before any simulation work starts."""


_DEFAULTS = {
    "seed": 1,
    "otsm": {
        "m": 16,
        "n": 16,
        "guard": "zp",
        "guard_length": 4,
        "delta_f_hz": 60e3,
        "constellation_order": 4,
    },
    "channel": {
        "model": "uniform",
        "paths": 9,
        "l_max": 3,
        "k_max": 1,
        "fractional_doppler": False,
        "speed_kmh": 480.0,
        "carrier_hz": 16e9,
        "csi_error_var": 0.0,
        "noiseless": False,
    },
    "detector": {
        "kind": "vamp-em",
        "max_iterations": 0,  # 0 picks the per-detector default (6 scalar, 4 vector)
        "denoiser_iterations": 2,
        "lmmse_iterations": 1,
        "damping": 0.8,
        "tolerance": 1e-10,
        "auto_tune": True,
        "known_noise": False,
        "ml_cap": 65536,
    },
    "grid": {"kind": "ebn0", "values_db": [10.0]},
    "stopping": {"min_frame_errors": 100, "max_frames": 1000},
    "coding": {
        "enabled": False,
        "rate": 0.5,
        "inner_iterations": 4,
        "outer_iterations": 4,
        "interleaver_seed": 1,
    },
    "bound": {
        "mode": "rayleigh",
        "rician_factor": 0.0,
        "csi_error_var": 0.0,
        "snr_db": [0.0, 5.0, 10.0, 15.0, 20.0],
        "placements": "exhaustive",
        "draws": 100,
        "max_patterns": 5_000_000,
    },
    "exit": {
        "ebn0_db": 5.1,
        "i_a_grid": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
        "ensemble": 50,
        "detectors": ["amp", "vamp-em"],
        "trajectory_frames": 4,
        "trajectory_steps": 8,
    },
}


def _merge_strict(defaults, user, path=""):
    if not isinstance(user, dict):
        raise ConfigError(f"section {path or '<root>'} must be a mapping")
    merged = copy.deepcopy(defaults)
    for key, value in user.items():
        if key not in defaults:
            raise ConfigError(f"unknown configuration key {path + key!r}")
        if isinstance(defaults[key], dict):
            merged[key] = _merge_strict(defaults[key], value, path=f"{path}{key}.")
        else:
            merged[key] = value
    return merged


@dataclass(frozen=True)
class SimConfig:
    """Validated configuration; ``raw`` is the fully defaulted mapping."""

    raw: dict

    def canonical_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True)

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def otsm(self) -> OtsmConfig:
        o = self.raw["otsm"]
        return OtsmConfig(
            m=int(o["m"]),
            n=int(o["n"]),
            guard=o["guard"],
            guard_length=int(o["guard_length"]),
            delta_f_hz=float(o["delta_f_hz"]),
            constellation_order=int(o["constellation_order"]),
        )

    def __getitem__(self, key):
        return self.raw[key]


def validate_config(data: dict) -> SimConfig:
    merged = _merge_strict(_DEFAULTS, data)
    cfg = SimConfig(raw=merged)
    cfg.otsm()  # geometry sanity
    det = merged["detector"]
    if det["kind"] not in ("ml", "lmmse", "amp", "vamp-em"):
        raise ConfigError(f"unknown detector kind {det['kind']!r}")
    grid = merged["grid"]
    if grid["kind"] not in ("ebn0", "snr"):
        raise ConfigError(f"grid kind must be 'ebn0' or 'snr', got {grid['kind']!r}")
    values = grid["values_db"]
    if not values or list(values) != sorted(values):
        raise ConfigError("grid values must be a non-empty ascending list")
    stop = merged["stopping"]
    if stop["min_frame_errors"] < 1 or stop["max_frames"] < 1:
        raise ConfigError("stopping thresholds must be positive")
    ch = merged["channel"]
    if ch["model"] not in ("uniform", "eva"):
        raise ConfigError(f"channel model must be 'uniform' or 'eva', got {ch['model']!r}")
    return cfg


def parse_config_text(text: str) -> SimConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"config parse error at line {err.lineno}, column {err.colno}: {err.msg}")
    return validate_config(data)


def parse_config(path) -> SimConfig:
    with open(path) as fh:
        return parse_config_text(fh.read())


def noise_precision_from_db(value_db: float, kind: str, rate: float, bits_per_symbol: int) -> float:
    """Convert a grid point to the linear noise precision.

    Unit-energy symbols make the per-symbol SNR equal the noise
    precision; an Eb/N0 point additionally charges the code rate and
    bits per symbol (guard overhead is not charged).
    """
    linear = 10.0 ** (value_db / 10.0)
    if kind == "ebn0":
        return linear * rate * bits_per_symbol
    return linear


# ---------------------------------------------------------------------------
# Monte Carlo sweep


@dataclass
class PointStats:
    value_db: float
    noise_precision: float
    frames: int = 0
    bits: int = 0
    bit_errors: int = 0
    frame_errors: int = 0
    diverged: int = 0
    iterations_total: int = 0
    wall_seconds: float = 0.0

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits if self.bits else 0.0

    @property
    def ci95_half_width(self) -> float:
        if self.bits == 0:
            return 0.0
        p = self.ber
        return 1.96 * math.sqrt(max(p * (1.0 - p), 0.0) / self.bits)

    @property
    def mean_iterations(self) -> float:
        return self.iterations_total / self.frames if self.frames else 0.0


@dataclass
class MonteCarloReport:
    config: SimConfig
    points: list[PointStats] = field(default_factory=list)

    def csv_text(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out)
        writer.writerow(
            [
                "value_db",
                "grid_kind",
                "noise_precision",
                "frames",
                "bits",
                "bit_errors",
                "frame_errors",
                "ber",
                "ci95_half_width",
                "diverged",
                "mean_iterations",
            ]
        )
        kind = self.config["grid"]["kind"]
        for p in self.points:
            writer.writerow(
                [
                    f"{p.value_db:.6g}",
                    kind,
                    f"{p.noise_precision:.12e}",
                    p.frames,
                    p.bits,
                    p.bit_errors,
                    p.frame_errors,
                    f"{p.ber:.12e}",
                    f"{p.ci95_half_width:.6e}",
                    p.diverged,
                    f"{p.mean_iterations:.6f}",
                ]
            )
        return out.getvalue()

    def manifest_text(self) -> str:
        body = {
            "version": _VERSION,
            "seed": self.config.seed,
            "wall_seconds": {f"{p.value_db:g}": round(p.wall_seconds, 3) for p in self.points},
            "config": self.config.raw,
        }
        return json.dumps(body, indent=2, sort_keys=True)

    def write(self, csv_path) -> None:
        with open(csv_path, "w", newline="") as fh:
            fh.write(self.csv_text())
        with open(f"{csv_path}.manifest.json", "w") as fh:
            fh.write(self.manifest_text())


@dataclass
class _Context:
    sim: SimConfig
    otsm: OtsmConfig
    constellation: Constellation
    code: object | None
    interleaver: np.ndarray | None

    @property
    def coded(self) -> bool:
        return self.code is not None


def _build_context(sim: SimConfig) -> _Context:
    otsm_cfg = sim.otsm()
    constellation = otsm_cfg.constellation()
    code = None
    interleaver = None
    coding = sim["coding"]
    if coding["enabled"]:
        block = frame_bits_capacity(otsm_cfg)
        code = make_regular_code(block, float(coding["rate"]))
        interleaver = make_interleaver(block, int(coding["interleaver_seed"]))
    return _Context(
        sim=sim, otsm=otsm_cfg, constellation=constellation, code=code, interleaver=interleaver
    )


@lru_cache(maxsize=4)
def _cached_context(canonical_json: str) -> _Context:
    return _build_context(validate_config(json.loads(canonical_json)))


def _sample_paths(ctx: _Context, rng: np.random.Generator):
    ch = ctx.sim["channel"]
    if ch["model"] == "uniform":
        return chan.sample_paths_uniform(
            int(ch["paths"]),
            int(ch["l_max"]),
            int(ch["k_max"]),
            rng,
            fractional_doppler=bool(ch["fractional_doppler"]),
        )
    guard_cap = ctx.otsm.guard_length - 1 if ctx.otsm.guard == "zp" else None
    return chan.sample_paths_eva(
        float(ch["speed_kmh"]),
        float(ch["carrier_hz"]),
        ctx.otsm.delta_f_hz,
        ctx.otsm.m,
        ctx.otsm.n,
        rng,
        fractional_doppler=bool(ch["fractional_doppler"]),
        max_delay_bins=guard_cap,
    )


def _detector_options(ctx: _Context):
    det = ctx.sim["detector"]
    kind = det["kind"]
    if kind == "amp":
        iters = int(det["max_iterations"]) or 6
        return detectors.AmpOptions(max_iterations=iters, tolerance=float(det["tolerance"]))
    if kind == "vamp-em":
        iters = int(det["max_iterations"]) or 4
        return detectors.VampOptions(
            max_iterations=iters,
            denoiser_iterations=int(det["denoiser_iterations"]),
            lmmse_iterations=int(det["lmmse_iterations"]),
            damping=float(det["damping"]),
            tolerance=float(det["tolerance"]),
            auto_tune=bool(det["auto_tune"]),
        )
    return None


def _detect_uncoded(ctx: _Context, y, realization, gamma_n):
    det = ctx.sim["detector"]
    kind = det["kind"]
    constellation = ctx.constellation
    h = realization.data_channel_dense()
    diverged = False
    if kind == "ml":
        symbols = detectors.ml_detect(y, h, constellation, max_candidates=int(det["ml_cap"]))
        indices = constellation.hard_decide(symbols)
        return indices, 1, diverged
    if kind == "lmmse":
        result = detectors.lmmse_detect(y, h, gamma_n, constellation)
        return result.indices, result.iterations, diverged
    options = _detector_options(ctx)
    try:
        if kind == "amp":
            result = detectors.amp_detect(y, h, gamma_n, constellation, options=options)
        else:
            known = gamma_n if det["known_noise"] else None
            result = detectors.vamp_em_detect(
                y, h, constellation, options=options,
                noise_precision=known, svd=realization.data_svd(),
            )
    except detectors.DetectorDivergence as err:
        diverged = True
        if err.result is None:
            n_sym = h.shape[1]
            return np.zeros(n_sym, dtype=int), 0, diverged
        result = err.result
    return result.indices, result.iterations, diverged


def _simulate_frame(ctx: _Context, gamma_n: float, master_seed: int, snr_idx: int, frame_idx: int):
    """One frame end to end; returns (bit errors, bits, frame error, diverged, iterations)."""
    rng = np.random.default_rng(np.random.SeedSequence((master_seed, snr_idx, frame_idx)))
    paths = _sample_paths(ctx, rng)
    realization = chan.ChannelRealization(
        paths, ctx.otsm, gamma_n, csi_error_var=float(ctx.sim["channel"]["csi_error_var"])
    )
    constellation = ctx.constellation
    noiseless = bool(ctx.sim["channel"]["noiseless"])

    if ctx.coded:
        info = rng.integers(0, 2, size=ctx.code.message_length).astype(np.uint8)
        word = ldpc_encode(info, ctx.code)
        tx_bits = interleave(word, ctx.interleaver)
    else:
        tx_bits = rng.integers(0, 2, size=frame_bits_capacity(ctx.otsm)).astype(np.uint8)

    symbols = constellation.map_bits(tx_bits)
    frame = assemble_frame(symbols, ctx.otsm)
    y = chan.apply_channel(frame.vector, realization, rng, noiseless=noiseless).received

    if ctx.coded:
        coding = ctx.sim["coding"]
        det = ctx.sim["detector"]
        known = gamma_n if (det["kind"] == "amp" or det["known_noise"]) else None
        result = turbo_receive(
            y,
            realization,
            ctx.code,
            constellation,
            detector=det["kind"],
            outer_iterations=int(coding["outer_iterations"]),
            inner_iterations=int(coding["inner_iterations"]),
            interleaver_seed=int(coding["interleaver_seed"]),
            noise_precision=known,
            detector_options=_detector_options(ctx),
        )
        errors = int(np.count_nonzero(result.info_bits != info))
        return errors, info.size, int(errors > 0), int(result.diverged), result.outer_iterations

    indices, iterations, diverged = _detect_uncoded(ctx, y, realization, gamma_n)
    decided_bits = constellation.bits_from_indices(indices)
    errors = int(np.count_nonzero(decided_bits != tx_bits))
    return errors, tx_bits.size, int(errors > 0), int(diverged), iterations


def _run_frame_range(canonical_json, gamma_n, master_seed, snr_idx, lo, hi):
    ctx = _cached_context(canonical_json)
    totals = np.zeros(5, dtype=np.int64)
    for frame_idx in range(lo, hi):
        totals += np.array(
            _simulate_frame(ctx, gamma_n, master_seed, snr_idx, frame_idx), dtype=np.int64
        )
    return totals


def run_ber_sweep(sim: SimConfig, threads: int = 1) -> MonteCarloReport:
    """Frame-error-targeted bit error ratio sweep over the configured grid."""
    ctx = _build_context(sim)
    det = ctx.sim["detector"]
    if det["kind"] in ("ml", "lmmse") and ctx.coded:
        raise ConfigError("the turbo loop requires a soft message-passing detector")
    rate = float(sim["coding"]["rate"]) if ctx.coded else 1.0
    stop = sim["stopping"]
    grid = sim["grid"]
    report = MonteCarloReport(config=sim)
    canonical = sim.canonical_json()
    pool = ProcessPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for snr_idx, value_db in enumerate(grid["values_db"]):
            gamma_n = noise_precision_from_db(
                float(value_db), grid["kind"], rate, ctx.constellation.bits_per_symbol
            )
            stats = PointStats(value_db=float(value_db), noise_precision=gamma_n)
            start = time.perf_counter()
            next_frame = 0
            while (
                stats.frame_errors < int(stop["min_frame_errors"])
                and stats.frames < int(stop["max_frames"])
            ):
                batch_end = min(next_frame + _BATCH_FRAMES, int(stop["max_frames"]))
                ranges = _split_range(next_frame, batch_end, threads)
                if pool is None:
                    parts = [
                        _run_frame_range(canonical, gamma_n, sim.seed, snr_idx, lo, hi)
                        for lo, hi in ranges
                    ]
                else:
                    futures = [
                        pool.submit(_run_frame_range, canonical, gamma_n, sim.seed, snr_idx, lo, hi)
                        for lo, hi in ranges
                    ]
                    parts = [f.result() for f in futures]
                total = np.sum(parts, axis=0)
                stats.bit_errors += int(total[0])
                stats.bits += int(total[1])
                stats.frame_errors += int(total[2])
                stats.diverged += int(total[3])
                stats.iterations_total += int(total[4])
                stats.frames += batch_end - next_frame
                next_frame = batch_end
            stats.wall_seconds = time.perf_counter() - start
            report.points.append(stats)
    finally:
        if pool is not None:
            pool.shutdown()
    return report


def _split_range(lo, hi, parts):
    if parts <= 1 or hi - lo <= 1:
        return [(lo, hi)]
    edges = np.linspace(lo, hi, parts + 1, dtype=int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


# ---------------------------------------------------------------------------
# Analytical bound runs


def run_bound(sim: SimConfig) -> analysis.BoundCurve:
    """Evaluate the configured union-bound curve (idempotent)."""
    otsm_cfg = sim.otsm()
    if otsm_cfg.guard != "cp":
        raise ConfigError("bound curves require the cyclic-prefix frame variant")
    ch = sim["channel"]
    bound = sim["bound"]
    if bound["placements"] == "exhaustive":
        placements = analysis.enumerate_integer_placements(
            int(ch["paths"]), int(ch["l_max"]), int(ch["k_max"])
        )
    elif bound["placements"] == "sampled":
        rng = np.random.default_rng(np.random.SeedSequence((sim.seed, 0xB0B)))
        placements = analysis.sample_placements(
            int(ch["paths"]), int(ch["l_max"]), int(ch["k_max"]), int(bound["draws"]), rng
        )
    else:
        raise ConfigError("bound placements must be 'exhaustive' or 'sampled'")
    return analysis.ber_union_bound(
        otsm_cfg,
        placements,
        bound["snr_db"],
        mode=bound["mode"],
        rician_factor=float(bound["rician_factor"]),
        csi_error_var=float(bound["csi_error_var"]),
        max_patterns=int(bound["max_patterns"]),
    )


# ---------------------------------------------------------------------------
# Transfer-chart runs


def _exit_realizations(sim: SimConfig, ctx: _Context, gamma_n: float, count: int):
    reals = []
    for draw in range(count):
        rng = np.random.default_rng(np.random.SeedSequence((sim.seed, 0xE17, draw)))
        reals.append(chan.ChannelRealization(_sample_paths(ctx, rng), ctx.otsm, gamma_n))
    return reals


def turbo_trajectory(
    sim: SimConfig,
    detector_kind: str,
    gamma_n: float,
    steps: int,
    frames: int,
) -> list[ExitPoint]:
    """Measured staircase of the actual detector/decoder exchange."""
    ctx = _build_context(sim)
    if not ctx.coded:
        raise ConfigError("trajectories require coding to be enabled")
    code, perm = ctx.code, ctx.interleaver
    constellation = ctx.constellation
    coding = sim["coding"]
    det_cfg = sim["detector"]
    options = _detector_options_for(ctx, detector_kind)
    known = gamma_n if (detector_kind == "amp" or det_cfg["known_noise"]) else None
    acc: list[list[float]] = [[] for _ in range(2 * steps)]

    for f in range(frames):
        rng = np.random.default_rng(np.random.SeedSequence((sim.seed, 0x17A, f)))
        paths = _sample_paths(ctx, rng)
        realization = chan.ChannelRealization(paths, ctx.otsm, gamma_n)
        info = rng.integers(0, 2, size=code.message_length).astype(np.uint8)
        word = ldpc_encode(info, code)
        tx_bits = interleave(word, perm)
        symbols = constellation.map_bits(tx_bits)
        y = chan.apply_channel(assemble_frame(symbols, ctx.otsm).vector, realization, rng).received
        h = realization.data_channel_dense()
        svd = realization.data_svd()

        dec_ext = np.zeros(code.block_length)
        for step in range(steps):
            prior_llrs = interleave(dec_ext, perm)
            priors = llr_to_symbol_priors(prior_llrs, constellation) if step > 0 else None
            try:
                if detector_kind == "amp":
                    result = detectors.amp_detect(
                        y, h, gamma_n, constellation, options=options, priors=priors
                    )
                else:
                    result = detectors.vamp_em_detect(
                        y, h, constellation, options=options,
                        noise_precision=known, priors=priors, svd=svd,
                    )
            except detectors.DetectorDivergence as err:
                if err.result is None:
                    break
                result = err.result
            det_ext = symbols_to_extrinsic_llr(
                result.extrinsic_mean, result.extrinsic_variance,
                prior_llrs if step > 0 else None, constellation,
            )
            acc[2 * step].append(mutual_information_from_llrs(det_ext, tx_bits))
            channel_llrs = deinterleave(det_ext, perm)
            _, posterior, _ = ldpc_decode_spa(channel_llrs, code, int(coding["inner_iterations"]))
            dec_ext = np.clip(posterior - channel_llrs, -LLR_CLIP, LLR_CLIP)
            acc[2 * step + 1].append(mutual_information_from_llrs(dec_ext, word))

    points = []
    prev_dec = 0.0
    for step in range(steps):
        det_vals = acc[2 * step]
        dec_vals = acc[2 * step + 1]
        if not det_vals:
            break
        det_ie = float(np.mean(det_vals))
        points.append(ExitPoint(i_a=prev_dec, i_e=det_ie, component="detector"))
        if dec_vals:
            prev_dec = float(np.mean(dec_vals))
            points.append(ExitPoint(i_a=det_ie, i_e=prev_dec, component="decoder"))
    return points


def _detector_options_for(ctx: _Context, kind: str):
    det = dict(ctx.sim["detector"])
    det["kind"] = kind
    patched = SimConfig(raw={**ctx.sim.raw, "detector": det})
    return _detector_options(_Context(patched, ctx.otsm, ctx.constellation, ctx.code, ctx.interleaver))


def run_exit(sim: SimConfig):
    """Detector and decoder transfer curves plus the measured trajectory.

    Returns (curve points, trajectory points); curves carry one entry
    per detector kind plus the decoder.
    """
    ctx = _build_context(sim)
    if not ctx.coded:
        raise ConfigError("transfer charts require coding to be enabled")
    exit_cfg = sim["exit"]
    rate = float(sim["coding"]["rate"])
    gamma_n = noise_precision_from_db(
        float(exit_cfg["ebn0_db"]), "ebn0", rate, ctx.constellation.bits_per_symbol
    )
    reals = _exit_realizations(sim, ctx, gamma_n, int(exit_cfg["ensemble"]))
    rng = np.random.default_rng(np.random.SeedSequence((sim.seed, 0xC0)))
    curves: list[tuple[str, ExitPoint]] = []
    det_cfg = sim["detector"]
    for kind in exit_cfg["detectors"]:
        known = gamma_n if (kind == "amp" or det_cfg["known_noise"]) else None
        pts = detector_exit_curve(
            kind,
            reals,
            ctx.constellation,
            exit_cfg["i_a_grid"],
            rng,
            detector_options=_detector_options_for(ctx, kind),
            noise_precision=known if kind == "vamp-em" else None,
        )
        curves.extend((kind, p) for p in pts)
    dec_pts = decoder_exit_curve(
        ctx.code, exit_cfg["i_a_grid"], rng, inner_iterations=int(sim["coding"]["inner_iterations"])
    )
    curves.extend(("decoder", p) for p in dec_pts)
    trajectory = turbo_trajectory(
        sim,
        exit_cfg["detectors"][-1],
        gamma_n,
        int(exit_cfg["trajectory_steps"]),
        int(exit_cfg["trajectory_frames"]),
    )
    return curves, trajectory


def exit_csv_text(curves, ebn0_db: float) -> str:
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["i_a", "i_e", "component", "ebn0_db"])
    for label, point in curves:
        writer.writerow([f"{point.i_a:.8f}", f"{point.i_e:.8f}", label, f"{ebn0_db:g}"])
    return out.getvalue()


def trajectory_csv_text(points, ebn0_db: float) -> str:
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["step", "component", "i_a", "i_e", "ebn0_db"])
    for idx, p in enumerate(points):
        writer.writerow([idx, p.component, f"{p.i_a:.8f}", f"{p.i_e:.8f}", f"{ebn0_db:g}"])
    return out.getvalue()
