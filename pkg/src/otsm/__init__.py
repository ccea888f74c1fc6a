"""Delay-sequency (OTSM) physical-layer toolkit.

Modulation over the Walsh-Hadamard/shuffle chain, time-varying
multipath channels, ML/LMMSE/message-passing detection with noise
learning, closed-form error bounds, LDPC-coded turbo reception, and a
reproducible Monte Carlo harness.
"""

from .modem import Constellation, DsFrame, OtsmConfig, assemble_frame, frame_bits_capacity
from .modem import otsm_modulate, otsm_receive_transform
from .transforms import apply_iwht_rows, fwht, perfect_shuffle, wht_matrix
from .channel import (
    ChannelRealization,
    DelayDopplerPath,
    apply_channel,
    build_ds_channel_cp,
    build_ds_channel_zp,
    build_time_domain_channel,
    sample_paths_eva,
    sample_paths_uniform,
)
from .detectors import (
    AmpOptions,
    DetectorDivergence,
    DetectorResult,
    VampOptions,
    amp_detect,
    denoise_posterior,
    em_noise_update,
    lmmse_detect,
    ml_detect,
    vamp_em_detect,
    vamp_lmmse_stage,
)
from .analysis import (
    BoundCurve,
    PairwiseEvent,
    ber_union_bound,
    build_codeword_matrix,
    pairwise_event,
    upep_imperfect_csi,
    upep_rayleigh,
    upep_rician,
)

__version__ = "0.1.0"
