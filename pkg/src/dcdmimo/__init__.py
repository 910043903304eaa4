"""Decentralized coordinate-descent detection and precoding for massive MU-MIMO."""

from dcdmimo.downlink import (
    PrecodeResult,
    PrecoderConfig,
    cd_precode,
    decentralized_cd_precode,
    downlink_receive_and_ber,
    mf_precode_decentralized,
    power_scale,
    zf_exact,
)
from dcdmimo.model import (
    ChannelRealization,
    ClusterLayout,
    Constellation,
    awgn,
    demodulate_hard,
    gen_rayleigh,
    modulate,
    partition_rows,
    qam,
    snr_to_n0,
)
from dcdmimo.numerics import PrecisionMode, hermitian_solve, round_precision
from dcdmimo.uplink import (
    DetectorConfig,
    cd_detect,
    decentralized_cd_detect,
    fusion_weights,
    lmmse_exact,
    mf_detect_decentralized,
    post_eq_variance,
)

__version__ = "0.1.0"
