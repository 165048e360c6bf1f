"""Dual-mode index-modulation 3D-OFDM: encoder, channel, detectors, harness."""

from .constellation import (
    ConfigError,
    Constellation3D,
    IllegalPatternError,
    IndexLookup,
    SubblockBits,
    SystemConfig,
    bit_budget,
    bits_to_pattern,
    decode_subblock,
    default_constellations,
    default_lookup,
    encode_subblock,
    nearest_symbol,
    pattern_to_bits,
)
from .detectors import CandidateSet, enumerate_candidates, llr_detect, llr_metric, ml_detect
from .harness import (
    BenchRecord,
    BerRecord,
    SweepConfig,
    bench_runtime,
    cli_main,
    gen_dataset,
    read_dataset,
    run_ber_sweep,
    scenario_config,
    write_csv,
)
from .phy import draw_channel, features, snr_to_n0, transmit, zf_equalize
from .transd3d import (
    NetDims,
    NetworkParams,
    TrainConfig,
    decode,
    decode_batch,
    forward,
    init_params,
    load_params,
    one_hot,
    save_params,
    train,
)

__version__ = "0.1.0"
