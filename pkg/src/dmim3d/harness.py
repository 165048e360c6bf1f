"""Monte-Carlo BER sweeps, runtime benchmark, dataset files and the CLI.

Reproducibility contract: every simulated block draws its bits, channel and
unit-variance noise from a private generator seeded by ``(master_seed,
trial_index)``.  Blocks are therefore identical across detectors, SNR
points and any parallel execution order, and a sweep with a fixed seed
writes byte-identical CSV.  Because wall-clock timings are inherently
non-deterministic, the CSV timing column is written as 0 unless timing
output is explicitly requested; in-memory records always carry the
measured values.
"""

from __future__ import annotations

import argparse
import statistics
import struct
import sys
import time
from dataclasses import dataclass

import numpy as np

from .constellation import ConfigError, SystemConfig
from .detectors import _default_candidates, llr_detect, ml_detect
from .phy import draw_channel, draw_noise, features, snr_to_n0
from .transd3d import (
    NetDims,
    NetworkParams,
    TrainConfig,
    WeightsFormatError,
    decode_batch,
    init_params,
    load_params,
    sample_batch,
    save_params,
    train,
)

__all__ = [
    "DETECTOR_IDS",
    "DATASET_MAGIC",
    "DATASET_VERSION",
    "DatasetFormatError",
    "SweepConfig",
    "BerRecord",
    "BenchRecord",
    "scenario_config",
    "trial_rng",
    "generate_trials",
    "run_ber_sweep",
    "write_csv",
    "bench_runtime",
    "gen_dataset",
    "read_dataset",
    "cli_main",
    "main",
]

DETECTOR_IDS = ("ml", "llr", "trans")
CSV_HEADER = "detector,snr_db,blocks,bit_errors,ber,stderr,ns_per_block"

DATASET_MAGIC = b"TD3DSET"
DATASET_VERSION = 1

_SCENARIOS = {
    1: ((4, 2, 2, 2), 32, 128),
    2: ((4, 2, 4, 4), 64, 256),
}


class DatasetFormatError(Exception):
    """A dataset file that cannot be decoded."""


def scenario_config(num: int) -> tuple[SystemConfig, NetDims]:
    """The two stock parameter sets: (4,2,2,2)/32/128 and (4,2,4,4)/64/256."""
    try:
        (n, k, s_a, s_b), d_model, d_mlp = _SCENARIOS[num]
    except KeyError:
        raise ConfigError(f"unknown scenario {num}; choose 1 or 2") from None
    config = SystemConfig(n, k, s_a, s_b)
    return config, NetDims.for_config(config, d_model=d_model, d_mlp=d_mlp)


@dataclass(frozen=True)
class SweepConfig:
    """One BER sweep: system, SNR grid, trial count, detectors, seed."""

    config: SystemConfig
    snrs_db: tuple[float, ...]
    blocks: int
    detectors: tuple[str, ...] = ("ml", "llr")
    seed: int = 0
    weights_path: str | None = None

    def __post_init__(self):
        if self.blocks < 1:
            raise ValueError("blocks must be >= 1")
        if not self.snrs_db or not all(np.isfinite(self.snrs_db)):
            raise ValueError("SNR list must be non-empty and finite")
        for det in self.detectors:
            if det not in DETECTOR_IDS:
                raise ValueError(f"unknown detector id {det!r}; choose from {DETECTOR_IDS}")
        if "trans" in self.detectors and not self.weights_path:
            raise ValueError("the trans detector needs a weights file")


@dataclass
class BerRecord:
    """One Monte-Carlo measurement cell."""

    detector: str
    snr_db: float
    blocks: int
    bit_errors: int
    ber: float
    stderr: float
    ns_total: int
    ns_per_block: int


@dataclass
class BenchRecord:
    """Median per-block detection latency for one detector/mode."""

    detector: str
    mode: str
    blocks: int
    ns_per_block: int


def trial_rng(seed: int, index: int) -> np.random.Generator:
    """The private generator of one Monte-Carlo trial."""
    return np.random.default_rng([seed, index])


@dataclass
class TrialData:
    """Pre-drawn per-trial blocks shared by every detector and SNR point."""

    bits: np.ndarray       # (blocks, p) uint8
    x: np.ndarray          # (blocks, 3, n)
    h: np.ndarray          # (blocks, 3, n) complex
    noise_unit: np.ndarray  # (blocks, 3, n) complex, unit variance


def generate_trials(config: SystemConfig, blocks: int, seed: int) -> TrialData:
    """Draw ``blocks`` independent trials from per-trial seeded streams."""
    cand = _default_candidates(config)
    count = len(cand.bits)
    idx = np.empty(blocks, dtype=np.intp)
    h = np.empty((blocks, 3, config.n), dtype=complex)
    noise = np.empty((blocks, 3, config.n), dtype=complex)
    for i in range(blocks):
        rng = trial_rng(seed, i)
        idx[i] = rng.integers(0, count)
        h[i] = draw_channel(rng, config.n)
        noise[i] = draw_noise(rng, config.n, 1.0)
    return TrialData(cand.bit_rows[idx], cand.blocks[idx], h, noise)


def _detect_ml(y, trials, n0, config):
    cand = _default_candidates(config)
    return np.array(
        [ml_detect(y[i], trials.h[i], config, cand).bits for i in range(len(y))],
        dtype=np.uint8,
    )


def _detect_llr(y, trials, n0, config):
    return np.array(
        [llr_detect(y[i], trials.h[i], n0, config).bits for i in range(len(y))],
        dtype=np.uint8,
    )


def _detect_trans(y, trials, params, config, chunk=4096):
    rows = []
    for lo in range(0, len(y), chunk):
        feats = features(y[lo : lo + chunk], trials.h[lo : lo + chunk])
        out = _trans_forward(feats, params)
        rows.append(decode_batch(out, config))
    return np.concatenate(rows, axis=0)


def _trans_forward(feats, params):
    from .transd3d import forward

    return forward(feats, params)


def _load_trans_params(sweep: SweepConfig) -> NetworkParams | None:
    if "trans" not in sweep.detectors:
        return None
    params = load_params(sweep.weights_path)
    if params.config != sweep.config:
        raise ValueError(
            f"weights were trained for {params.config}, sweep wants {sweep.config}"
        )
    return params


def run_ber_sweep(sweep: SweepConfig) -> list[BerRecord]:
    """Count bit errors per (detector, SNR) cell over shared trials."""
    params = _load_trans_params(sweep)
    trials = generate_trials(sweep.config, sweep.blocks, sweep.seed)
    p = sweep.config.p
    y_cache: dict[float, np.ndarray] = {}
    records = []
    for det in sweep.detectors:
        for snr in sweep.snrs_db:
            n0 = snr_to_n0(snr)
            y = y_cache.get(snr)
            if y is None:
                y = trials.h * trials.x + np.sqrt(n0) * trials.noise_unit
                y_cache[snr] = y
            t0 = time.perf_counter_ns()
            if det == "ml":
                detected = _detect_ml(y, trials, n0, sweep.config)
            elif det == "llr":
                detected = _detect_llr(y, trials, n0, sweep.config)
            else:
                detected = _detect_trans(y, trials, params, sweep.config)
            ns_total = max(time.perf_counter_ns() - t0, 1)
            errors = int((detected != trials.bits).sum())
            ber = errors / (sweep.blocks * p)
            stderr = float(np.sqrt(ber * (1.0 - ber) / (sweep.blocks * p)))
            records.append(
                BerRecord(det, float(snr), sweep.blocks, errors, ber, stderr,
                          ns_total, ns_total // sweep.blocks)
            )
    return records


def write_csv(records: list[BerRecord], path, include_timing: bool = False) -> None:
    """Write sweep records; timing is zeroed unless explicitly requested.

    Re-running the same (seed, config) must produce byte-identical files,
    which wall-clock values would break.
    """
    lines = [CSV_HEADER]
    for r in records:
        ns = r.ns_per_block if include_timing else 0
        lines.append(
            f"{r.detector},{r.snr_db:g},{r.blocks},{r.bit_errors},"
            f"{r.ber:.6e},{r.stderr:.6e},{ns}"
        )
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def bench_runtime(
    config: SystemConfig | None = None,
    dims: NetDims | None = None,
    blocks: int = 1000,
    seed: int = 0,
    params: NetworkParams | None = None,
    snr_db: float = 10.0,
    warmup: int = 32,
    batch_repeats: int = 5,
) -> list[BenchRecord]:
    """Median per-block detection latency for each detector.

    Defaults to the (4,2,4,4) parameter set.  The neural detector is timed
    both block-at-a-time and batched (one forward pass over all blocks,
    divided by the block count); weight values do not affect timing, so
    freshly initialized parameters are used unless some are supplied.
    Meaningful medians need a warmed-up process and at least ~1000 blocks.
    """
    if config is None or dims is None:
        default_config, default_dims = scenario_config(2)
        config = config or default_config
        dims = dims or default_dims
    if params is None:
        params = init_params(np.random.default_rng(seed), dims, config)
    trials = generate_trials(config, blocks, seed)
    n0 = snr_to_n0(snr_db)
    y = trials.h * trials.x + np.sqrt(n0) * trials.noise_unit
    cand = _default_candidates(config)
    records = []

    def timed_per_block(fn):
        for i in range(min(warmup, blocks)):
            fn(i)
        times = []
        for i in range(blocks):
            t0 = time.perf_counter_ns()
            fn(i)
            times.append(time.perf_counter_ns() - t0)
        return max(int(statistics.median(times)), 1)

    ml_ns = timed_per_block(lambda i: ml_detect(y[i], trials.h[i], config, cand))
    records.append(BenchRecord("ml", "single", blocks, ml_ns))
    llr_ns = timed_per_block(lambda i: llr_detect(y[i], trials.h[i], n0, config))
    records.append(BenchRecord("llr", "single", blocks, llr_ns))

    def trans_single(i):
        out = _trans_forward(features(y[i], trials.h[i]), params)
        return decode_batch(out[None], config)

    records.append(BenchRecord("trans", "single", blocks, timed_per_block(trans_single)))

    def trans_batched():
        out = _trans_forward(features(y, trials.h), params)
        return decode_batch(out, config)

    trans_batched()  # warmup
    batched = []
    for _ in range(batch_repeats):
        t0 = time.perf_counter_ns()
        trans_batched()
        batched.append((time.perf_counter_ns() - t0) / blocks)
    records.append(
        BenchRecord("trans", "batched", blocks, max(int(statistics.median(batched)), 1))
    )
    return records


def gen_dataset(count: int, snr_db: float, config: SystemConfig, seed: int, path) -> None:
    """Write ``count`` simulated (features, label) records to ``path``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    feats, labels, _ = sample_batch(rng, count, config, snr_to_n0(snr_db))
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<I", DATASET_VERSION))
        fh.write(struct.pack("<4I", config.n, config.k, config.s_a, config.s_b))
        fh.write(struct.pack("<I", count))
        for i in range(count):
            fh.write(np.ascontiguousarray(feats[i], dtype="<f8").tobytes())
            fh.write(labels[i].astype(np.uint8).tobytes())


def read_dataset(path) -> tuple[SystemConfig, np.ndarray, np.ndarray]:
    """Read a dataset file back as (config, features, labels)."""
    with open(path, "rb") as fh:
        data = fh.read()
    head = len(DATASET_MAGIC)
    if data[:head] != DATASET_MAGIC:
        raise DatasetFormatError(f"bad magic {data[:head]!r}")
    try:
        version, n, k, s_a, s_b, count = struct.unpack_from("<6I", data, head)
    except struct.error as exc:
        raise DatasetFormatError("truncated header") from exc
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"unsupported version {version}")
    try:
        config = SystemConfig(n, k, s_a, s_b)
    except ConfigError as exc:
        raise DatasetFormatError(f"invalid header: {exc}") from exc
    feat_bytes = 8 * n * 9
    label_bytes = n * (s_a + 1)
    offset = head + 24
    expected = offset + count * (feat_bytes + label_bytes)
    if len(data) != expected:
        raise DatasetFormatError(f"expected {expected} bytes, file has {len(data)}")
    feats = np.empty((count, n, 9))
    labels = np.empty((count, n, s_a + 1), dtype=np.uint8)
    for i in range(count):
        feats[i] = np.frombuffer(data, "<f8", n * 9, offset).reshape(n, 9)
        offset += feat_bytes
        labels[i] = np.frombuffer(data, np.uint8, label_bytes, offset).reshape(n, s_a + 1)
        offset += label_bytes
    return config, feats, labels


# ---------------------------------------------------------------------------
# command line


def _parse_snr_list(text: str) -> tuple[float, ...]:
    """Either comma-separated values or an inclusive start:step:stop range."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"range must be start:step:stop, got {text!r}")
        start, step, stop = (float(p) for p in parts)
        if step <= 0:
            raise ValueError("SNR range step must be positive")
        out = []
        v = start
        while v <= stop + 1e-9:
            out.append(round(v, 9))
            v += step
        return tuple(out)
    return tuple(float(p) for p in text.split(","))


def _system_from_args(args) -> SystemConfig:
    if getattr(args, "system", None):
        parts = [int(v) for v in args.system.split(",")]
        if len(parts) != 4:
            raise ValueError("--system needs four integers: n,k,s_a,s_b")
        return SystemConfig(*parts)
    return scenario_config(args.scenario)[0]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dmim3d",
        description="Dual-mode index-modulation 3D-OFDM simulator and detectors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--scenario", type=int, choices=(1, 2), default=1,
                       help="stock parameter set (default 1)")
        p.add_argument("--system", type=str, default=None,
                       help="explicit n,k,s_a,s_b (overrides --scenario)")
        p.add_argument("--seed", type=int, default=0, help="master seed")

    sweep = sub.add_parser("sweep", help="Monte-Carlo BER sweep over SNR")
    add_common(sweep)
    sweep.add_argument("--snr-list", type=str, default="0:5:30",
                       help="comma list or start:step:stop range in dB")
    sweep.add_argument("--blocks", type=int, default=10000, help="trials per SNR point")
    sweep.add_argument("--detectors", type=str, default="ml,llr",
                       help="comma list from ml,llr,trans")
    sweep.add_argument("--weights", type=str, default=None,
                       help="weights file (required for trans)")
    sweep.add_argument("--timed", action="store_true",
                       help="write measured ns/block to the CSV (breaks byte determinism)")
    sweep.add_argument("--out", type=str, default=None, help="CSV output path")

    trn = sub.add_parser("train", help="train the neural detector")
    add_common(trn)
    trn.add_argument("--epochs", type=int, default=100)
    trn.add_argument("--batches", type=int, default=600, help="batches per epoch")
    trn.add_argument("--batch-size", type=int, default=1000)
    trn.add_argument("--lr", type=float, default=1e-3)
    trn.add_argument("--train-snr", type=float, default=15.0, help="training SNR in dB")
    trn.add_argument("--d-model", type=int, default=None, help="override model width")
    trn.add_argument("--d-mlp", type=int, default=None, help="override MLP width")
    trn.add_argument("--weights-out", type=str, required=True)

    bench = sub.add_parser("bench", help="median per-block detection latency")
    add_common(bench)
    bench.set_defaults(scenario=2)
    bench.add_argument("--blocks", type=int, default=1000)
    bench.add_argument("--weights", type=str, default=None,
                       help="time a trained model instead of a fresh one")
    bench.add_argument("--out", type=str, default=None, help="CSV output path")

    gen = sub.add_parser("gen-dataset", help="write a labelled feature dataset")
    add_common(gen)
    gen.add_argument("--count", type=int, required=True)
    gen.add_argument("--train-snr", type=float, default=15.0, help="data SNR in dB")
    gen.add_argument("--out", type=str, required=True)

    ev = sub.add_parser("eval", help="BER of a trained neural detector")
    add_common(ev)
    ev.add_argument("--weights", type=str, required=True)
    ev.add_argument("--snr-list", type=str, default="0:5:30")
    ev.add_argument("--blocks", type=int, default=10000)
    ev.add_argument("--timed", action="store_true")
    ev.add_argument("--out", type=str, default=None)
    return parser


def _print_records(records: list[BerRecord]) -> None:
    print(CSV_HEADER)
    for r in records:
        print(
            f"{r.detector},{r.snr_db:g},{r.blocks},{r.bit_errors},"
            f"{r.ber:.6e},{r.stderr:.6e},{r.ns_per_block}"
        )


def _cmd_sweep(args) -> int:
    config = _system_from_args(args)
    sweep = SweepConfig(
        config=config,
        snrs_db=_parse_snr_list(args.snr_list),
        blocks=args.blocks,
        detectors=tuple(d.strip() for d in args.detectors.split(",") if d.strip()),
        seed=args.seed,
        weights_path=args.weights,
    )
    records = run_ber_sweep(sweep)
    _print_records(records)
    if args.out:
        write_csv(records, args.out, include_timing=args.timed)
    return 0


def _cmd_train(args) -> int:
    config = _system_from_args(args)
    _, default_dims = scenario_config(args.scenario)
    if args.system:
        default_dims = NetDims.for_config(config, d_model=32, d_mlp=128)
    dims = NetDims.for_config(
        config,
        d_model=args.d_model or default_dims.d_model,
        d_mlp=args.d_mlp or default_dims.d_mlp,
    )
    train_cfg = TrainConfig(
        epochs=args.epochs,
        batches_per_epoch=args.batches,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        train_snr_db=args.train_snr,
        seed=args.seed,
    )
    params, history = train(train_cfg, config, dims)
    save_params(params, args.weights_out)
    print(f"trained {len(history)} epochs; "
          f"loss {history[0]:.4f} -> {history[-1]:.4f}; wrote {args.weights_out}")
    return 0


def _cmd_bench(args) -> int:
    config = _system_from_args(args)
    _, dims = scenario_config(args.scenario)
    if args.system:
        dims = NetDims.for_config(config, d_model=dims.d_model, d_mlp=dims.d_mlp)
    params = None
    if args.weights:
        params = load_params(args.weights)
        if params.config != config:
            raise ValueError("weights config does not match the benchmark system")
        dims = params.dims
    records = bench_runtime(config, dims, blocks=args.blocks, seed=args.seed,
                            params=params)
    print("detector,mode,blocks,ns_per_block")
    lines = ["detector,mode,blocks,ns_per_block"]
    for r in records:
        line = f"{r.detector},{r.mode},{r.blocks},{r.ns_per_block}"
        print(line)
        lines.append(line)
    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    return 0


def _cmd_gen_dataset(args) -> int:
    config = _system_from_args(args)
    gen_dataset(args.count, args.train_snr, config, args.seed, args.out)
    print(f"wrote {args.count} records to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    config = _system_from_args(args)
    sweep = SweepConfig(
        config=config,
        snrs_db=_parse_snr_list(args.snr_list),
        blocks=args.blocks,
        detectors=("trans",),
        seed=args.seed,
        weights_path=args.weights,
    )
    records = run_ber_sweep(sweep)
    _print_records(records)
    if args.out:
        write_csv(records, args.out, include_timing=args.timed)
    return 0


_COMMANDS = {
    "sweep": _cmd_sweep,
    "train": _cmd_train,
    "bench": _cmd_bench,
    "gen-dataset": _cmd_gen_dataset,
    "eval": _cmd_eval,
}


def cli_main(argv=None) -> int:
    """Entry point returning a process exit code (0 ok, 2 usage, 1 error)."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles usage errors and --help
        code = exc.code
        return code if isinstance(code, int) else 2
    try:
        return _COMMANDS[args.command](args)
    except (OSError, ValueError, ConfigError, WeightsFormatError,
            DatasetFormatError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))
