"""Two-head attention detector: forward/backward, labels, decode, training.

The network maps the (n, 9) feature matrix of a received subblock to an
(n, s + 1) matrix of soft outputs: the first ``s`` columns score the symbol
order within the subcarrier's constellation, the last column scores the
mode (0 = A, 1 = B).  The hard decision mirrors the log-ratio detector:
pick the best legal index pattern from the mode column, then the symbol
with the highest score per subcarrier.

Backward passes are composed by hand from the kernels in :mod:`.ndiff`.
Scores are NOT rescaled by sqrt(d_head) and there are no residual paths by
default; both are available as opt-in switches on :class:`NetDims` for
experimentation (they are not recorded in weights files).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import ndiff
from .constellation import (
    ConfigError,
    IndexLookup,
    SubblockBits,
    SystemConfig,
    build_pattern_tables,
    pattern_tables,
    subblock_layout,
)
from .detectors import _default_candidates
from .phy import draw_channel, draw_noise, features, snr_to_n0

__all__ = [
    "WEIGHTS_MAGIC",
    "WEIGHTS_VERSION",
    "WeightsFormatError",
    "WeightsMagicError",
    "WeightsVersionError",
    "WeightsTruncatedError",
    "WeightsShapeError",
    "TrainingDivergedError",
    "NetDims",
    "NetworkParams",
    "TrainConfig",
    "tensor_shapes",
    "init_params",
    "forward",
    "loss_and_grads",
    "one_hot",
    "decode",
    "decode_batch",
    "sample_batch",
    "train",
    "save_params",
    "load_params",
]

WEIGHTS_MAGIC = b"TD3D"
WEIGHTS_VERSION = 1


class WeightsFormatError(Exception):
    """A weights file that cannot be decoded."""


class WeightsMagicError(WeightsFormatError):
    """Bad magic bytes."""


class WeightsVersionError(WeightsFormatError):
    """Unsupported format version."""


class WeightsTruncatedError(WeightsFormatError):
    """File ends before the declared content."""


class WeightsShapeError(WeightsFormatError):
    """Tensor names or shapes disagree with the header."""


class TrainingDivergedError(RuntimeError):
    """Training loss became non-finite."""


@dataclass(frozen=True)
class NetDims:
    """Network dimensions: tokens, widths, heads, and forward switches."""

    n: int
    d_model: int
    d_mlp: int
    d_out: int
    heads: int = 2
    d_in: int = 9
    scaled_attention: bool = False
    residual: bool = False

    def __post_init__(self):
        if min(self.n, self.d_model, self.d_mlp, self.heads, self.d_in) < 1:
            raise ConfigError("network dimensions must be positive")
        if self.d_out < 2:
            raise ConfigError("output width must be at least 2")
        if self.d_model % self.heads:
            raise ConfigError(
                f"d_model={self.d_model} not divisible by heads={self.heads}"
            )

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads

    @classmethod
    def for_config(cls, config: SystemConfig, d_model: int, d_mlp: int, **kwargs) -> "NetDims":
        return cls(n=config.n, d_model=d_model, d_mlp=d_mlp,
                   d_out=config.s_a + 1, **kwargs)


def tensor_shapes(dims: NetDims) -> dict[str, tuple[int, int]]:
    """Canonical tensor order and shapes (biases are 1-row tensors)."""
    shapes: dict[str, tuple[int, int]] = {
        "W_C": (dims.d_in, dims.d_model),
        "b_C": (1, dims.d_model),
    }
    for h in range(1, dims.heads + 1):
        for part in ("Q", "K", "V"):
            shapes[f"W_{part}{h}"] = (dims.d_model, dims.d_head)
            shapes[f"b_{part}{h}"] = (1, dims.d_head)
    shapes.update(
        {
            "W_E": (dims.d_model, dims.d_model),
            "b_E": (1, dims.d_model),
            "W_A1": (dims.d_model, dims.d_mlp),
            "b_A1": (1, dims.d_mlp),
            "W_A2": (dims.d_mlp, dims.d_model),
            "b_A2": (1, dims.d_model),
            "W_O": (dims.d_model, dims.d_out),
            "b_O": (1, dims.d_out),
        }
    )
    return shapes


@dataclass
class NetworkParams:
    """All learnable tensors, keyed by canonical name."""

    dims: NetDims
    tensors: dict[str, np.ndarray]
    config: SystemConfig | None = None

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.dims, {k: v.copy() for k, v in self.tensors.items()},
                             self.config)


def init_params(rng: np.random.Generator, dims: NetDims,
                config: SystemConfig | None = None) -> NetworkParams:
    """Glorot-uniform weights, zero biases."""
    tensors: dict[str, np.ndarray] = {}
    for name, (rows, cols) in tensor_shapes(dims).items():
        if name.startswith("b"):
            tensors[name] = np.zeros((rows, cols))
        else:
            bound = np.sqrt(6.0 / (rows + cols))
            tensors[name] = rng.uniform(-bound, bound, size=(rows, cols))
    return NetworkParams(dims, tensors, config)


def _forward(feats3: np.ndarray, params: NetworkParams):
    """Batched forward pass; returns (outputs (B, n, d_out), cache)."""
    dims = params.dims
    t = params.tensors
    batch, n, d_in = feats3.shape
    if n != dims.n or d_in != dims.d_in:
        raise ValueError(f"expected (*, {dims.n}, {dims.d_in}) features, got {feats3.shape}")
    rows = batch * n
    dh = dims.d_head

    x0 = feats3.reshape(rows, d_in)
    z1 = ndiff.linear(x0, t["W_C"], t["b_C"])
    c = ndiff.relu(z1)
    cb = ndiff.layer_norm(c)

    cache = {"x0": x0, "z1": z1, "c": c, "cb": cb, "batch": batch, "n": n}
    head_outs = []
    for h in range(1, dims.heads + 1):
        q = ndiff.linear(cb, t[f"W_Q{h}"], t[f"b_Q{h}"]).reshape(batch, n, dh)
        k = ndiff.linear(cb, t[f"W_K{h}"], t[f"b_K{h}"]).reshape(batch, n, dh)
        v = ndiff.linear(cb, t[f"W_V{h}"], t[f"b_V{h}"]).reshape(batch, n, dh)
        scores = ndiff.bmm(q, k.swapaxes(1, 2))
        if dims.scaled_attention:
            scores = scores / np.sqrt(dh)
        prob = ndiff.softmax_rows(scores.reshape(rows, n))
        eh = ndiff.bmm(prob.reshape(batch, n, n), v)
        cache[f"q{h}"], cache[f"k{h}"], cache[f"v{h}"] = q, k, v
        cache[f"p{h}"] = prob
        head_outs.append(eh.reshape(rows, dh))
    ecat = np.concatenate(head_outs, axis=1)
    attn = ndiff.linear(ecat, t["W_E"], t["b_E"])
    e = c + attn if dims.residual else attn
    eb = ndiff.layer_norm(e)
    z2 = ndiff.linear(eb, t["W_A1"], t["b_A1"])
    r = ndiff.relu(z2)
    mlp = ndiff.linear(r, t["W_A2"], t["b_A2"])
    a = e + mlp if dims.residual else mlp
    z3 = ndiff.linear(a, t["W_O"], t["b_O"])
    o = ndiff.sigmoid(z3)
    cache.update({"ecat": ecat, "e": e, "eb": eb, "z2": z2, "r": r, "a": a, "o": o})
    return o.reshape(batch, n, dims.d_out), cache


def _backward(grad_o: np.ndarray, cache: dict, params: NetworkParams) -> dict[str, np.ndarray]:
    """Gradients of every tensor given the gradient at the sigmoid output."""
    dims = params.dims
    t = params.tensors
    batch, n = cache["batch"], cache["n"]
    rows = batch * n
    dh = dims.d_head
    g: dict[str, np.ndarray] = {}

    dz3 = ndiff.sigmoid_backward(cache["o"], grad_o)
    da, g["W_O"], g["b_O"] = ndiff.linear_backward(cache["a"], t["W_O"], dz3)
    dr, g["W_A2"], g["b_A2"] = ndiff.linear_backward(cache["r"], t["W_A2"], da)
    dz2 = ndiff.relu_backward(cache["z2"], dr)
    deb, g["W_A1"], g["b_A1"] = ndiff.linear_backward(cache["eb"], t["W_A1"], dz2)
    de = ndiff.layer_norm_backward(cache["e"], deb)
    if dims.residual:
        de = de + da
    decat, g["W_E"], g["b_E"] = ndiff.linear_backward(cache["ecat"], t["W_E"], de)
    dcb = np.zeros_like(cache["cb"])
    for h in range(1, dims.heads + 1):
        q, k, v = cache[f"q{h}"], cache[f"k{h}"], cache[f"v{h}"]
        prob = cache[f"p{h}"]
        deh = decat[:, (h - 1) * dh : h * dh].reshape(batch, n, dh)
        dprob3, dv = ndiff.bmm_backward(prob.reshape(batch, n, n), v, deh)
        dscores = ndiff.softmax_rows_backward(prob, dprob3.reshape(rows, n))
        dscores = dscores.reshape(batch, n, n)
        if dims.scaled_attention:
            dscores = dscores / np.sqrt(dh)
        dq, dkt = ndiff.bmm_backward(q, k.swapaxes(1, 2), dscores)
        dk = dkt.swapaxes(1, 2)
        for part, dmat in (("Q", dq), ("K", dk), ("V", dv)):
            dcb_part, g[f"W_{part}{h}"], g[f"b_{part}{h}"] = ndiff.linear_backward(
                cache["cb"], t[f"W_{part}{h}"], dmat.reshape(rows, dh)
            )
            dcb += dcb_part
    dc = ndiff.layer_norm_backward(cache["c"], dcb)
    if dims.residual:
        dc = dc + de
    dz1 = ndiff.relu_backward(cache["z1"], dc)
    _, g["W_C"], g["b_C"] = ndiff.linear_backward(cache["x0"], t["W_C"], dz1)
    return g


def forward(feats: np.ndarray, params: NetworkParams) -> np.ndarray:
    """Soft outputs in (0, 1): (n, d_out) for one block, (B, n, d_out) batched."""
    f = np.asarray(feats, dtype=float)
    if f.ndim == 2:
        return _forward(f[None], params)[0][0]
    return _forward(f, params)[0]


def loss_and_grads(feats, labels, params: NetworkParams) -> tuple[float, dict[str, np.ndarray]]:
    """Mean base-2 BCE over a batch plus gradients for every tensor."""
    f3 = np.asarray(feats, dtype=float)
    l3 = np.asarray(labels, dtype=float)
    if f3.ndim == 2:
        f3, l3 = f3[None], l3[None]
    out3, cache = _forward(f3, params)
    flat_o = cache["o"]
    flat_t = l3.reshape(flat_o.shape)
    loss = ndiff.bce_loss(flat_o, flat_t)
    grads = _backward(ndiff.bce_loss_backward(flat_o, flat_t), cache, params)
    return loss, grads


def one_hot(pattern, symbols, config: SystemConfig) -> np.ndarray:
    """Label matrix (n, s + 1) for a subblock.

    Row ``alpha`` is one-hot over the symbol order in the first ``s``
    columns; the last column is 0 on mode-A positions and 1 on mode-B.
    """
    s = config.s_a
    out = np.zeros((config.n, s + 1))
    pset = {int(p) for p in pattern}
    for pos in range(1, config.n + 1):
        out[pos - 1, int(symbols[pos - 1]) - 1] = 1.0
        if pos not in pset:
            out[pos - 1, s] = 1.0
    return out


def decode_batch(
    outputs: np.ndarray, config: SystemConfig, lookup: IndexLookup | None = None
) -> np.ndarray:
    """Hard decisions for a (B, n, s + 1) output stack, as (B, p) uint8 bits.

    Pattern score of P is the summed log probability of its mode column
    (low last-column on mode-A positions, high elsewhere); ties break
    toward the lowest pattern index, symbol ties toward the lowest symbol.
    """
    tabs = (
        pattern_tables(config)
        if lookup is None
        else build_pattern_tables(lookup, config.s_a, config.s_b)
    )
    o3 = np.clip(np.asarray(outputs, dtype=float), ndiff.BCE_CLIP, 1.0 - ndiff.BCE_CLIP)
    s = config.s_a
    last = o3[..., -1]
    scores = np.log1p(-last) @ tabs.mask_a.T + np.log(last) @ tabs.mask_b.T
    pidx = scores.argmax(axis=1)
    best = o3[..., :s].argmax(axis=2)
    a_pos = tabs.a_positions[pidx]
    b_pos = tabs.b_positions[pidx]
    ja = np.take_along_axis(best, a_pos - 1, axis=1)
    jb = np.take_along_axis(best, b_pos - 1, axis=1)
    batch = o3.shape[0]
    return np.concatenate(
        [
            tabs.index_bit_rows[pidx],
            tabs.a_symbol_bits[ja].reshape(batch, -1),
            tabs.b_symbol_bits[jb].reshape(batch, -1),
        ],
        axis=1,
    )


def decode(
    outputs: np.ndarray, config: SystemConfig, lookup: IndexLookup | None = None
) -> SubblockBits:
    """Hard decision on one (n, s + 1) output matrix."""
    row = decode_batch(np.asarray(outputs)[None], config, lookup)[0]
    return SubblockBits.from_flat(row, config)


@lru_cache(maxsize=8)
def _candidate_labels(config: SystemConfig) -> np.ndarray:
    cand = _default_candidates(config)
    labels = np.stack(
        [one_hot(*subblock_layout(sb, config), config) for sb in cand.bits]
    )
    labels.setflags(write=False)
    return labels


def sample_batch(
    rng: np.random.Generator, count: int, config: SystemConfig, n0: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Simulate ``count`` labelled blocks: (features, labels, true bits).

    Uniform subblock bits, a fresh channel and noise draw per block.
    """
    cand = _default_candidates(config)
    labels = _candidate_labels(config)
    idx = rng.integers(0, len(cand.bits), size=count)
    x = cand.blocks[idx]
    h = draw_channel(rng, config.n, count)
    y = h * x + draw_noise(rng, config.n, n0, count)
    return features(y, h), labels[idx], cand.bit_rows[idx]


@dataclass(frozen=True)
class TrainConfig:
    """Training protocol: schedule, optimizer step size, data SNR, seed."""

    epochs: int = 100
    batches_per_epoch: int = 600
    batch_size: int = 1000
    learning_rate: float = 1e-3
    train_snr_db: float = 15.0
    seed: int = 0

    def __post_init__(self):
        if min(self.epochs, self.batches_per_epoch, self.batch_size) < 1:
            raise ConfigError("epochs, batches and batch size must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")


def train(
    train_cfg: TrainConfig,
    config: SystemConfig,
    dims: NetDims,
    rng: np.random.Generator | None = None,
) -> tuple[NetworkParams, list[float]]:
    """Adam/BCE training on freshly simulated batches.

    One random generator (seeded from the config unless given) drives the
    initialization and every batch draw, so runs are reproducible.
    Returns the trained parameters and the per-epoch mean loss.
    """
    if rng is None:
        rng = np.random.default_rng(train_cfg.seed)
    params = init_params(rng, dims, config)
    opt = ndiff.Adam(lr=train_cfg.learning_rate)
    n0 = snr_to_n0(train_cfg.train_snr_db)
    history: list[float] = []
    for _ in range(train_cfg.epochs):
        total = 0.0
        for _ in range(train_cfg.batches_per_epoch):
            feats, labels, _ = sample_batch(rng, train_cfg.batch_size, config, n0)
            loss, grads = loss_and_grads(feats, labels, params)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"loss became {loss}")
            opt.step(params.tensors, grads)
            total += loss
        history.append(total / train_cfg.batches_per_epoch)
    return params, history


def save_params(params: NetworkParams, path) -> None:
    """Write the binary weights file (layout documented in the README)."""
    if params.config is None:
        raise ValueError("params carry no system config; set NetworkParams.config")
    shapes = tensor_shapes(params.dims)
    cfg = params.config
    dims = params.dims
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<I", WEIGHTS_VERSION))
        fh.write(struct.pack("<4I", cfg.n, cfg.k, cfg.s_a, cfg.s_b))
        fh.write(struct.pack("<3I", dims.d_model, dims.heads, dims.d_mlp))
        fh.write(struct.pack("<I", len(shapes)))
        for name, (rows, cols) in shapes.items():
            arr = params.tensors[name]
            if arr.shape != (rows, cols):
                raise ValueError(f"tensor {name} has shape {arr.shape}, expected {(rows, cols)}")
            fh.write(struct.pack("<H", len(name)))
            fh.write(name.encode("ascii"))
            fh.write(struct.pack("<II", rows, cols))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, nbytes: int) -> bytes:
        end = self.offset + nbytes
        if end > len(self.data):
            raise WeightsTruncatedError(
                f"needed {nbytes} bytes at offset {self.offset}, file has {len(self.data)}"
            )
        chunk = self.data[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_params(path) -> NetworkParams:
    """Read a weights file; the inverse of :func:`save_params` bit for bit."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    magic = reader.take(len(WEIGHTS_MAGIC))
    if magic != WEIGHTS_MAGIC:
        raise WeightsMagicError(f"bad magic {magic!r}")
    (version,) = reader.unpack("<I")
    if version != WEIGHTS_VERSION:
        raise WeightsVersionError(f"unsupported version {version}")
    n, k, s_a, s_b = reader.unpack("<4I")
    d_model, heads, d_mlp = reader.unpack("<3I")
    try:
        config = SystemConfig(n, k, s_a, s_b)
        dims = NetDims(n=n, d_model=d_model, d_mlp=d_mlp, d_out=s_a + 1, heads=heads)
    except ConfigError as exc:
        raise WeightsFormatError(f"invalid header: {exc}") from exc
    shapes = tensor_shapes(dims)
    (count,) = reader.unpack("<I")
    if count != len(shapes):
        raise WeightsShapeError(f"expected {len(shapes)} tensors, header says {count}")
    tensors: dict[str, np.ndarray] = {}
    for expected_name, (rows, cols) in shapes.items():
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("ascii", errors="replace")
        if name != expected_name:
            raise WeightsShapeError(f"expected tensor {expected_name!r}, found {name!r}")
        r, c = reader.unpack("<II")
        if (r, c) != (rows, cols):
            raise WeightsShapeError(
                f"tensor {name} declares shape {(r, c)}, dims imply {(rows, cols)}"
            )
        payload = reader.take(8 * rows * cols)
        tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()
    if reader.offset != len(reader.data):
        raise WeightsFormatError(
            f"{len(reader.data) - reader.offset} trailing bytes after last tensor"
        )
    return NetworkParams(dims, tensors, config)
