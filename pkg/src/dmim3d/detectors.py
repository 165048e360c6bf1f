"""Classical baseline detectors.

Two receivers over the same per-entry fading model: an exhaustive
minimum-distance search over every transmittable subblock, and a
per-subcarrier log-likelihood-ratio detector that projects onto the legal
index patterns before demapping symbols.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .constellation import (
    ConfigError,
    Constellation3D,
    IndexLookup,
    SubblockBits,
    SystemConfig,
    build_pattern_tables,
    default_constellations,
    default_lookup,
    encode_subblock,
    pattern_tables,
)

__all__ = [
    "MAX_ENUM_BITS",
    "CandidateSet",
    "enumerate_candidates",
    "ml_detect",
    "llr_metric",
    "llr_detect",
]

# Exhaustive enumeration is capped to keep candidate sets desk-sized.
MAX_ENUM_BITS = 24


@dataclass(frozen=True)
class CandidateSet:
    """Every transmittable subblock for a config, in bit-lexicographic order.

    ``blocks[i]`` is the (3, n) transmit block for ``bits[i]``; ``bit_rows``
    is the same bit content as a ``(count, p)`` uint8 array.
    """

    config: SystemConfig
    bits: tuple[SubblockBits, ...]
    blocks: np.ndarray
    bit_rows: np.ndarray


def enumerate_candidates(
    config: SystemConfig,
    constellations: tuple[Constellation3D, Constellation3D] | None = None,
    lookup: IndexLookup | None = None,
) -> CandidateSet:
    """Build the full candidate set (2**p entries)."""
    p = config.p
    if p > MAX_ENUM_BITS:
        raise ConfigError(f"candidate enumeration needs p <= {MAX_ENUM_BITS}, got {p}")
    count = 1 << p
    bits_list = []
    blocks = np.empty((count, 3, config.n))
    rows = np.empty((count, p), dtype=np.uint8)
    for v in range(count):
        flat = tuple((v >> (p - 1 - i)) & 1 for i in range(p))
        sb = SubblockBits.from_flat(flat, config)
        bits_list.append(sb)
        blocks[v] = encode_subblock(sb, config, constellations, lookup)
        rows[v] = flat
    blocks.setflags(write=False)
    rows.setflags(write=False)
    return CandidateSet(config, tuple(bits_list), blocks, rows)


@lru_cache(maxsize=8)
def _default_candidates(config: SystemConfig) -> CandidateSet:
    return enumerate_candidates(config)


def ml_detect(
    y: np.ndarray,
    h: np.ndarray,
    config: SystemConfig,
    candidates: CandidateSet | None = None,
) -> SubblockBits:
    """Exhaustive minimum-distance detection.

    Scans every candidate block, scoring the squared Euclidean distance
    between ``y`` and the channel-scaled candidate; ties break toward the
    lowest enumeration index.
    """
    cand = candidates if candidates is not None else _default_candidates(config)
    best = np.inf
    best_i = 0
    for i, xb in enumerate(cand.blocks):
        z = y - h * xb
        m = np.vdot(z, z).real
        if m < best:
            best = m
            best_i = i
    return cand.bits[best_i]


def _mode_distances(y: np.ndarray, h: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Distance table (n, len(points)): subcarrier vs channel-scaled point."""
    hx = np.swapaxes(h, -2, -1)[:, None, :] * points
    d = np.swapaxes(y, -2, -1)[:, None, :] - hx
    return (d.real * d.real + d.imag * d.imag).sum(axis=-1)


def _logsumexp_rows(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1)
    return m + np.log(np.exp(x - m[..., None]).sum(axis=-1))


def llr_metric(
    y: np.ndarray,
    h: np.ndarray,
    n0: float,
    constellations: tuple[Constellation3D, Constellation3D],
) -> np.ndarray:
    """Per-subcarrier log ratio of mode-A vs mode-B likelihood sums.

    Positive values favor mode A.  Computed in the log domain, so the
    result stays finite even for vanishing noise variance.  Equal priors
    over modes and symbols are assumed.
    """
    if n0 <= 0:
        raise ValueError(f"noise variance must be positive, got {n0}")
    const_a, const_b = constellations
    e = _mode_distances(y, h, np.vstack([const_a.points, const_b.points]))
    scaled = e * (-1.0 / n0)
    s_a = const_a.size
    return _logsumexp_rows(scaled[:, :s_a]) - _logsumexp_rows(scaled[:, s_a:])


@lru_cache(maxsize=8)
def _llr_tables(config: SystemConfig):
    const_a, const_b = default_constellations(config.s_a)
    points = np.vstack([const_a.points, const_b.points])
    points.setflags(write=False)
    return points, pattern_tables(config)


def llr_detect(
    y: np.ndarray,
    h: np.ndarray,
    n0: float,
    config: SystemConfig,
    constellations: tuple[Constellation3D, Constellation3D] | None = None,
    lookup: IndexLookup | None = None,
) -> SubblockBits:
    """Log-ratio detection with legal-pattern projection.

    Picks the legal pattern maximizing the summed log ratios of its mode-A
    positions, then demaps each subcarrier against its assigned
    constellation through the channel-scaled distances.
    """
    if n0 <= 0:
        raise ValueError(f"noise variance must be positive, got {n0}")
    if constellations is None and lookup is None:
        points, tabs = _llr_tables(config)
    else:
        const_a, const_b = (
            constellations
            if constellations is not None
            else default_constellations(config.s_a)
        )
        points = np.vstack([const_a.points, const_b.points])
        tabs = build_pattern_tables(
            lookup if lookup is not None else default_lookup(config.n, config.k),
            config.s_a,
            config.s_b,
        )
    s = config.s_a
    e = _mode_distances(y, h, points)
    scaled = e.reshape(config.n, 2, s) * (-1.0 / n0)
    lse = _logsumexp_rows(scaled)
    delta = lse[:, 0] - lse[:, 1]
    pidx = int(np.argmax(tabs.mask_a @ delta))
    ja = e[:, :s].argmin(axis=1)
    jb = e[:, s:].argmin(axis=1)
    a_pos = tabs.a_positions[pidx]
    b_pos = tabs.b_positions[pidx]
    sym_bits = np.concatenate(
        [tabs.a_symbol_bits[ja[a_pos - 1]].ravel(), tabs.b_symbol_bits[jb[b_pos - 1]].ravel()]
    )
    index_bits = tuple(int(b) for b in tabs.index_bit_rows[pidx])
    return SubblockBits(index_bits, tuple(int(b) for b in sym_bits))
