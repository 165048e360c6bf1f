"""Dual-mode 3D constellations and index-modulation bit mapping.

A subblock spans ``n`` subcarriers and carries ``p = p1 + p2`` bits: the
``p1`` index bits pick which ``k`` subcarriers use the mode-A constellation
(the remaining ``n - k`` use mode B), and the ``p2`` symbol bits pick one 3D
point per subcarrier.  Subcarrier positions and symbol indices are 1-based,
matching the usual lookup-table notation; symbol ``j`` maps to the plain
binary code of ``j - 1``, most significant bit first.  Within the symbol
bits, the mode-A groups come first (in ascending subcarrier position),
followed by the mode-B groups.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations, islice

import numpy as np

__all__ = [
    "ConfigError",
    "IllegalPatternError",
    "SystemConfig",
    "Constellation3D",
    "IndexLookup",
    "SubblockBits",
    "bit_budget",
    "default_constellations",
    "default_lookup",
    "bits_to_pattern",
    "pattern_to_bits",
    "subblock_layout",
    "encode_subblock",
    "decode_subblock",
    "nearest_symbol",
    "pattern_tables",
]


class ConfigError(ValueError):
    """System parameters outside the supported design space."""


class IllegalPatternError(ValueError):
    """A mode-A position set that is not in the lookup table."""


def _is_pow2(x: int) -> bool:
    return x >= 2 and (x & (x - 1)) == 0


def bit_budget(n: int, k: int, s_a: int, s_b: int) -> tuple[int, int, int]:
    """Bits per subblock as ``(index_bits, symbol_bits, total)``.

    The index part is floor(log2(C(n, k))); the symbol part is
    ``k*log2(s_a) + (n-k)*log2(s_b)``.  Constellation sizes must be powers
    of two and ``0 < k < n``.
    """
    if n < 2 or not 0 < k < n:
        raise ConfigError(f"need 0 < k < n with n >= 2, got n={n}, k={k}")
    if not (_is_pow2(s_a) and _is_pow2(s_b)):
        raise ConfigError(
            f"constellation sizes must be powers of two >= 2, got {s_a}, {s_b}"
        )
    p1 = math.comb(n, k).bit_length() - 1
    p2 = k * (s_a.bit_length() - 1) + (n - k) * (s_b.bit_length() - 1)
    return p1, p2, p1 + p2


@dataclass(frozen=True)
class SystemConfig:
    """Subblock geometry: subcarriers per subblock, mode-A count, set sizes."""

    n: int
    k: int
    s_a: int
    s_b: int

    def __post_init__(self):
        if self.s_a != self.s_b:
            raise ConfigError("unequal constellation sizes are not supported")
        bit_budget(self.n, self.k, self.s_a, self.s_b)

    @property
    def p1(self) -> int:
        return bit_budget(self.n, self.k, self.s_a, self.s_b)[0]

    @property
    def p2(self) -> int:
        return bit_budget(self.n, self.k, self.s_a, self.s_b)[1]

    @property
    def p(self) -> int:
        return bit_budget(self.n, self.k, self.s_a, self.s_b)[2]


@dataclass
class Constellation3D:
    """An ordered set of 3D signal points with unit mean energy.

    ``points`` has shape ``(size, 3)``; row ``j - 1`` is symbol ``j``.
    Treat instances as immutable; the point array is marked read-only.
    """

    mode: str
    points: np.ndarray

    def __post_init__(self):
        if self.mode not in ("A", "B"):
            raise ConfigError(f"mode must be 'A' or 'B', got {self.mode!r}")
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 2:
            raise ConfigError("constellation points must have shape (s, 3), s >= 2")
        pts.setflags(write=False)
        self.points = pts

    @property
    def size(self) -> int:
        return self.points.shape[0]


def default_constellations(s: int) -> tuple[Constellation3D, Constellation3D]:
    """Built-in disjoint unit-energy point sets for the two modes.

    Deterministic by construction: antipodal axis pairs for ``s=2``, a unit
    tetrahedron and its negation for ``s=4``.  The geometry is pluggable;
    any pair of ``Constellation3D`` objects with disjoint point sets works
    wherever these defaults are accepted.
    """
    if s == 2:
        a = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
        b = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
    elif s == 4:
        a = np.array(
            [
                [1.0, 1.0, 1.0],
                [1.0, -1.0, -1.0],
                [-1.0, 1.0, -1.0],
                [-1.0, -1.0, 1.0],
            ]
        ) / np.sqrt(3.0)
        b = -a
    else:
        raise ConfigError(f"no built-in constellation of size {s}")
    return Constellation3D("A", a), Constellation3D("B", b)


# Mode-A position sets for (n, k) = (4, 2), in index-bit order 00, 01, 10, 11.
_TABLE_4_2 = ((1, 2), (2, 3), (3, 4), (1, 4))


@dataclass(frozen=True)
class IndexLookup:
    """Bit-indexed table of mode-A position sets (1-based, sorted)."""

    n: int
    k: int
    patterns: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        p1 = bit_budget(self.n, self.k, 2, 2)[0]
        if len(self.patterns) != 1 << p1:
            raise ConfigError(
                f"lookup needs {1 << p1} patterns for (n,k)=({self.n},{self.k})"
            )
        seen = set()
        for pat in self.patterns:
            if len(pat) != self.k or tuple(sorted(pat)) != pat:
                raise ConfigError(f"pattern {pat} must be {self.k} sorted positions")
            if not all(1 <= pos <= self.n for pos in pat):
                raise ConfigError(f"pattern {pat} has positions outside 1..{self.n}")
            seen.add(pat)
        if len(seen) != len(self.patterns):
            raise ConfigError("lookup patterns must be distinct")

    @property
    def index_bits(self) -> int:
        return (len(self.patterns) - 1).bit_length()

    def index_of(self, pattern) -> int:
        key = tuple(sorted(int(p) for p in pattern))
        try:
            return self.patterns.index(key)
        except ValueError:
            raise IllegalPatternError(f"{key} is not a legal mode-A pattern") from None


@lru_cache(maxsize=None)
def default_lookup(n: int, k: int) -> IndexLookup:
    """The lookup table for (4, 2); first-in-lexicographic subsets otherwise."""
    p1 = bit_budget(n, k, 2, 2)[0]
    if (n, k) == (4, 2):
        patterns = _TABLE_4_2
    else:
        patterns = tuple(islice(combinations(range(1, n + 1), k), 1 << p1))
    return IndexLookup(n, k, patterns)


def bits_to_pattern(index_bits, lookup: IndexLookup) -> tuple[int, ...]:
    """Mode-A positions selected by the index bits (most significant first)."""
    bits = [int(b) for b in index_bits]
    if len(bits) != lookup.index_bits or any(b not in (0, 1) for b in bits):
        raise ValueError(f"expected {lookup.index_bits} index bits, got {index_bits!r}")
    idx = 0
    for b in bits:
        idx = (idx << 1) | b
    return lookup.patterns[idx]


def pattern_to_bits(pattern, lookup: IndexLookup) -> tuple[int, ...]:
    """Inverse of :func:`bits_to_pattern`; raises ``IllegalPatternError``."""
    idx = lookup.index_of(pattern)
    width = lookup.index_bits
    return tuple((idx >> (width - 1 - i)) & 1 for i in range(width))


@dataclass(frozen=True)
class SubblockBits:
    """Index bits plus symbol bits for one subblock."""

    index_bits: tuple[int, ...]
    symbol_bits: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(b) for b in self.index_bits)
        sym = tuple(int(b) for b in self.symbol_bits)
        if any(b not in (0, 1) for b in idx + sym):
            raise ValueError("bits must be 0 or 1")
        object.__setattr__(self, "index_bits", idx)
        object.__setattr__(self, "symbol_bits", sym)

    @property
    def bits(self) -> tuple[int, ...]:
        return self.index_bits + self.symbol_bits

    @classmethod
    def from_flat(cls, bits, config: SystemConfig) -> "SubblockBits":
        flat = tuple(int(b) for b in bits)
        if len(flat) != config.p:
            raise ValueError(f"expected {config.p} bits, got {len(flat)}")
        return cls(flat[: config.p1], flat[config.p1 :])

    def to_array(self) -> np.ndarray:
        return np.fromiter(self.bits, dtype=np.uint8)


def _bits_width(s: int) -> int:
    return s.bit_length() - 1


def _symbol_from_bits(bits) -> int:
    v = 0
    for b in bits:
        v = (v << 1) | int(b)
    return v + 1


def _symbol_to_bits(j: int, width: int) -> tuple[int, ...]:
    v = j - 1
    return tuple((v >> (width - 1 - i)) & 1 for i in range(width))


def subblock_layout(
    bits: SubblockBits, config: SystemConfig, lookup: IndexLookup | None = None
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Expand subblock bits into (mode-A pattern, per-subcarrier symbol index).

    The returned ``symbols`` tuple holds one 1-based symbol index per
    subcarrier, interpreted within whichever constellation that subcarrier
    uses.
    """
    lookup = lookup if lookup is not None else default_lookup(config.n, config.k)
    if len(bits.bits) != config.p:
        raise ValueError(f"expected {config.p} bits, got {len(bits.bits)}")
    pattern = bits_to_pattern(bits.index_bits, lookup)
    wa, wb = _bits_width(config.s_a), _bits_width(config.s_b)
    sym = bits.symbol_bits
    a_groups = [sym[i * wa : (i + 1) * wa] for i in range(config.k)]
    off = config.k * wa
    b_groups = [sym[off + i * wb : off + (i + 1) * wb] for i in range(config.n - config.k)]
    b_positions = [pos for pos in range(1, config.n + 1) if pos not in pattern]
    symbols = [0] * config.n
    for grp, pos in zip(a_groups, pattern):
        symbols[pos - 1] = _symbol_from_bits(grp)
    for grp, pos in zip(b_groups, b_positions):
        symbols[pos - 1] = _symbol_from_bits(grp)
    return pattern, tuple(symbols)


def encode_subblock(
    bits: SubblockBits,
    config: SystemConfig,
    constellations: tuple[Constellation3D, Constellation3D] | None = None,
    lookup: IndexLookup | None = None,
) -> np.ndarray:
    """Map subblock bits to the real (3, n) transmit block."""
    const_a, const_b = (
        constellations if constellations is not None else default_constellations(config.s_a)
    )
    pattern, symbols = subblock_layout(bits, config, lookup)
    pset = set(pattern)
    x = np.empty((3, config.n))
    for pos in range(1, config.n + 1):
        const = const_a if pos in pset else const_b
        x[:, pos - 1] = const.points[symbols[pos - 1] - 1]
    return x


def nearest_symbol(point, constellation: Constellation3D) -> tuple[int, float]:
    """Closest symbol index (1-based) and its squared Euclidean distance.

    Ties break toward the lowest symbol index.
    """
    d = constellation.points - np.asarray(point, dtype=float)
    d2 = np.einsum("ij,ij->i", d, d)
    j = int(np.argmin(d2))
    return j + 1, float(d2[j])


def decode_subblock(
    x: np.ndarray,
    config: SystemConfig,
    constellations: tuple[Constellation3D, Constellation3D] | None = None,
    lookup: IndexLookup | None = None,
) -> SubblockBits:
    """Inverse of :func:`encode_subblock` for noiseless transmit blocks.

    Each column is assigned to the closer of the two constellations (mode A
    on ties); the resulting position set must be a legal lookup pattern.
    """
    const_a, const_b = (
        constellations if constellations is not None else default_constellations(config.s_a)
    )
    lookup = lookup if lookup is not None else default_lookup(config.n, config.k)
    x = np.asarray(x, dtype=float)
    if x.shape != (3, config.n):
        raise ValueError(f"expected shape (3, {config.n}), got {x.shape}")
    pattern = []
    symbols = []
    for pos in range(1, config.n + 1):
        ja, da = nearest_symbol(x[:, pos - 1], const_a)
        jb, db = nearest_symbol(x[:, pos - 1], const_b)
        if da <= db:
            pattern.append(pos)
            symbols.append(ja)
        else:
            symbols.append(jb)
    index_bits = pattern_to_bits(tuple(pattern), lookup)
    wa, wb = _bits_width(config.s_a), _bits_width(config.s_b)
    pset = set(pattern)
    sym_bits: list[int] = []
    for pos in pattern:
        sym_bits.extend(_symbol_to_bits(symbols[pos - 1], wa))
    for pos in range(1, config.n + 1):
        if pos not in pset:
            sym_bits.extend(_symbol_to_bits(symbols[pos - 1], wb))
    return SubblockBits(index_bits, tuple(sym_bits))


@dataclass(frozen=True)
class PatternTables:
    """Dense lookup-table companions for vectorized detection.

    ``mask_a[i]`` flags the mode-A subcarriers of pattern ``i``;
    ``a_positions`` / ``b_positions`` list them 1-based in ascending order;
    ``index_bit_rows`` holds the index bits of each pattern; the
    ``*_symbol_bits`` arrays map 0-based symbol indices to their bit groups.
    """

    lookup: IndexLookup
    mask_a: np.ndarray
    mask_b: np.ndarray
    a_positions: np.ndarray
    b_positions: np.ndarray
    index_bit_rows: np.ndarray
    a_symbol_bits: np.ndarray
    b_symbol_bits: np.ndarray


def build_pattern_tables(
    lookup: IndexLookup, s_a: int, s_b: int
) -> PatternTables:
    n, k = lookup.n, lookup.k
    count = len(lookup.patterns)
    mask_a = np.zeros((count, n))
    a_pos = np.zeros((count, k), dtype=np.intp)
    b_pos = np.zeros((count, n - k), dtype=np.intp)
    idx_rows = np.zeros((count, lookup.index_bits), dtype=np.uint8)
    for i, pat in enumerate(lookup.patterns):
        mask_a[i, [p - 1 for p in pat]] = 1.0
        a_pos[i] = pat
        b_pos[i] = [p for p in range(1, n + 1) if p not in pat]
        idx_rows[i] = _symbol_to_bits(i + 1, lookup.index_bits)
    wa, wb = _bits_width(s_a), _bits_width(s_b)
    a_sym = np.array([_symbol_to_bits(j + 1, wa) for j in range(s_a)], dtype=np.uint8)
    b_sym = np.array([_symbol_to_bits(j + 1, wb) for j in range(s_b)], dtype=np.uint8)
    for arr in (mask_a, a_pos, b_pos, idx_rows, a_sym, b_sym):
        arr.setflags(write=False)
    mask_b = 1.0 - mask_a
    mask_b.setflags(write=False)
    return PatternTables(lookup, mask_a, mask_b, a_pos, b_pos, idx_rows, a_sym, b_sym)


@lru_cache(maxsize=None)
def pattern_tables(config: SystemConfig) -> PatternTables:
    """Cached :class:`PatternTables` for the default lookup of ``config``."""
    return build_pattern_tables(
        default_lookup(config.n, config.k), config.s_a, config.s_b
    )
