"""Per-entry flat-fading channel, ZF equalizer and detector features.

Transmit blocks are real ``(3, n)`` arrays, channel and received blocks are
complex ``(3, n)``.  Every function also accepts a ``(count, 3, n)`` stack
of blocks, which is what the training and sweep code uses.  The SNR
convention is ``N0 = 10**(-snr_db / 10)`` per complex entry, with subblocks
at unit mean symbol energy.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ZF_FLOOR",
    "snr_to_n0",
    "draw_channel",
    "draw_noise",
    "transmit",
    "zf_equalize",
    "features",
]

# Magnitude floor applied to channel coefficients before dividing.  Rayleigh
# draws are never exactly zero, but float underflow must not produce infs.
ZF_FLOOR = 1e-9


def snr_to_n0(snr_db: float) -> float:
    """Noise variance per complex entry at the given SNR in dB."""
    return float(10.0 ** (-float(snr_db) / 10.0))


def draw_channel(rng: np.random.Generator, n: int, count: int | None = None) -> np.ndarray:
    """I.i.d. CN(0, 1) fading coefficients, ``(3, n)`` or ``(count, 3, n)``."""
    shape = (3, n) if count is None else (count, 3, n)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) * np.sqrt(0.5)


def draw_noise(
    rng: np.random.Generator, n: int, n0: float, count: int | None = None
) -> np.ndarray:
    """I.i.d. CN(0, n0) noise, ``(3, n)`` or ``(count, 3, n)``."""
    shape = (3, n) if count is None else (count, 3, n)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) * np.sqrt(0.5 * n0)


def transmit(x: np.ndarray, h: np.ndarray, n0: float, rng: np.random.Generator) -> np.ndarray:
    """Received block: entrywise ``h * x`` plus CN(0, n0) noise."""
    x = np.asarray(x)
    h = np.asarray(h)
    if x.shape != h.shape:
        raise ValueError(f"shape mismatch: x {x.shape} vs h {h.shape}")
    count = None if x.ndim == 2 else x.shape[0]
    return h * x + draw_noise(rng, x.shape[-1], n0, count)


def zf_equalize(y: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Entrywise ``y / h`` with |h| floored at ``ZF_FLOOR`` (phase kept)."""
    y = np.asarray(y)
    h = np.asarray(h, dtype=complex)
    if y.shape != h.shape:
        raise ValueError(f"shape mismatch: y {y.shape} vs h {h.shape}")
    mag = np.abs(h)
    if np.any(mag < ZF_FLOOR):
        h = np.where(mag == 0.0, ZF_FLOOR, h)
        mag = np.where(mag == 0.0, ZF_FLOOR, mag)
        h = h * np.maximum(ZF_FLOOR / mag, 1.0)
    return y / h


def features(y: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Per-subcarrier detector features, shape ``(..., n, 9)``.

    Row ``alpha`` stacks the real and imaginary parts of the ZF-equalized
    signal with the raw received energy: ``[Re yb, Im yb, |y|^2]`` across
    the three signal dimensions.
    """
    ybar = np.swapaxes(zf_equalize(y, h), -2, -1)
    energy = np.swapaxes(np.abs(y) ** 2, -2, -1)
    return np.concatenate([ybar.real, ybar.imag, energy], axis=-1)
