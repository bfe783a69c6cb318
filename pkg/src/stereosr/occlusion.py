"""Occlusion detection from a pair of parallax attention maps.

A left pixel that is visible in the right view maps there and back to
itself with high probability; an occluded one does not. The round-trip
probability, relaxed over a few neighbouring columns, is squashed with tanh
into a valid mask (0 = occluded, 1 = matched).
"""

from typing import NamedTuple

import numpy as np

from .tensor import DTYPE, ShapeError

RELAX_PIXELS = 2
MASK_TEMPERATURE = 5.0


class AttentionMaps(NamedTuple):
    """Row-stochastic H x W x W maps; ``m_rl[h, w_left, w_right]``."""

    m_rl: np.ndarray
    m_lr: np.ndarray

    def swapped(self) -> "AttentionMaps":
        return AttentionMaps(self.m_lr, self.m_rl)


def check_maps(maps: AttentionMaps) -> AttentionMaps:
    m_rl = np.asarray(maps.m_rl, dtype=DTYPE)
    m_lr = np.asarray(maps.m_lr, dtype=DTYPE)
    if m_rl.ndim != 3 or m_rl.shape[1] != m_rl.shape[2]:
        raise ShapeError(f"attention maps must be H x W x W, got {m_rl.shape}")
    if m_lr.shape != m_rl.shape:
        raise ShapeError(f"attention maps differ in shape: {m_rl.shape} vs {m_lr.shape}")
    return AttentionMaps(m_rl, m_lr)


def _round_trip(m_rl, m_lr, delta):
    # term(h, w1) = sum_w2 m_rl[h, w1 + delta, w2] * m_lr[h, w2, w1]
    w = m_rl.shape[1]
    shifted = np.zeros_like(m_rl)
    lo, hi = max(0, -delta), min(w, w - delta)
    if lo < hi:
        shifted[:, lo:hi] = m_rl[:, lo + delta:hi + delta]
    return np.einsum("hij,hji->hi", shifted, m_lr)


def cycle_probability(maps: AttentionMaps) -> np.ndarray:
    """P(h, w1): probability that left pixel (h, w1) returns to itself."""
    m_rl, m_lr = check_maps(maps)
    return _round_trip(m_rl, m_lr, 0)


def relaxed_cycle_probability(maps: AttentionMaps, delta_max=RELAX_PIXELS) -> np.ndarray:
    """Round-trip probability accepting returns within +-delta_max columns.

    Offsets that fall outside the image contribute nothing.
    """
    if delta_max < 0:
        raise ValueError("delta_max must be >= 0")
    m_rl, m_lr = check_maps(maps)
    p = _round_trip(m_rl, m_lr, 0)
    for delta in range(-delta_max, delta_max + 1):
        if delta:
            p = p + _round_trip(m_rl, m_lr, delta)
    return p


def valid_mask(p_relaxed, tau=MASK_TEMPERATURE) -> np.ndarray:
    p = np.asarray(p_relaxed, dtype=DTYPE)
    if np.any(p < 0):
        raise ValueError("relaxed cycle probability must be non-negative")
    return np.tanh(DTYPE(tau) * p)


def detect_occlusions(maps: AttentionMaps, delta_max=RELAX_PIXELS, tau=MASK_TEMPERATURE):
    """Return the (left, right) valid masks for a pair of attention maps."""
    maps = check_maps(maps)
    v_l = valid_mask(relaxed_cycle_probability(maps, delta_max), tau)
    v_r = valid_mask(relaxed_cycle_probability(maps.swapped(), delta_max), tau)
    return v_l, v_r
