"""Bi-directional parallax attention between left and right feature maps."""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .occlusion import AttentionMaps, detect_occlusions
from .tensor import DTYPE, Conv, ShapeError

BN_EPS = 1e-5
BIPAM_CHANNELS = 256
ATTN_CHANNELS = 64
# The transition block convolves each RDB's 64-channel slice separately.
RESB_GROUPS = 4


@dataclass(frozen=True)
class BipamWeights:
    bn_scale: np.ndarray
    bn_shift: np.ndarray
    bn_mean: np.ndarray
    bn_var: np.ndarray
    resb1: Conv
    resb2: Conv
    query: Conv
    key: Conv

    def __post_init__(self):
        c = self.bn_scale.shape[0]
        for name in ("bn_shift", "bn_mean", "bn_var"):
            if getattr(self, name).shape != (c,):
                raise ShapeError(f"{name} must have shape ({c},)")
        if np.any(self.bn_var <= 0):
            raise ValueError("bn_var must be strictly positive")
        if self.query.kernel.shape[2] != c or self.key.kernel.shape[2] != c:
            raise ShapeError(f"query/key convolutions must take {c} channels")


class BipamOutput(NamedTuple):
    fused_l: np.ndarray
    fused_r: np.ndarray
    maps: AttentionMaps
    v_l: np.ndarray
    v_r: np.ndarray


def whiten(f):
    """Subtract the per-(row, channel) mean taken along the width."""
    f = np.asarray(f, dtype=DTYPE)
    if f.ndim != 3:
        raise ShapeError(f"whiten expects H x W x C, got {f.shape}")
    mean = f.mean(axis=1, keepdims=True, dtype=np.float64)
    return (f - mean).astype(DTYPE)


def score_map(fu, fv):
    """S[h, w1, w2] = <fu[h, w1], fv[h, w2]>."""
    fu = np.asarray(fu, dtype=DTYPE)
    fv = np.asarray(fv, dtype=DTYPE)
    if fu.shape != fv.shape:
        raise ShapeError(f"feature shapes differ: {fu.shape} vs {fv.shape}")
    return T.batch_matmul(fu, T.transpose_last2(fv))


def attention_from_scores(s) -> AttentionMaps:
    s = np.asarray(s, dtype=DTYPE)
    if s.ndim != 3 or s.shape[1] != s.shape[2]:
        raise ShapeError(f"score map must be H x W x W, got {s.shape}")
    return AttentionMaps(T.softmax_lastdim(s), T.softmax_lastdim(T.transpose_last2(s)))


def convert_features(m, f):
    """Warp features of one view to the other with an attention map."""
    m = np.asarray(m, dtype=DTYPE)
    f = np.asarray(f, dtype=DTYPE)
    if m.ndim != 3 or f.ndim != 3 or m.shape[:2] != f.shape[:2] or m.shape[2] != f.shape[1]:
        raise ShapeError(f"cannot convert features {f.shape} with map {m.shape}")
    return T.batch_matmul(m, f)


def fuse_with_mask(converted, target, v):
    """v * converted + (1 - v) * target, with v broadcast over channels."""
    converted, target = T._same_shape(converted, target)
    v = np.asarray(v, dtype=DTYPE)
    if v.shape != converted.shape[:2]:
        raise ShapeError(f"mask shape {v.shape} does not match features {converted.shape}")
    if v.min() < -1e-6 or v.max() > 1 + 1e-6:
        raise ValueError("valid mask values must lie in [0, 1]")
    v = v[..., None]
    return v * converted + (1 - v) * target


def batch_norm(x, scale, shift, mean, var, eps=BN_EPS):
    inv = (scale / np.sqrt(var.astype(np.float64) + eps)).astype(DTYPE)
    return (x - mean) * inv + shift


def _embed(feats, w: BipamWeights):
    if feats.ndim != 3 or feats.shape[2] != w.bn_scale.shape[0]:
        raise ShapeError(f"biPAM expects {w.bn_scale.shape[0]} channels, got {feats.shape}")
    x = batch_norm(feats, w.bn_scale, w.bn_shift, w.bn_mean, w.bn_var)
    x = x + w.resb2(T.leaky_rectify(w.resb1(x)))
    return whiten(w.query(x)), whiten(w.key(x))


def bipam_forward(feats_l, feats_r, f_l, f_r, w: BipamWeights) -> BipamOutput:
    """Cross-view interaction: attention, occlusion masks and masked fusion.

    Query and key projections are shared by both views. The score between
    left column w1 and right column w2 averages both cross pairings,
    S = (Q_l K_r^T + K_l Q_r^T) / 2, so exchanging the views transposes S
    exactly and the module treats left and right identically.
    """
    feats_l = np.asarray(feats_l, dtype=DTYPE)
    feats_r = np.asarray(feats_r, dtype=DTYPE)
    if feats_l.shape != feats_r.shape:
        raise ShapeError(f"view features differ: {feats_l.shape} vs {feats_r.shape}")
    q_l, k_l = _embed(feats_l, w)
    q_r, k_r = _embed(feats_r, w)
    s = (score_map(q_l, k_r) + score_map(k_l, q_r)) * DTYPE(0.5)
    maps = attention_from_scores(s)
    v_l, v_r = detect_occlusions(maps)
    fused_l = fuse_with_mask(convert_features(maps.m_rl, f_r), f_l, v_l)
    fused_r = fuse_with_mask(convert_features(maps.m_lr, f_l), f_r, v_r)
    return BipamOutput(fused_l, fused_r, maps, v_l, v_r)
