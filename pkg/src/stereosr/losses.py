"""Training objectives, evaluated as plain functionals.

Every L1 term is mean-reduced over its elements and the two directions
(left and right) are summed, so magnitudes do not depend on image size.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .occlusion import AttentionMaps, check_maps
from .tensor import DTYPE, ShapeError, batch_matmul

LOSS_WEIGHT = 0.1


@dataclass(frozen=True)
class LossReport:
    sr: float
    photo_res: float
    cycle_res: float
    smooth: float
    cons_res: float
    total: float
    lam: float

    def as_lines(self):
        return [f"{k}={v:.9g}" for k, v in asdict(self).items()]


def _l1_mean(x):
    return float(np.mean(np.abs(np.asarray(x, dtype=np.float64))))


def _check_pair(a, b):
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def _check_views(x_l, x_r, maps, v_l, v_r):
    x_l, x_r = _check_pair(x_l, x_r)
    maps = check_maps(maps)
    h, w = maps.m_rl.shape[:2]
    if x_l.ndim != 3 or x_l.shape[:2] != (h, w):
        raise ShapeError(f"images {x_l.shape} do not match maps {maps.m_rl.shape}")
    v_l = np.asarray(v_l, dtype=DTYPE)
    v_r = np.asarray(v_r, dtype=DTYPE)
    if v_l.shape != (h, w) or v_r.shape != (h, w):
        raise ShapeError(f"masks {v_l.shape}/{v_r.shape} do not match maps")
    return x_l, x_r, maps, v_l[..., None], v_r[..., None]


def sr_loss(sr_pair, hr_pair) -> float:
    total = 0.0
    for sr, hr in zip(sr_pair, hr_pair):
        sr, hr = _check_pair(sr, hr)
        total += _l1_mean(sr.astype(np.float64) - hr)
    return total


def photometric_residual_loss(x_l, x_r, maps: AttentionMaps, v_l, v_r) -> float:
    x_l, x_r, maps, v_l, v_r = _check_views(x_l, x_r, maps, v_l, v_r)
    left = v_l * (x_l - batch_matmul(maps.m_rl, x_r))
    right = v_r * (x_r - batch_matmul(maps.m_lr, x_l))
    return _l1_mean(left) + _l1_mean(right)


def cycle_residual_loss(x_l, x_r, maps: AttentionMaps, v_l, v_r) -> float:
    x_l, x_r, maps, v_l, v_r = _check_views(x_l, x_r, maps, v_l, v_r)
    back_l = batch_matmul(maps.m_rl, batch_matmul(maps.m_lr, x_l))
    back_r = batch_matmul(maps.m_lr, batch_matmul(maps.m_rl, x_r))
    return _l1_mean(v_l * (x_l - back_l)) + _l1_mean(v_r * (x_r - back_r))


def smoothness_loss(maps: AttentionMaps) -> float:
    """Penalise changes of correspondence between neighbouring rows and
    along the diagonal (neighbouring column with the same disparity)."""
    total = 0.0
    for m in check_maps(maps):
        m = m.astype(np.float64)
        if m.shape[0] > 1:
            total += _l1_mean(m[:-1] - m[1:])
        if m.shape[1] > 1:
            total += _l1_mean(m[:, :-1, :-1] - m[:, 1:, 1:])
    return total


def consistency_residual_loss(y_l, y_r, maps: AttentionMaps, v_l, v_r) -> float:
    # same functional form as the photometric term, applied to SR errors
    return photometric_residual_loss(y_l, y_r, maps, v_l, v_r)


def total_loss(sr, photo_res, cycle_res, smooth, cons_res, lam=LOSS_WEIGHT) -> LossReport:
    parts = (sr, photo_res, cycle_res, smooth, cons_res)
    if any(not np.isfinite(p) or p < 0 for p in parts):
        raise ValueError(f"loss terms must be finite and non-negative, got {parts}")
    total = sr + lam * (photo_res + cycle_res + smooth + cons_res)
    return LossReport(sr, photo_res, cycle_res, smooth, cons_res, total, lam)
