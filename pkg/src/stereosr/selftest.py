"""Built-in oracle suite run by ``stereosr selftest``.

Each check compares a fast kernel against an independent reference
(naive loops, closed forms, or the synthetic-scene oracle) and reports the
largest deviation seen.
"""

import math
import os
import tempfile
import time
from dataclasses import dataclass

import numpy as np

from . import bipam, imaging, losses, network, occlusion, reference, synthetic
from . import tensor as T

_CHECKS = []


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_err: float
    tol: float
    seconds: float = 0.0

    def line(self):
        status = "pass" if self.passed else "fail"
        return (f"check={self.name} status={status} max_err={self.max_err:.3g} "
                f"tol={self.tol:.3g} seconds={self.seconds:.3f}")


def check(name, tol):
    def register(fn):
        _CHECKS.append((name, tol, fn))
        return fn
    return register


def _rel_err(got, want):
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    return float(np.max(np.abs(got - want) / np.maximum(1.0, np.abs(want))))


def _row_stochastic(rng, h, w):
    m = rng.random((h, w, w)) ** 3
    return (m / m.sum(axis=2, keepdims=True)).astype(np.float32)


@check("conv2d_naive", 1e-6)
def _conv(rng):
    x = rng.standard_normal((5, 5, 2)).astype(np.float32)
    k = rng.standard_normal((3, 3, 2, 3)).astype(np.float32)
    b = rng.standard_normal(3).astype(np.float32)
    err = _rel_err(T.conv2d(x, k, b), reference.conv2d(x, k, b))
    kg = rng.standard_normal((3, 3, 1, 4)).astype(np.float32)
    x4 = rng.standard_normal((4, 6, 2)).astype(np.float32)
    bg = rng.standard_normal(4).astype(np.float32)
    return max(err, _rel_err(T.conv2d(x4, kg, bg, groups=2), reference.conv2d(x4, kg, bg, 2)))


@check("batch_matmul_naive", 1e-6)
def _bmm(rng):
    a = rng.standard_normal((3, 4, 5)).astype(np.float32)
    b = rng.standard_normal((3, 5, 2)).astype(np.float32)
    return _rel_err(T.batch_matmul(a, b), reference.batch_matmul(a, b))


@check("softmax_direct", 1e-6)
def _softmax(rng):
    err = float(np.max(np.abs(T.softmax_lastdim([1, 2, 3]) - reference.softmax([1, 2, 3]))))
    s = T.softmax_lastdim(rng.standard_normal((4, 7, 7)) * 5)
    return max(err, float(np.max(np.abs(s.sum(axis=-1) - 1))), float(max(0, -s.min())))


@check("whiten_zero_mean", 1e-6)
def _whiten(rng):
    f = rng.standard_normal((4, 9, 5)).astype(np.float32) * 3 + 1
    return float(np.max(np.abs(bipam.whiten(f).astype(np.float64).mean(axis=1))))


@check("pixel_shuffle_roundtrip", 0.0)
def _shuffle(rng):
    x = rng.standard_normal((2, 3, 8)).astype(np.float32)
    y = T.pixel_shuffle(x, 2)
    return float(np.max(np.abs(T.pixel_unshuffle(y, 2) - x)))


@check("bicubic_kernel_sum", 1e-5)
def _bicubic(rng):
    ramp = np.tile(np.linspace(0.1, 0.9, 8)[None, :, None], (6, 1, 3)).astype(np.float32)
    ramp = ramp * np.linspace(0.8, 1.0, 6)[:, None, None].astype(np.float32)
    up = imaging.bicubic_resize(ramp, 2)
    err = 0.0
    for i in range(up.shape[0]):
        for j in range(up.shape[1]):
            want = reference.bicubic_sample(ramp[..., 0], (i + 0.5) / 2 - 0.5, (j + 0.5) / 2 - 0.5)
            err = max(err, abs(float(up[i, j, 0]) - want))
    down = imaging.bicubic_resize(up, 0.5)
    for i in range(down.shape[0]):
        for j in range(down.shape[1]):
            want = reference.bicubic_sample(up[..., 1], 2 * i + 0.5, 2 * j + 0.5, kscale=0.5)
            err = max(err, abs(float(down[i, j, 1]) - min(max(want, 0.0), 1.0)))
    const = np.full((8, 8, 3), 0.37, np.float32)
    for s in (0.25, 0.5, 2, 4):
        err = max(err, float(np.max(np.abs(imaging.bicubic_resize(const, s) - 0.37))))
    return err


@check("metrics_direct", 1e-6)
def _metrics(rng):
    a = rng.random((12, 13, 3)).astype(np.float32)
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1).astype(np.float32)
    err = abs(imaging.psnr(a, b) - reference.psnr(a, b))
    return max(err, abs(imaging.ssim(a, b) - reference.ssim(a, b)))


@check("cycle_probability_naive", 1e-6)
def _cycle(rng):
    m1, m2 = _row_stochastic(rng, 3, 7), _row_stochastic(rng, 3, 7)
    maps = occlusion.AttentionMaps(m1, m2)
    err = _rel_err(occlusion.cycle_probability(maps), reference.cycle_probability(m1, m2))
    relaxed = occlusion.relaxed_cycle_probability(maps, 2)
    return max(err, _rel_err(relaxed, reference.cycle_probability(m1, m2, 2)))


@check("two_object_occlusion_masks", 0.0)
def _two_object(rng):
    scene = synthetic.render_scene(synthetic.two_object_spec())
    maps = synthetic.analytic_attention(scene.disparity_l, scene.occ_l)
    v_l, v_r = occlusion.detect_occlusions(maps)
    bad = int(np.sum(v_l[scene.occ_l] >= 0.2) + np.sum(v_l[~scene.occ_l] <= 0.95))
    bad += int(np.sum(v_r[scene.occ_r] >= 0.2) + np.sum(v_r[~scene.occ_r] <= 0.95))
    bad += sum(run != want for _, _, run, want in synthetic.occlusion_bands(scene))
    return float(bad)


@check("warp_oracle_equivalence", 1e-6)
def _warp(rng):
    err = 0.0
    for _ in range(5):
        scene = synthetic.render_scene(synthetic.random_spec(rng))
        maps = synthetic.analytic_attention(scene.disparity_l, scene.occ_l)
        got = bipam.convert_features(maps.m_rl, scene.pair.right)
        want = synthetic.disparity_warp(scene.pair.right, scene.disparity_l, scene.occ_l)
        err = max(err, float(np.max(np.abs(got - want)[~scene.occ_l], initial=0.0)))
    return err


@check("losses_naive", 1e-6)
def _losses(rng):
    h, w = 4, 5
    m1, m2 = _row_stochastic(rng, h, w), _row_stochastic(rng, h, w)
    maps = occlusion.AttentionMaps(m1, m2)
    x_l, x_r = (rng.random((h, w, 3)).astype(np.float32) for _ in range(2))
    v_l, v_r = (rng.random((h, w)).astype(np.float32) for _ in range(2))
    pairs = [
        (losses.photometric_residual_loss(x_l, x_r, maps, v_l, v_r),
         reference.photometric_loss(x_l, x_r, m1, m2, v_l, v_r)),
        (losses.cycle_residual_loss(x_l, x_r, maps, v_l, v_r),
         reference.cycle_loss(x_l, x_r, m1, m2, v_l, v_r)),
        (losses.consistency_residual_loss(x_l, x_r, maps, v_l, v_r),
         reference.photometric_loss(x_l, x_r, m1, m2, v_l, v_r)),
        (losses.smoothness_loss(maps), reference.smoothness_loss(maps)),
        (losses.sr_loss((x_l, x_r), (x_r, x_l)), 2 * reference.l1_mean(x_l, x_r)),
    ]
    return max(_rel_err(a, b) for a, b in pairs)


@check("rdb_single_pixel", 1e-5)
def _rdb(rng):
    w = network.unpack(network.random_archive(2, seed=int(rng.integers(1 << 30))))
    x = rng.standard_normal((1, 1, network.FEATS)).astype(np.float32)
    rdb = w.extract[0]
    want = reference.rdb_pixel(x[0, 0], [(c.kernel, c.bias) for c in rdb.convs],
                               (rdb.fuse.kernel, rdb.fuse.bias))
    return _rel_err(network.rdb_forward(x, rdb)[0, 0], want)


@check("network_swap_symmetry", 1e-5)
def _swap(rng):
    archive = network.random_archive(2, seed=int(rng.integers(1 << 30)))
    left, right = (rng.random((16, 24, 3)).astype(np.float32) for _ in range(2))
    a = network.ipassr_forward(imaging.StereoPair(left, right), archive)
    b = network.ipassr_forward(imaging.StereoPair(right, left), archive)
    return float(max(np.max(np.abs(a.sr.left - b.sr.right)),
                     np.max(np.abs(a.sr.right - b.sr.left)),
                     np.max(np.abs(a.v_l - b.v_r))))


@check("archive_roundtrip", 0.0)
def _archive(rng):
    archive = network.random_archive(4, seed=int(rng.integers(1 << 30)))
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "w.ipsr")
        network.save_archive(archive, path)
        back = network.load_archive(path)
    diffs = [int(np.any(archive.tensors[k].view(np.uint32) != back.tensors[k].view(np.uint32)))
             for k in archive.tensors]
    return float(sum(diffs) + (list(back.tensors) != list(archive.tensors)))


def run_selftest(seed=0):
    results = []
    for name, tol, fn in _CHECKS:
        rng = np.random.default_rng(seed)
        t0 = time.perf_counter()
        try:
            err = float(fn(rng))
            ok = math.isfinite(err) and err <= tol
        except Exception as exc:  # a crashing check is a failing check
            err, ok = float("nan"), False
            name = f"{name}({type(exc).__name__}: {exc})"
        results.append(CheckResult(name, ok, err, tol, time.perf_counter() - t0))
    return results
