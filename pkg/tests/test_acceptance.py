"""Acceptance criteria, one test per criterion, each with its time budget.

A summary line per criterion is printed at the end of the pytest run.
"""

import os
import struct
import time
from pathlib import Path

import numpy as np
import pytest

from stereosr import bipam, cli, imaging, losses, network, occlusion, reference, synthetic
from stereosr import tensor as T
from stereosr.imaging import StereoPair
from stereosr.network import ArchiveError
from stereosr.occlusion import AttentionMaps


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        if exc[0] is None:
            assert self.elapsed < self.seconds, f"took {self.elapsed:.2f} s, budget {self.seconds} s"


def row_stochastic(rng, h, w):
    m = rng.random((h, w, w)) ** rng.uniform(1, 6)
    return (m / m.sum(axis=2, keepdims=True)).astype(np.float32)


def rel_err(got, want):
    got = np.asarray(got, np.float64)
    want = np.asarray(want, np.float64)
    return float(np.max(np.abs(got - want) / np.maximum(1.0, np.abs(want))))


@pytest.mark.criterion("parameter-count fidelity")
def test_parameter_count_fidelity():
    with Budget(1.0):
        n2 = network.param_count(network.random_archive(2))
        n4 = network.param_count(network.random_archive(4))
    print(f"params_2x={n2} params_4x={n4}")
    assert abs(n2 / 1.37e6 - 1) <= 0.10
    assert abs(n4 / 1.42e6 - 1) <= 0.10


@pytest.mark.criterion("attention algebra suite")
def test_attention_algebra_suite():
    rng = np.random.default_rng(100)
    failures = []
    with Budget(10.0):
        for i in range(100):
            h, w, c = (int(v) for v in rng.integers(1, 9, 3))
            # scores and shift on a 1/256 grid so that s + shift is exact in float32
            s = (np.round(rng.standard_normal((h, w, w)) * rng.uniform(0.1, 30) * 256) / 256).astype(np.float32)
            maps = bipam.attention_from_scores(s)
            ok = all(m.min() >= 0 and np.max(np.abs(m.astype(np.float64).sum(axis=2) - 1)) <= 1e-6
                     for m in maps)
            shifted = bipam.attention_from_scores(s + np.float32(np.round(rng.uniform(-50, 50) * 256) / 256))
            ok &= all(np.array_equal(a, b) for a, b in zip(maps, shifted))
            f = (rng.standard_normal((h, w, c)) * 5 + rng.uniform(-5, 5)).astype(np.float32)
            ok &= np.max(np.abs(bipam.whiten(f).astype(np.float64).mean(axis=1))) <= 1e-6
            ok &= np.array_equal(T.transpose_last2(T.transpose_last2(s)), s)
            r = int(rng.integers(1, 4))
            x = rng.standard_normal((h, w, c * r * r)).astype(np.float32)
            ok &= np.array_equal(T.pixel_unshuffle(T.pixel_shuffle(x, r), r), x)
            if not ok:
                failures.append(i)
    assert failures == []


@pytest.mark.criterion("oracle equivalence")
def test_oracle_equivalence():
    rng = np.random.default_rng(25)
    worst = 0.0
    with Budget(30.0):
        for _ in range(25):
            spec = synthetic.random_spec(rng, width=int(rng.integers(16, 65)), height=int(rng.integers(4, 17)))
            scene = synthetic.render_scene(spec)
            maps = synthetic.analytic_attention(scene.disparity_l, scene.occ_l)
            got = bipam.convert_features(maps.m_rl, scene.pair.right)
            want = synthetic.disparity_warp(scene.pair.right, scene.disparity_l, scene.occ_l)
            worst = max(worst, float(np.max(np.abs(got - want)[~scene.occ_l], initial=0.0)))
    print(f"max_abs_err={worst:.3g}")
    assert worst <= 1e-6


@pytest.mark.criterion("occlusion detection on the two-object toy scene")
def test_two_object_occlusion_detection():
    with Budget(5.0):
        scene = synthetic.render_scene(synthetic.two_object_spec())
        maps = synthetic.analytic_attention(scene.disparity_l, scene.occ_l)
        v_l, v_r = occlusion.detect_occlusions(maps)
        bands = synthetic.occlusion_bands(scene)
    disparities = sorted({int(d) for d in np.unique(scene.disparity_l)})
    assert disparities == [0, 5, 10]
    for v, occ in ((v_l, scene.occ_l), (v_r, scene.occ_r)):
        assert occ.any()
        assert v[occ].max() < 0.2
        assert v[~occ].min() > 0.95
    assert bands and all(run == step for _, _, run, step in bands)
    assert {run for _, _, run, _ in bands} == {5, 10}


@pytest.mark.criterion("cycle-consistency bounds")
def test_cycle_consistency_bounds():
    rng = np.random.default_rng(7)
    with Budget(5.0):
        for _ in range(100):
            h, w = int(rng.integers(1, 6)), int(rng.integers(1, 17))
            maps = AttentionMaps(row_stochastic(rng, h, w), row_stochastic(rng, h, w))
            p = occlusion.cycle_probability(maps)
            relaxed = occlusion.relaxed_cycle_probability(maps, 2)
            # float32 row sums may exceed one by an ulp or two
            assert p.min() >= 0 and p.max() <= 1 + 1e-6
            assert np.all(relaxed >= p)
            assert np.array_equal(occlusion.relaxed_cycle_probability(maps, 0), p)


@pytest.mark.criterion("loss fixed points")
def test_loss_fixed_points():
    rng = np.random.default_rng(3)
    with Budget(5.0):
        h, w = 5, 7
        eye = np.broadcast_to(np.eye(w, dtype=np.float32), (h, w, w)).copy()
        ident = AttentionMaps(eye, eye.copy())
        x = rng.random((h, w, 3)).astype(np.float32)
        ones = np.ones((h, w), np.float32)
        terms = {
            "sr": losses.sr_loss((x, x), (x, x)),
            "photo": losses.photometric_residual_loss(x, x, ident, ones, ones),
            "cycle": losses.cycle_residual_loss(x, rng.random((h, w, 3)), ident, ones, ones),
            "smooth": losses.smoothness_loss(ident),
            "cons": losses.consistency_residual_loss(x, x, ident, ones, ones),
        }
        for d in range(w):
            m = np.zeros((h, w, w), np.float32)
            m[:, np.arange(w), (np.arange(w) - d) % w] = 1
            assert losses.smoothness_loss(AttentionMaps(m, np.swapaxes(m, 1, 2).copy())) == 0.0
        parts = rng.random(5)
        rep = losses.total_loss(*parts)
    assert all(v <= 1e-7 for v in terms.values()), terms
    assert rep.lam == 0.1
    assert abs(rep.total - (parts[0] + 0.1 * parts[1:].sum())) <= 1e-6


@pytest.mark.criterion("loss oracle equivalence")
def test_loss_oracle_equivalence():
    rng = np.random.default_rng(11)
    worst = 0.0
    with Budget(10.0):
        for _ in range(12):
            h, w = (int(v) for v in rng.integers(1, 7, 2))
            m1, m2 = row_stochastic(rng, h, w), row_stochastic(rng, h, w)
            maps = AttentionMaps(m1, m2)
            x_l, x_r, y_l, y_r = (rng.random((h, w, 3)).astype(np.float32) for _ in range(4))
            v_l, v_r = (rng.random((h, w)).astype(np.float32) for _ in range(2))
            hr = (rng.random((h, w, 3)), rng.random((h, w, 3)))
            pairs = [
                (losses.sr_loss((x_l, x_r), hr), reference.l1_mean(x_l, hr[0]) + reference.l1_mean(x_r, hr[1])),
                (losses.photometric_residual_loss(x_l, x_r, maps, v_l, v_r),
                 reference.photometric_loss(x_l, x_r, m1, m2, v_l, v_r)),
                (losses.cycle_residual_loss(x_l, x_r, maps, v_l, v_r),
                 reference.cycle_loss(x_l, x_r, m1, m2, v_l, v_r)),
                (losses.smoothness_loss(maps), reference.smoothness_loss(maps)),
                (losses.consistency_residual_loss(y_l, y_r, maps, v_l, v_r),
                 reference.photometric_loss(y_l, y_r, m1, m2, v_l, v_r)),
            ]
            for got, want in pairs:
                worst = max(worst, abs(got - want) / max(abs(want), 1e-12) if want else abs(got))
    print(f"max_rel_err={worst:.3g}")
    assert worst <= 1e-6


@pytest.mark.criterion("network symmetry")
def test_network_symmetry():
    rng = np.random.default_rng(16)
    left, right = (rng.random((16, 24, 3)).astype(np.float32) for _ in range(2))
    with Budget(30.0):
        w = network.random_archive(2, seed=17)
        a = network.ipassr_forward(StereoPair(left, right), w)
        b = network.ipassr_forward(StereoPair(right, left), w)
        again = network.ipassr_forward(StereoPair(left, right), w)
        wm = network.random_archive(2, seed=18, mirror_symmetric=True)
        c = network.ipassr_forward(StereoPair(left, right), wm)
        d = network.ipassr_forward(StereoPair(right[:, ::-1], left[:, ::-1]), wm)
    swap = max(np.max(np.abs(a.sr.left - b.sr.right)), np.max(np.abs(a.sr.right - b.sr.left)))
    mirror = max(np.max(np.abs(d.sr.left - c.sr.right[:, ::-1])), np.max(np.abs(d.sr.right - c.sr.left[:, ::-1])))
    print(f"swap_err={swap:.3g} mirror_err={mirror:.3g}")
    assert swap <= 1e-5
    assert mirror <= 1e-5
    assert np.array_equal(a.sr.left, again.sr.left) and np.array_equal(a.sr.right, again.sr.right)


@pytest.mark.criterion("kernel oracles")
def test_kernel_oracles():
    rng = np.random.default_rng(6)
    worst = 0.0
    with Budget(10.0):
        for _ in range(6):
            h, w, cin, cout = (int(v) for v in rng.integers(1, 7, 4))
            k = int(rng.choice([1, 3]))
            x = rng.standard_normal((h, w, cin)).astype(np.float32)
            kern = rng.standard_normal((k, k, cin, cout)).astype(np.float32)
            b = rng.standard_normal(cout).astype(np.float32)
            worst = max(worst, rel_err(T.conv2d(x, kern, b), reference.conv2d(x, kern, b)))
            n, p, q, r = (int(v) for v in rng.integers(1, 8, 4))
            a = rng.standard_normal((n, p, q)).astype(np.float32)
            bb = rng.standard_normal((n, q, r)).astype(np.float32)
            worst = max(worst, rel_err(T.batch_matmul(a, bb), reference.batch_matmul(a, bb)))
        xg = rng.standard_normal((4, 5, 8)).astype(np.float32)
        kg = rng.standard_normal((3, 3, 2, 8)).astype(np.float32)
        bg = rng.standard_normal(8).astype(np.float32)
        worst = max(worst, rel_err(T.conv2d(xg, kg, bg, groups=4), reference.conv2d(xg, kg, bg, 4)))
    print(f"max_rel_err={worst:.3g}")
    assert worst <= 1e-6


@pytest.mark.criterion("weight archive round-trip")
def test_weight_archive_roundtrip(tmp_path):
    with Budget(5.0):
        for scale in network.SCALES:
            w = network.random_archive(scale, seed=scale)
            path = tmp_path / f"w{scale}.ipsr"
            network.save_archive(w, path)
            back = network.load_archive(path)
            assert back.scale == scale and list(back.tensors) == list(w.tensors)
            for name, t in w.tensors.items():
                assert np.array_equal(back.tensors[name].view(np.uint32), t.view(np.uint32))
            data = bytearray(path.read_bytes())
            data[0:4] = b"IPSX"
            path.write_bytes(bytes(data))
            with pytest.raises(ArchiveError, match="bad magic"):
                network.load_archive(path)
            data[0:4] = b"IPSR"
            data[4:8] = struct.pack("<I", 99)
            path.write_bytes(bytes(data))
            with pytest.raises(ArchiveError, match="version"):
                network.load_archive(path)
            path.write_bytes(bytes(data[:10]))
            with pytest.raises(ArchiveError, match="truncated"):
                network.load_archive(path)


@pytest.mark.criterion("end-to-end smoke")
def test_end_to_end_smoke(tmp_path, capsys):
    with Budget(60.0):
        scene = synthetic.render_scene(synthetic.SceneSpec(
            48, 32, (synthetic.Layer(10, 4, 14, 20, 6, "noise", 1), synthetic.Layer(30, 10, 12, 12, 3, "stripes", 2)),
            background_seed=5))
        imaging.save_png(scene.pair.left, tmp_path / "l.png")
        imaging.save_png(scene.pair.right, tmp_path / "r.png")
        network.save_archive(network.random_archive(2, seed=4), tmp_path / "w.ipsr")
        out = tmp_path / "out"
        code = cli.main(["sr", str(tmp_path / "l.png"), str(tmp_path / "r.png"), "--scale", "2",
                         "--weights", str(tmp_path / "w.ipsr"), "--out-dir", str(out)])
        assert code == 0
        for name in ("sr_left.png", "sr_right.png"):
            img = imaging.load_png(out / name)
            assert img.shape == (64, 96, 3)
            assert 0 <= img.min() and img.max() <= 1
        for name in ("valid_mask_left.png", "valid_mask_right.png", "attention_profile.png"):
            assert (out / name).is_file()
        assert cli.main(["selftest"]) == 0
    capsys.readouterr()


KITTI_DIR = os.environ.get("STEREOSR_KITTI_DIR")
KITTI_WEIGHTS = os.environ.get("STEREOSR_KITTI_WEIGHTS")


@pytest.mark.criterion("KITTI 2015 4x PSNR (optional)")
@pytest.mark.skipif(not (KITTI_DIR and KITTI_WEIGHTS),
                    reason="set STEREOSR_KITTI_DIR (HR <scene>_L/_R.png) and STEREOSR_KITTI_WEIGHTS (4x archive)")
def test_kitti_psnr_optional():
    w = network.unpack(network.load_archive(KITTI_WEIGHTS))
    assert w.scale == 4
    scores = []
    for left_path in sorted(Path(KITTI_DIR).glob("*_L.png")):
        hr = [imaging.load_png(p) for p in (left_path, left_path.with_name(left_path.name[:-6] + "_R.png"))]
        hr = [v[: v.shape[0] // 4 * 4, : v.shape[1] // 4 * 4] for v in hr]
        lr = StereoPair(*(imaging.bicubic_resize(v, 0.25) for v in hr))
        sr = network.ipassr_forward(lr, w).sr
        scores.append(imaging.evaluate_pair(sr, StereoPair(*hr), "cropped-left").psnr_db)
    assert scores
    assert abs(np.mean(scores) - 25.61) <= 0.1
