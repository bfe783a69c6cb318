"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 validation failure.
"""

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import imaging, losses, network, occlusion, selftest, synthetic
from . import tensor as T
from .bipam import bipam_forward, convert_features, fuse_with_mask
from .imaging import ImageFormatError, Protocol, StereoPair
from .network import ArchiveError
from .synthetic import SceneError
from .tensor import ShapeError

THREADS_ENV = "STEREOSR_THREADS"


class ValidationError(Exception):
    pass


def thread_count():
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise ValidationError(f"{THREADS_ENV} must be an integer >= 1, got {raw!r}")
    return n


def _existing_file(path, what):
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"{what} not found: {p}")
    return p


def _read_pair(left, right):
    pair = StereoPair(imaging.load_png(_existing_file(left, "left image")),
                      imaging.load_png(_existing_file(right, "right image")))
    if pair.left.shape != pair.right.shape:
        raise ValidationError(
            f"views differ in size: {pair.left.shape[:2]} vs {pair.right.shape[:2]}")
    if min(pair.left.shape[:2]) < 8:
        raise ValidationError(f"views must be at least 8x8, got {pair.left.shape[:2]}")
    return pair


def _out_dir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def attention_profile(m, row):
    """One height slice of an attention map scaled so its maximum is white."""
    profile = np.asarray(m[row], dtype=np.float64)
    peak = profile.max()
    return profile / peak if peak > 0 else profile


def _row(arg, height):
    row = height // 2 if arg is None else arg
    if not 0 <= row < height:
        raise ValidationError(f"--row must be in [0, {height}), got {row}")
    return row


# --------------------------------------------------------------------------
# commands


def cmd_sr(args, reconstruct=True):
    weights = _existing_file(args.weights, "weights file")
    pair = _read_pair(args.left, args.right)
    archive = network.load_archive(weights)
    if args.scale is not None and args.scale != archive.scale:
        raise ValidationError(
            f"--scale {args.scale} does not match the {archive.scale}x archive {weights}")
    row = _row(args.row, pair.left.shape[0])
    out = _out_dir(args.out_dir)

    if reconstruct:
        result = network.ipassr_forward(pair, archive)
        maps, v_l, v_r = result.maps, result.v_l, result.v_r
        imaging.save_png(result.sr.left, out / "sr_left.png")
        imaging.save_png(result.sr.right, out / "sr_right.png")
    else:
        w = network.unpack(archive.validate())
        feat_l = network.extract_features(pair.left, w)
        feat_r = network.extract_features(pair.right, w)
        inter = bipam_forward(feat_l.concat, feat_r.concat,
                              feat_l.f_conv1f, feat_r.f_conv1f, w.bipam)
        maps, v_l, v_r = inter.maps, inter.v_l, inter.v_r
    imaging.save_gray_png(v_l, out / "valid_mask_left.png")
    imaging.save_gray_png(v_r, out / "valid_mask_right.png")
    imaging.save_gray_png(attention_profile(maps.m_rl, row), out / "attention_profile.png")
    print(f"command={'sr' if reconstruct else 'masks'} out_dir={out} scale={archive.scale} "
          f"row={row} height={pair.left.shape[0]} width={pair.left.shape[1]}")
    return 0


def cmd_masks(args):
    return cmd_sr(args, reconstruct=False)


def toy_report(spec):
    """Run the full oracle pipeline on a synthetic scene.

    Returns (scene, maps, masks, report lines, all_passed).
    """
    scene = synthetic.render_scene(spec)
    maps = synthetic.analytic_attention(scene.disparity_l, scene.occ_l)
    v_l, v_r = occlusion.detect_occlusions(maps)
    lines = [f"spec.width={spec.width}", f"spec.height={spec.height}",
             f"spec.layers={len(spec.layers)}",
             f"occluded_left={int(scene.occ_l.sum())}",
             f"occluded_right={int(scene.occ_r.sum())}"]
    ok = True

    def record(name, passed, **values):
        nonlocal ok
        ok &= bool(passed)
        fields = " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                          for k, v in values.items())
        lines.append(f"check={name} status={'pass' if passed else 'fail'} {fields}".rstrip())

    warped = convert_features(maps.m_rl, scene.pair.right)
    oracle = synthetic.disparity_warp(scene.pair.right, scene.disparity_l, scene.occ_l)
    err = float(np.max(np.abs(warped - oracle)[~scene.occ_l], initial=0.0))
    record("warp_oracle_equivalence", err <= 1e-6, max_err=err, tol=1e-6)

    occ_l_m, occ_r_m = synthetic.occlusion_from_attention(maps)
    record("attention_encodes_occlusion",
           np.array_equal(occ_l_m, scene.occ_l) and np.array_equal(occ_r_m, scene.occ_r))

    for name, v, occ in (("left", v_l, scene.occ_l), ("right", v_r, scene.occ_r)):
        hi = float(v[occ].max()) if occ.any() else 0.0
        lo = float(v[~occ].min()) if (~occ).any() else 1.0
        record(f"mask_{name}_occluded_below_0.2", hi < 0.2, max=hi)
        record(f"mask_{name}_visible_above_0.95", lo > 0.95, min=lo)

    bands = synthetic.occlusion_bands(scene)
    wrong = [b for b in bands if b[2] != b[3]]
    record("occlusion_band_widths", not wrong, steps=len(bands), mismatched=len(wrong),
           widths=",".join(str(w) for w in sorted({b[2] for b in bands})) or "none")

    rows = max(float(np.max(np.abs(m.astype(np.float64).sum(axis=2) - 1))) for m in maps)
    record("row_stochastic", rows <= 1e-6, max_err=rows)

    p = occlusion.cycle_probability(maps)
    p_rel = occlusion.relaxed_cycle_probability(maps)
    record("cycle_bounds", bool(p.min() >= 0 and p.max() <= 1 + 1e-6 and np.all(p_rel >= p)),
           min=float(p.min()), max=float(p.max()))

    fused = fuse_with_mask(warped, scene.pair.left, v_l)
    lo = np.minimum(warped, scene.pair.left) - 1e-6
    hi = np.maximum(warped, scene.pair.left) + 1e-6
    record("fusion_convex_bound", bool(np.all((fused >= lo) & (fused <= hi))))

    # residual losses against a 2x nearest-neighbour "HR" version of the scene
    hr = StereoPair(*(np.repeat(np.repeat(v, 2, 0), 2, 1) for v in scene.pair))
    lr = StereoPair(*(imaging.bicubic_resize(v, 0.5) for v in hr))
    sr = StereoPair(*(imaging.bicubic_resize(v, 2) for v in lr))
    x_l, x_r = (imaging.residual_image(h, l, 2) for h, l in zip(hr, lr))
    y_l, y_r = (imaging.bicubic_resize(np.abs(h - s), 0.5) for h, s in zip(hr, sr))
    report = losses.total_loss(
        losses.sr_loss(sr, hr),
        losses.photometric_residual_loss(x_l, x_r, maps, v_l, v_r),
        losses.cycle_residual_loss(x_l, x_r, maps, v_l, v_r),
        losses.smoothness_loss(maps),
        losses.consistency_residual_loss(y_l, y_r, maps, v_l, v_r),
    )
    lines += [f"loss.{line}" for line in report.as_lines()]
    consistent = abs(report.total - (report.sr + report.lam * (
        report.photo_res + report.cycle_res + report.smooth + report.cons_res))) <= 1e-6
    record("loss_total_weighting", consistent, total=report.total)
    lines.append(f"result={'pass' if ok else 'fail'}")
    return scene, maps, (v_l, v_r), warped, lines, ok


def cmd_toy(args):
    spec = synthetic.load_spec(_existing_file(args.spec, "scene spec")) if args.spec \
        else synthetic.two_object_spec()
    out = _out_dir(args.out_dir)
    scene, maps, (v_l, v_r), warped, lines, ok = toy_report(spec)
    row = _row(args.row, spec.height)
    imaging.save_png(scene.pair.left, out / "left.png")
    imaging.save_png(scene.pair.right, out / "right.png")
    imaging.save_png(warped, out / "right_to_left.png")
    imaging.save_gray_png(scene.occ_l.astype(float), out / "occlusion_left.png")
    imaging.save_gray_png(scene.occ_r.astype(float), out / "occlusion_right.png")
    imaging.save_gray_png(v_l, out / "valid_mask_left.png")
    imaging.save_gray_png(v_r, out / "valid_mask_right.png")
    imaging.save_gray_png(attention_profile(maps.m_rl, row), out / "attention_profile.png")
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0 if ok else 1


def _scenes(directory):
    d = Path(directory)
    if not d.is_dir():
        raise ValidationError(f"directory not found: {d}")
    return {p.name for p in d.glob("*.png")}


def cmd_eval(args):
    protocol = Protocol(args.protocol)
    sr_names, gt_names = _scenes(args.sr_dir), _scenes(args.gt_dir)
    unpaired = sorted(sr_names ^ gt_names)
    if unpaired:
        raise ValidationError("unpaired files: " + ", ".join(unpaired))
    stems = sorted({n[:-6] for n in gt_names if n.endswith(("_L.png", "_R.png"))})
    if not stems:
        raise ValidationError(f"no <scene>_L.png / <scene>_R.png files in {args.gt_dir}")
    if protocol is Protocol.STEREO_AVERAGE:
        missing = [f"{s}_{v}.png" for s in stems for v in "LR" if f"{s}_{v}.png" not in gt_names]
        if missing:
            raise ValidationError("missing stereo counterpart: " + ", ".join(missing))
    else:
        stems = [s for s in stems if f"{s}_L.png" in gt_names]

    def load(stem, d):
        left = imaging.load_png(Path(d) / f"{stem}_L.png")
        rp = Path(d) / f"{stem}_R.png"
        right = imaging.load_png(rp) if rp.exists() else left
        return StereoPair(left, right)

    def score(stem):
        return imaging.evaluate_pair(load(stem, args.sr_dir), load(stem, args.gt_dir), protocol)

    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        reports = list(pool.map(score, stems))

    width = max(8, *(len(s) for s in stems))
    print(f"{'scene':<{width}}  {'psnr_db':>8}  {'ssim':>7}")
    for stem, rep in zip(stems, reports):
        print(f"{stem:<{width}}  {rep.psnr_db:8.3f}  {rep.ssim:7.4f}")
    mean_p = float(np.mean([r.psnr_db for r in reports]))
    mean_s = float(np.mean([r.ssim for r in reports]))
    print(f"{'mean':<{width}}  {mean_p:8.3f}  {mean_s:7.4f}")
    print(f"protocol={protocol.value} pairs={len(stems)}")
    return 0


def cmd_selftest(args):
    if args.inject_fault == "softmax":
        T._softmax_fault = 1e-3
    t0 = time.perf_counter()
    try:
        results = selftest.run_selftest(args.seed)
    finally:
        T._softmax_fault = 0.0
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"summary passed={len(results) - failed} failed={failed} "
          f"seconds={time.perf_counter() - t0:.2f}")
    return 1 if failed else 0


def cmd_random_weights(args):
    archive = network.random_archive(args.scale, seed=args.seed,
                                     mirror_symmetric=args.mirror_symmetric)
    network.save_archive(archive, args.out)
    print(f"wrote={args.out} scale={args.scale} params={network.param_count(archive)}")
    return 0


# --------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="stereosr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, helptext in (("sr", cmd_sr, "super-resolve a stereo pair"),
                               ("masks", cmd_masks, "write valid masks and attention only")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("left")
        p.add_argument("right")
        p.add_argument("--weights", required=True)
        p.add_argument("--scale", type=int, choices=network.SCALES,
                       required=name == "sr")
        p.add_argument("--out-dir", required=True)
        p.add_argument("--row", type=int, help="height row of the attention profile")
        p.set_defaults(func=fn)

    p = sub.add_parser("toy", help="render a synthetic scene and run every oracle check")
    p.add_argument("--spec", help="scene spec file (default: two objects at disparity 5 and 10)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--row", type=int)
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser("eval", help="PSNR/SSIM of SR results against ground truth")
    p.add_argument("sr_dir")
    p.add_argument("gt_dir")
    p.add_argument("--protocol", choices=[x.value for x in Protocol],
                   default=Protocol.CROPPED_LEFT.value)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selftest", help="run the built-in oracle suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", choices=["softmax"], help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("random-weights", help="write an archive of random weights")
    p.add_argument("--scale", type=int, choices=network.SCALES, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mirror-symmetric", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_random_weights)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        thread_count()
        return args.func(args)
    except (ValidationError, ImageFormatError, ArchiveError, SceneError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
