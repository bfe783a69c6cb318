"""Layered synthetic stereo scenes with exact disparity and occlusion.

A scene is a stack of fronto-parallel rectangles, each with an integer
disparity, in front of a background plane. The left camera is the
reference: a layer at disparity d that covers left column x appears at
right column x - d. Larger disparity means nearer, and the nearer layer
wins wherever two overlap (a per-view z-buffer).
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .imaging import StereoPair
from .occlusion import AttentionMaps
from .tensor import DTYPE

PATTERNS = ("noise", "stripes", "flat")


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class Layer:
    x: int
    y: int
    w: int
    h: int
    disparity: int
    pattern: str = "noise"
    seed: int = 0


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    layers: tuple = ()
    background_disparity: int = 0
    background_pattern: str = "noise"
    background_seed: int = 0
    right_gain: float = 1.0

    def validate(self):
        if self.width < 1 or self.height < 1:
            raise SceneError(f"invalid image size {self.width}x{self.height}")
        if self.background_disparity < 0:
            raise SceneError("background disparity must be >= 0")
        if self.background_pattern not in PATTERNS:
            raise SceneError(f"unknown pattern {self.background_pattern!r}")
        for i, ly in enumerate(self.layers):
            if ly.disparity < 0:
                raise SceneError(f"layer {i}: disparity must be >= 0")
            if ly.disparity < self.background_disparity:
                raise SceneError(f"layer {i}: disparity {ly.disparity} puts it behind the background")
            if ly.w < 1 or ly.h < 1:
                raise SceneError(f"layer {i}: empty rectangle")
            if ly.x < 0 or ly.y < 0 or ly.x + ly.w > self.width or ly.y + ly.h > self.height:
                raise SceneError(f"layer {i}: rectangle out of image bounds")
            if ly.pattern not in PATTERNS:
                raise SceneError(f"layer {i}: unknown pattern {ly.pattern!r}")
        if self.right_gain <= 0:
            raise SceneError("right_gain must be positive")
        return self


@dataclass
class ToyScene:
    pair: StereoPair
    disparity_l: np.ndarray
    disparity_r: np.ndarray
    occ_l: np.ndarray
    occ_r: np.ndarray
    labels_l: np.ndarray = field(repr=False)
    labels_r: np.ndarray = field(repr=False)


def two_object_spec(width=96, height=32) -> SceneSpec:
    """Background at disparity 0 with two objects at disparities 5 and 10."""
    return SceneSpec(
        width=width,
        height=height,
        layers=(
            Layer(20, 6, 24, 20, 5, "noise", 2),
            Layer(60, 4, 26, 24, 10, "noise", 3),
        ),
        background_seed=1,
    )


def texture(pattern, seed, height, width) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if pattern == "flat":
        return np.broadcast_to(rng.uniform(0.1, 0.9, 3), (height, width, 3)).astype(DTYPE)
    if pattern == "stripes":
        period = rng.uniform(3.0, 9.0)
        phase = rng.uniform(0, 2 * np.pi)
        color = rng.uniform(0.3, 1.0, 3)
        x = np.arange(width)
        wave = 0.5 + 0.4 * np.sin(2 * np.pi * x / period + phase)
        return np.broadcast_to(wave[None, :, None] * color, (height, width, 3)).astype(DTYPE)
    if pattern == "noise":
        # coarse value noise (4 px lattice, bilinear) plus per-pixel grain
        cell = 4
        lat = rng.uniform(0, 1, (height // cell + 2, width // cell + 2, 3))
        fy = np.arange(height) / cell
        fx = np.arange(width) / cell
        iy, ix = fy.astype(int), fx.astype(int)
        ty, tx = (fy - iy)[:, None, None], (fx - ix)[None, :, None]
        a = lat[iy][:, ix]
        b = lat[iy][:, ix + 1]
        c = lat[iy + 1][:, ix]
        d = lat[iy + 1][:, ix + 1]
        smooth = (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty
        grain = rng.uniform(0, 1, (height, width, 3))
        return (0.7 * smooth + 0.3 * grain).astype(DTYPE)
    raise SceneError(f"unknown pattern {pattern!r}")


def _label_maps(spec: SceneSpec):
    """Per-view index of the visible surface (0 = background, i + 1 = layer i)."""
    h, w = spec.height, spec.width
    disps = np.array([spec.background_disparity] + [ly.disparity for ly in spec.layers])
    labels_l = np.zeros((h, w), dtype=np.int64)
    labels_r = np.zeros((h, w), dtype=np.int64)
    # paint far to near; equal disparities keep list order
    order = sorted(range(len(spec.layers)), key=lambda i: (spec.layers[i].disparity, i))
    for i in order:
        ly = spec.layers[i]
        labels_l[ly.y:ly.y + ly.h, ly.x:ly.x + ly.w] = i + 1
        lo, hi = max(0, ly.x - ly.disparity), max(0, ly.x + ly.w - ly.disparity)
        labels_r[ly.y:ly.y + ly.h, lo:hi] = i + 1
    return disps, labels_l, labels_r


def render_scene(spec: SceneSpec) -> ToyScene:
    spec.validate()
    h, w = spec.height, spec.width
    disps, labels_l, labels_r = _label_maps(spec)
    span = w + int(disps.max())
    surfaces = [(spec.background_pattern, spec.background_seed)]
    surfaces += [(ly.pattern, ly.seed) for ly in spec.layers]
    canvases = np.stack([texture(p, s, h, span) for p, s in surfaces])

    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    disp_l = disps[labels_l]
    disp_r = disps[labels_r]
    left = canvases[labels_l, rows, cols]
    # right pixel u shows surface coordinate u + d of its layer
    right = canvases[labels_r, rows, cols + disp_r] * DTYPE(spec.right_gain)

    u = cols - disp_l
    seen = u >= 0
    occ_l = ~seen | (labels_r[rows, np.clip(u, 0, w - 1)] != labels_l)
    x = cols + disp_r
    occ_r = (x >= w) | (labels_l[rows, np.clip(x, 0, w - 1)] != labels_r)
    return ToyScene(
        pair=StereoPair(np.clip(left, 0, 1).astype(DTYPE), np.clip(right, 0, 1).astype(DTYPE)),
        disparity_l=disp_l.astype(DTYPE),
        disparity_r=disp_r.astype(DTYPE),
        occ_l=occ_l,
        occ_r=occ_r,
        labels_l=labels_l,
        labels_r=labels_r,
    )


def mirror_spec(spec: SceneSpec) -> SceneSpec:
    """Spec of the scene seen by horizontally mirrored, swapped cameras.

    The old right view, mirrored, becomes the new left view. Every layer
    must lie fully inside the old right view (x >= disparity).
    """
    spec.validate()
    layers = []
    for i, ly in enumerate(spec.layers):
        if ly.x < ly.disparity:
            raise SceneError(f"layer {i} leaves the right view and cannot be mirrored")
        layers.append(replace(ly, x=spec.width - (ly.x - ly.disparity + ly.w)))
    return replace(spec, layers=tuple(layers))


def correspondences(disparity_l, occ_l):
    """Matched (row, left column, right column) triples of visible pixels."""
    d = np.rint(np.asarray(disparity_l)).astype(np.int64)
    occ = np.asarray(occ_l, dtype=bool)
    hh, ww = np.nonzero(~occ)
    uu = ww - d[hh, ww]
    if np.any((uu < 0) | (uu >= d.shape[1])):
        raise SceneError("non-occluded pixel has an out-of-range match")
    return hh, ww, uu


def analytic_attention(disparity_l, occ_l) -> AttentionMaps:
    """One-hot attention maps of the true correspondence.

    Rows without a correspondent are uniform, so both maps stay
    row-stochastic.
    """
    h, w = np.shape(disparity_l)
    hh, ww, uu = correspondences(disparity_l, occ_l)
    m_rl = np.full((h, w, w), 1.0 / w, dtype=DTYPE)
    m_rl[hh, ww] = 0
    m_rl[hh, ww, uu] = 1
    hit = np.zeros((h, w), dtype=np.int64)
    np.add.at(hit, (hh, uu), 1)
    if np.any(hit > 1):
        raise SceneError("two left pixels claim the same right pixel")
    m_lr = np.full((h, w, w), 1.0 / w, dtype=DTYPE)
    m_lr[hh, uu] = 0
    m_lr[hh, uu, ww] = 1
    return AttentionMaps(m_rl, m_lr)


def occlusion_from_attention(maps: AttentionMaps):
    """Rows of a one-hot construction that are not one-hot (i.e. occluded)."""
    return maps.m_rl.max(axis=2) < 1, maps.m_lr.max(axis=2) < 1


def disparity_warp(right, disparity_l, occ_l, fill=0.0) -> np.ndarray:
    """out[h, w] = right[h, w - d[h, w]] on visible pixels, ``fill`` elsewhere."""
    right = np.asarray(right, dtype=DTYPE)
    out = np.empty(right.shape, dtype=DTYPE)
    out[...] = fill
    hh, ww, uu = correspondences(disparity_l, occ_l)
    out[hh, ww] = right[hh, uu]
    return out


def occlusion_bands(scene: ToyScene):
    """(row, column, run width, disparity step) at each clean rise in left disparity.

    A rise from d1 to d2 at column x is clean when the far surface covers
    the step + 1 columns to its left, the near surface covers the step
    columns from x, and the far pixel just beyond the band is visible in
    the right view. Walking left from x, the run of occluded pixels must
    then be exactly d2 - d1 wide. Rises in cluttered layouts are skipped.
    """
    d = np.rint(scene.disparity_l).astype(np.int64)
    d_r = np.rint(scene.disparity_r).astype(np.int64)
    width = d.shape[1]
    out = []
    for h in range(d.shape[0]):
        for x in range(1, width):
            d1, d2 = int(d[h, x - 1]), int(d[h, x])
            step = d2 - d1
            edge = x - step - 1
            if step <= 0 or edge - d1 < 0 or x + step > width:
                continue
            if np.any(d[h, edge:x] != d1) or np.any(d[h, x:x + step] != d2) or d_r[h, edge - d1] != d1:
                continue
            run = 0
            while x - 1 - run >= 0 and scene.occ_l[h, x - 1 - run]:
                run += 1
            out.append((h, x, run, step))
    return out


def random_spec(rng, width=64, height=16, max_layers=4, max_disparity=12) -> SceneSpec:
    background = int(rng.integers(0, 3))
    layers = []
    for _ in range(rng.integers(1, max_layers + 1)):
        w = int(rng.integers(4, width // 2))
        h = int(rng.integers(2, height + 1))
        layers.append(Layer(
            x=int(rng.integers(0, width - w + 1)),
            y=int(rng.integers(0, height - h + 1)),
            w=w,
            h=h,
            disparity=int(rng.integers(background, max_disparity + 1)),
            pattern=str(rng.choice(PATTERNS)),
            seed=int(rng.integers(0, 2**31)),
        ))
    return SceneSpec(
        width, height, tuple(layers),
        background_disparity=background,
        background_seed=int(rng.integers(0, 2**31)),
    )


def parse_spec(text) -> SceneSpec:
    """Parse ``key = value`` lines; ``layer = x,y,w,h,disparity,pattern,seed``
    may repeat. Also accepted: ``background = disparity,pattern,seed`` and
    ``right_gain``."""
    fields = {}
    layers = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SceneError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key == "layer":
                parts = [p.strip() for p in value.split(",")]
                if len(parts) != 7:
                    raise SceneError(f"line {lineno}: layer needs 7 fields")
                x, y, w, h, d = (int(p) for p in parts[:5])
                layers.append(Layer(x, y, w, h, d, parts[5], int(parts[6])))
            elif key in ("width", "height"):
                fields[key] = int(value)
            elif key == "background":
                d, pattern, seed = (p.strip() for p in value.split(","))
                fields["background_disparity"] = int(d)
                fields["background_pattern"] = pattern
                fields["background_seed"] = int(seed)
            elif key == "right_gain":
                fields["right_gain"] = float(value)
            else:
                raise SceneError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, SceneError):
                raise
            raise SceneError(f"line {lineno}: {exc}") from exc
    for key in ("width", "height"):
        if key not in fields:
            raise SceneError(f"missing {key}")
    return SceneSpec(layers=tuple(layers), **fields).validate()


def format_spec(spec: SceneSpec) -> str:
    lines = [f"width = {spec.width}", f"height = {spec.height}",
             f"background = {spec.background_disparity},{spec.background_pattern},"
             f"{spec.background_seed}"]
    if spec.right_gain != 1.0:
        lines.append(f"right_gain = {spec.right_gain}")
    for ly in spec.layers:
        lines.append(f"layer = {ly.x},{ly.y},{ly.w},{ly.h},{ly.disparity},{ly.pattern},{ly.seed}")
    return "\n".join(lines) + "\n"


def load_spec(path) -> SceneSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_spec(fh.read())
