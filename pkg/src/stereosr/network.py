"""Siamese stereo super-resolution network and its weight archive.

Both views run through the same feature extractor, meet in the parallax
attention module, and are reconstructed by the same reconstruction branch.
Weights live in a :class:`WeightArchive` (name -> float32 tensor) that is
unpacked once per forward pass.
"""

import struct
from collections import OrderedDict
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .bipam import (ATTN_CHANNELS, BIPAM_CHANNELS, RESB_GROUPS, BipamWeights,
                    bipam_forward)
from .imaging import StereoPair
from .occlusion import AttentionMaps
from .tensor import DTYPE, Conv, ShapeError

FEATS = 64
GROWTH = 24
RDB_LAYERS = 4
N_RDB = 4
FUSED = 2 * FEATS
CA_REDUCTION = 16
SCALES = (2, 4)

MAGIC = b"IPSR"
FORMAT_VERSION = 1


class ArchiveError(ValueError):
    pass


# --------------------------------------------------------------------------
# architecture slots


def _conv_slots(name, k, cin, cout, groups=1):
    return [(f"{name}.weight", (k, k, cin // groups, cout)), (f"{name}.bias", (cout,))]


def _rdb_slots(name, channels):
    slots = []
    for i in range(RDB_LAYERS):
        slots += _conv_slots(f"{name}.conv{i}", 3, channels + i * GROWTH, GROWTH)
    slots += _conv_slots(f"{name}.fuse", 1, channels + RDB_LAYERS * GROWTH, channels)
    return slots


def architecture_slots(scale) -> "OrderedDict[str, tuple]":
    """Every tensor the network consumes, in archive order, with its shape."""
    if scale not in SCALES:
        raise ArchiveError(f"unsupported scale {scale}; expected one of {SCALES}")
    c = BIPAM_CHANNELS
    slots = _conv_slots("conv0", 3, 3, FEATS)
    for i in range(N_RDB):
        slots += _rdb_slots(f"extract.rdb{i}", FEATS)
    slots += [(f"bipam.bn.{p}", (c,)) for p in ("scale", "shift", "mean", "var")]
    slots += _conv_slots("bipam.resb.conv0", 3, c, c, RESB_GROUPS)
    slots += _conv_slots("bipam.resb.conv1", 3, c, c, RESB_GROUPS)
    slots += _conv_slots("bipam.query", 1, c, ATTN_CHANNELS)
    slots += _conv_slots("bipam.key", 1, c, ATTN_CHANNELS)
    slots += _conv_slots("conv1f", 3, FEATS, FEATS)
    slots += _rdb_slots("rdbf", FUSED)
    slots += _conv_slots("calayer.squeeze", 1, FUSED, FUSED // CA_REDUCTION)
    slots += _conv_slots("calayer.excite", 1, FUSED // CA_REDUCTION, FUSED)
    slots += _conv_slots("conv2f", 1, FUSED, FEATS)
    for i in range(N_RDB):
        slots += _rdb_slots(f"reconstruct.rdb{i}", FEATS)
    slots += _conv_slots("conv3f", 3, FEATS, 3 * scale * scale)
    return OrderedDict(slots)


class WeightArchive:
    """Ordered name -> tensor store for a given upscaling factor.

    Reads are counted in ``reads`` so tests can check every slot is used.
    """

    def __init__(self, scale, tensors):
        self.scale = int(scale)
        self.tensors = OrderedDict(
            (name, np.ascontiguousarray(t, dtype=DTYPE)) for name, t in tensors.items()
        )
        self.reads = {}

    def __getitem__(self, name):
        try:
            t = self.tensors[name]
        except KeyError:
            raise ArchiveError(f"archive slot missing: {name}") from None
        self.reads[name] = self.reads.get(name, 0) + 1
        return t

    def __len__(self):
        return len(self.tensors)

    def __iter__(self):
        return iter(self.tensors)

    def validate(self):
        expected = architecture_slots(self.scale)
        for name, shape in expected.items():
            if name not in self.tensors:
                raise ArchiveError(f"archive slot missing: {name}")
            if self.tensors[name].shape != shape:
                raise ArchiveError(
                    f"slot {name} has dims {self.tensors[name].shape}, expected {shape}"
                )
        extra = [n for n in self.tensors if n not in expected]
        if extra:
            raise ArchiveError(f"unexpected archive slots: {', '.join(extra)}")
        if np.any(self.tensors["bipam.bn.var"] <= 0):
            raise ArchiveError("bipam.bn.var must be strictly positive")
        return self


def param_count(archive: WeightArchive) -> int:
    return sum(int(t.size) for t in archive.tensors.values())


# --------------------------------------------------------------------------
# serialization


def save_archive(archive: WeightArchive, path):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, archive.scale, len(archive.tensors)))
        for name, t in archive.tensors.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
            fh.write(t.astype("<f4").tobytes())


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ArchiveError("truncated archive")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_archive(path, validate=True) -> WeightArchive:
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise ArchiveError("bad magic")
    version, scale, count = r.unpack("<III")
    if version != FORMAT_VERSION:
        raise ArchiveError(f"unsupported archive version {version}")
    tensors = OrderedDict()
    for _ in range(count):
        (n,) = r.unpack("<H")
        try:
            name = r.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ArchiveError("tensor name is not valid UTF-8") from exc
        if name in tensors:
            raise ArchiveError(f"duplicate slot {name}")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        size = int(np.prod(dims, dtype=np.int64))
        values = np.frombuffer(r.take(4 * size), dtype="<f4")
        tensors[name] = values.astype(DTYPE).reshape(dims)
    if r.pos != len(data):
        raise ArchiveError("trailing bytes after last tensor")
    archive = WeightArchive(scale, tensors)
    return archive.validate() if validate else archive


def random_archive(scale, seed=0, mirror_symmetric=False) -> WeightArchive:
    """Archive with random weights scaled to keep activations O(1).

    With ``mirror_symmetric`` every kernel is symmetric under a horizontal
    flip and the sub-pixel channels are paired so that the whole network
    commutes with mirroring the image.
    """
    rng = np.random.default_rng(seed)
    tensors = OrderedDict()
    for name, shape in architecture_slots(scale).items():
        if name.endswith(".weight"):
            fan_in = shape[0] * shape[1] * shape[2]
            t = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)
            if mirror_symmetric:
                t = (t + t[:, ::-1]) / 2
        elif name == "bipam.bn.var":
            t = rng.uniform(0.5, 2.0, size=shape)
        elif name == "bipam.bn.scale":
            t = rng.uniform(0.5, 1.5, size=shape)
        else:
            t = rng.normal(0.0, 0.05, size=shape)
        tensors[name] = t
    if mirror_symmetric:
        _mirror_pair_subpixel(tensors, scale)
    # keep the untrained output near mid-gray instead of saturating the clamp
    tensors["conv3f.weight"] = tensors["conv3f.weight"] * 0.1
    tensors["conv3f.bias"] = tensors["conv3f.bias"] + 0.5
    return WeightArchive(scale, tensors)


def _mirror_pair_subpixel(tensors, r):
    # channel (c, dy, dx) must be the flipped twin of (c, dy, r - 1 - dx)
    k = tensors["conv3f.weight"]
    b = tensors["conv3f.bias"]
    for c in range(3):
        for dy in range(r):
            for dx in range(r):
                src = c * r * r + dy * r + dx
                dst = c * r * r + dy * r + (r - 1 - dx)
                if dst > src:
                    k[..., dst] = k[:, ::-1, :, src]
                    b[dst] = b[src]


# --------------------------------------------------------------------------
# structured weights


@dataclass(frozen=True)
class RdbWeights:
    convs: tuple
    fuse: Conv

    def __post_init__(self):
        channels = self.convs[0].kernel.shape[2]
        for i, conv in enumerate(self.convs):
            if conv.kernel.shape[2] != channels + i * GROWTH:
                raise ShapeError(f"dense layer {i} has wrong input channels")
        if self.fuse.kernel.shape[3] != channels:
            raise ShapeError("fusion output must match block input channels")


@dataclass(frozen=True)
class CALayerWeights:
    squeeze: Conv
    excite: Conv


@dataclass(frozen=True)
class NetworkWeights:
    scale: int
    conv0: Conv
    extract: tuple
    bipam: BipamWeights
    conv1f: Conv
    rdbf: RdbWeights
    calayer: CALayerWeights
    conv2f: Conv
    reconstruct: tuple
    conv3f: Conv


def _conv(a, name, groups=1):
    return Conv(a[f"{name}.weight"], a[f"{name}.bias"], groups)


def _rdb(a, name):
    return RdbWeights(tuple(_conv(a, f"{name}.conv{i}") for i in range(RDB_LAYERS)),
                      _conv(a, f"{name}.fuse"))


def unpack(archive: WeightArchive) -> NetworkWeights:
    """Read every slot of a validated archive exactly once."""
    a = archive
    return NetworkWeights(
        scale=a.scale,
        conv0=_conv(a, "conv0"),
        extract=tuple(_rdb(a, f"extract.rdb{i}") for i in range(N_RDB)),
        bipam=BipamWeights(
            a["bipam.bn.scale"], a["bipam.bn.shift"], a["bipam.bn.mean"], a["bipam.bn.var"],
            _conv(a, "bipam.resb.conv0", RESB_GROUPS), _conv(a, "bipam.resb.conv1", RESB_GROUPS),
            _conv(a, "bipam.query"), _conv(a, "bipam.key"),
        ),
        conv1f=_conv(a, "conv1f"),
        rdbf=_rdb(a, "rdbf"),
        calayer=CALayerWeights(_conv(a, "calayer.squeeze"), _conv(a, "calayer.excite")),
        conv2f=_conv(a, "conv2f"),
        reconstruct=tuple(_rdb(a, f"reconstruct.rdb{i}") for i in range(N_RDB)),
        conv3f=_conv(a, "conv3f"),
    )


def _weights(w):
    if isinstance(w, WeightArchive):
        return unpack(w.validate())
    return w


# --------------------------------------------------------------------------
# forward pass


class Features(NamedTuple):
    f0: np.ndarray
    rdb: tuple
    concat: np.ndarray
    f_conv1f: np.ndarray


class ForwardResult(NamedTuple):
    sr: StereoPair
    maps: AttentionMaps
    v_l: np.ndarray
    v_r: np.ndarray


def rdb_forward(x, w: RdbWeights):
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 3 or x.shape[2] != w.convs[0].kernel.shape[2]:
        raise ShapeError(f"RDB expects {w.convs[0].kernel.shape[2]} channels, got {x.shape}")
    dense = x
    for conv in w.convs:
        dense = T.concat_channels(dense, T.leaky_rectify(conv(dense)))
    return w.fuse(dense) + x


def calayer_forward(x, w: CALayerWeights):
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 3 or x.shape[2] != w.squeeze.kernel.shape[2]:
        raise ShapeError(f"channel attention expects {w.squeeze.kernel.shape[2]} channels")
    pooled = T.global_mean_hw(x)
    gate = T.sigmoid(w.excite(T.leaky_rectify(w.squeeze(pooled))))
    return x * gate


def extract_features(img, w) -> Features:
    w = _weights(w)
    img = np.asarray(img, dtype=DTYPE)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected an H x W x 3 image, got {img.shape}")
    f0 = w.conv0(img)
    outs = []
    x = f0
    for rdb in w.extract:
        x = rdb_forward(x, rdb)
        outs.append(x)
    return Features(f0, tuple(outs), T.concat_channels(*outs), w.conv1f(outs[-1]))


def reconstruct(fused, f_target, w, scale=None):
    w = _weights(w)
    if scale is not None and scale != w.scale:
        raise ArchiveError(f"requested scale {scale} but weights are for {w.scale}x")
    x = rdb_forward(T.concat_channels(fused, f_target), w.rdbf)
    x = w.conv2f(calayer_forward(x, w.calayer))
    for rdb in w.reconstruct:
        x = rdb_forward(x, rdb)
    out = T.pixel_shuffle(w.conv3f(x), w.scale)
    return np.clip(out, 0.0, 1.0)


def ipassr_forward(pair: StereoPair, w) -> ForwardResult:
    """Super-resolve both views of a stereo pair in one pass."""
    w = _weights(w)
    left = np.asarray(pair.left, dtype=DTYPE)
    right = np.asarray(pair.right, dtype=DTYPE)
    if left.shape != right.shape:
        raise ShapeError(f"views differ in shape: {left.shape} vs {right.shape}")
    if left.ndim != 3 or left.shape[0] < 8 or left.shape[1] < 8:
        raise ShapeError(f"views must be at least 8 x 8 RGB, got {left.shape}")
    feat_l = extract_features(left, w)
    feat_r = extract_features(right, w)
    inter = bipam_forward(feat_l.concat, feat_r.concat, feat_l.f_conv1f, feat_r.f_conv1f, w.bipam)
    sr_l = reconstruct(inter.fused_l, feat_l.f_conv1f, w)
    sr_r = reconstruct(inter.fused_r, feat_r.f_conv1f, w)
    return ForwardResult(StereoPair(sr_l, sr_r), inter.maps, inter.v_l, inter.v_r)
