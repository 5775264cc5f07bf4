"""The trainable detector: a small convolutional backbone, a sliding
proposal head, ROI max pooling, and a per-region classification head.

Layout conventions: images are (H, W) float64 in [0, 1]; feature maps are
channel-first (C, Hf, Wf). The proposal head emits, per anchor, a
(background, object) score pair and a 4-component box delta; anchors are
ordered row-major over cells, then scale-major, then ratio, matching
:func:`fracdet.anchors.generate_anchors`.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DataError, GeometryError, StructuralError
from . import tensor as T
from .tensor import Tensor

DEFAULT_ARCH = {
    "conv_channels": (12, 24, 32, 32),
    "conv_strides": (2, 1, 1, 1),
    "pool_after": (0, 1),  # 2x2 max pool after these conv indices
    "rpn_channels": 32,
    "head_hidden": 64,
    "roi_grid": 4,
    "num_classes": 3,  # background + the two image labels
    "anchors_per_cell": 9,
    "init_scheme": "he",
    "init_sigma": 0.01,
}


def total_stride(arch: dict) -> int:
    s = 1
    for cs in arch["conv_strides"]:
        s *= cs
    return s * 2 ** len(arch["pool_after"])


def padded_size(h: int, w: int, stride: int) -> tuple[int, int]:
    """Spatial size after padding up to a multiple of the total stride."""
    return (math.ceil(h / stride) * stride, math.ceil(w / stride) * stride)


@dataclass
class NetworkParams:
    """All trainable tensors plus the architecture that shaped them."""

    arch: dict
    params: dict[str, Tensor]

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def items(self):
        return self.params.items()

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            arch=dict(self.arch),
            params={k: Tensor(v.data.copy(), requires_grad=True, name=k)
                    for k, v in self.params.items()},
        )


def _layer_shapes(arch: dict):
    """Ordered (name, shape, fan_in) triples for every parameter tensor."""
    shapes = []
    cin = 1
    for i, (cout, _) in enumerate(zip(arch["conv_channels"], arch["conv_strides"])):
        shapes.append((f"conv{i + 1}.w", (cout, cin, 3, 3), cin * 9))
        shapes.append((f"conv{i + 1}.b", (cout,), 0))
        cin = cout
    c = arch["rpn_channels"]
    if c != cin:
        raise ConfigError(
            f"rpn_channels ({c}) must equal the last backbone width ({cin})")
    a = arch["anchors_per_cell"]
    shapes.append(("rpn_conv.w", (c, c, 3, 3), c * 9))
    shapes.append(("rpn_conv.b", (c,), 0))
    shapes.append(("rpn_cls.w", (2 * a, c, 1, 1), c))
    shapes.append(("rpn_cls.b", (2 * a,), 0))
    shapes.append(("rpn_reg.w", (4 * a, c, 1, 1), c))
    shapes.append(("rpn_reg.b", (4 * a,), 0))
    g = arch["roi_grid"]
    hidden = arch["head_hidden"]
    k = arch["num_classes"]
    shapes.append(("head_fc1.w", (hidden, c * g * g), c * g * g))
    shapes.append(("head_fc1.b", (hidden,), 0))
    shapes.append(("head_cls.w", (k, hidden), hidden))
    shapes.append(("head_cls.b", (k,), 0))
    shapes.append(("head_reg.w", (4 * k, hidden), hidden))
    shapes.append(("head_reg.b", (4 * k,), 0))
    return shapes


def init_params(arch: dict | None = None, rng_seed: int = 0) -> NetworkParams:
    """Create freshly initialized parameters.

    Weights draw from zero-mean Gaussians: a fixed standard deviation
    ``init_sigma`` under scheme "gaussian", or fan-in scaled
    ``sqrt(2 / fan_in)`` under scheme "he" (needed when training from
    scratch rather than atop pretrained features). Biases start at zero.
    Deterministic per seed.
    """
    arch = dict(DEFAULT_ARCH, **(arch or {}))
    scheme = arch["init_scheme"]
    if scheme not in ("gaussian", "he"):
        raise ConfigError(f"unknown init scheme: {scheme!r}")
    for key in ("conv_channels", "conv_strides", "pool_after"):
        arch[key] = tuple(arch[key])
    if len(arch["conv_channels"]) != len(arch["conv_strides"]):
        raise ConfigError("conv_channels and conv_strides must have equal length")
    if any(c < 1 for c in arch["conv_channels"]):
        raise ConfigError("conv channel counts must be positive")

    rng = np.random.Generator(np.random.PCG64(rng_seed))
    params: dict[str, Tensor] = {}
    for name, shape, fan_in in _layer_shapes(arch):
        if name.endswith(".b"):
            data = np.zeros(shape)
        else:
            sigma = arch["init_sigma"] if scheme == "gaussian" else math.sqrt(2.0 / fan_in)
            data = rng.normal(0.0, sigma, size=shape) if sigma > 0 else np.zeros(shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return NetworkParams(arch=arch, params=params)


def backbone_forward(image: np.ndarray, net: NetworkParams) -> Tensor:
    """Run the convolutional backbone on one grayscale image.

    The image is zero-padded on the right/bottom to a multiple of the
    total stride, never truncated. Returns the (C, Hf, Wf) feature map.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3 and image.shape[2] == 1:
        image = image[:, :, 0]
    if image.ndim != 2:
        raise StructuralError(f"expected a single-channel image, got shape {image.shape}")
    stride = total_stride(net.arch)
    h, w = image.shape
    ph, pw = padded_size(h, w, stride)
    if (ph, pw) != (h, w):
        padded = np.zeros((ph, pw))
        padded[:h, :w] = image
        image = padded
    x = Tensor(image[None, :, :])
    for i, cs in enumerate(net.arch["conv_strides"]):
        x = T.conv2d(x, net[f"conv{i + 1}.w"], net[f"conv{i + 1}.b"], stride=cs, pad=1)
        x = T.relu(x)
        if i in net.arch["pool_after"]:
            x = T.maxpool2x2(x)
    return x


def rpn_forward(features: Tensor, net: NetworkParams) -> tuple[Tensor, Tensor]:
    """Score every anchor and predict its box delta.

    Returns:
        probs: (n_anchors, 2) softmax rows as (background, object).
        deltas: (n_anchors, 4) box deltas.
    """
    a = net.arch["anchors_per_cell"]
    c = features.data.shape[0]
    if net["rpn_conv.w"].data.shape[1] != c:
        raise StructuralError("feature channels do not match the proposal head")
    hf, wf = features.data.shape[1:]
    mid = T.relu(T.conv2d(features, net["rpn_conv.w"], net["rpn_conv.b"], stride=1, pad=1))
    cls = T.conv2d(mid, net["rpn_cls.w"], net["rpn_cls.b"])  # (2A, Hf, Wf)
    reg = T.conv2d(mid, net["rpn_reg.w"], net["rpn_reg.b"])  # (4A, Hf, Wf)
    # channel layout a*2 + {bg, obj}: transpose to cells-then-anchor rows
    scores = T.reshape(T.transpose(cls, (1, 2, 0)), (hf * wf * a, 2))
    probs = T.softmax_rows(scores)
    deltas = T.reshape(T.transpose(reg, (1, 2, 0)), (hf * wf * a, 4))
    return probs, deltas


def roi_bin_ranges(box, stride: int, feat_h: int, feat_w: int, grid: int):
    """Cell index ranges covering each pooling bin of one region.

    The box is projected into feature coordinates and divided into
    grid x grid equal bins; a bin covers every cell it intersects. Bins
    that fall entirely outside the map are empty.
    """
    x1, y1, x2, y2 = box
    if x2 - x1 <= 0 or y2 - y1 <= 0:
        raise GeometryError(f"zero-area region cannot be pooled: {tuple(box)}")
    x1f, x2f = x1 / stride, x2 / stride
    y1f, y2f = y1 / stride, y2 / stride
    bw = (x2f - x1f) / grid
    bh = (y2f - y1f) / grid
    edges = np.arange(grid + 1)
    xs = np.clip(np.floor(x1f + edges[:-1] * bw).astype(np.int64), 0, feat_w)
    xe = np.clip(np.ceil(x1f + edges[1:] * bw).astype(np.int64), 0, feat_w)
    ys = np.clip(np.floor(y1f + edges[:-1] * bh).astype(np.int64), 0, feat_h)
    ye = np.clip(np.ceil(y1f + edges[1:] * bh).astype(np.int64), 0, feat_h)
    return ys, ye, xs, xe


def roi_pool(features: Tensor, box, grid: int, stride: int) -> Tensor:
    """Max-pool one region of the feature map into a (C, grid, grid) tensor."""
    if grid < 1:
        raise ConfigError("roi grid must be >= 1")
    feat_h, feat_w = features.data.shape[1:]
    ranges = roi_bin_ranges(box, stride, feat_h, feat_w, grid)
    pooled = T.roi_pool_multi(features, [ranges])
    c = features.data.shape[0]
    return T.reshape(pooled, (c, grid, grid))


def detect_forward(features: Tensor, proposals, net: NetworkParams,
                   stride: int) -> tuple[Tensor, Tensor]:
    """Classify and refine a list of proposal boxes.

    Returns:
        class_probs: (R, K) softmax rows over all classes (index 0 is
            background).
        deltas: (R, K, 4) per-class box deltas.
    """
    k = net.arch["num_classes"]
    g = net.arch["roi_grid"]
    c, feat_h, feat_w = features.data.shape
    if len(proposals) == 0:
        return Tensor(np.zeros((0, k))), Tensor(np.zeros((0, k, 4)))
    ranges = [roi_bin_ranges(box, stride, feat_h, feat_w, g) for box in proposals]
    pooled = T.roi_pool_multi(features, ranges)  # (R, C, G, G)
    flat = T.reshape(pooled, (len(proposals), c * g * g))
    hidden = T.relu(T.linear(flat, net["head_fc1.w"], net["head_fc1.b"]))
    probs = T.softmax_rows(T.linear(hidden, net["head_cls.w"], net["head_cls.b"]))
    deltas = T.reshape(T.linear(hidden, net["head_reg.w"], net["head_reg.b"]),
                       (len(proposals), k, 4))
    return probs, deltas


# ---------------------------------------------------------------------------
# checkpoint container
#
# Layout (all integers little-endian):
#   bytes 0..3   magic "FRDT"
#   bytes 4..7   format version (uint32) == 1
#   bytes 8..15  header length N (uint64)
#   N bytes      UTF-8 JSON: {"arch": {...}, "arrays": [{"name": str,
#                "shape": [int, ...]}, ...]} in write order
#   then, per arrays entry, the raw float64 little-endian buffer.

CHECKPOINT_MAGIC = b"FRDT"
CHECKPOINT_VERSION = 1


def save_checkpoint(net: NetworkParams, path) -> None:
    entries = [{"name": k, "shape": list(v.data.shape)} for k, v in net.params.items()]
    header = json.dumps({"arch": _arch_jsonable(net.arch), "arrays": entries},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for v in net.params.values():
            fh.write(np.ascontiguousarray(v.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> NetworkParams:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise DataError(f"not a checkpoint file: {path}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {version} in {path}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        meta = json.loads(fh.read(hlen).decode("utf-8"))
        params: dict[str, Tensor] = {}
        for entry in meta["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise DataError(f"truncated checkpoint: {path}")
            data = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
            params[entry["name"]] = Tensor(data, requires_grad=True, name=entry["name"])
        if fh.read(1):
            raise DataError(f"trailing bytes in checkpoint: {path}")
    arch = meta["arch"]
    for key in ("conv_channels", "conv_strides", "pool_after"):
        arch[key] = tuple(arch[key])
    expected = {name for name, _, _ in _layer_shapes(arch)}
    if expected != set(params):
        raise DataError("checkpoint arrays do not match its architecture")
    return NetworkParams(arch=arch, params=params)


def _arch_jsonable(arch: dict) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in arch.items()}
