"""CAM-emitting classifier: convolutions, a 1x1 convolution head, then GAP.

Because the head is a 1x1 convolution applied before pooling, its output is
the class activation map itself and each logit is the spatial mean of its
map. An optional BoostLU stage sits between the map and the pooling.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .boostlu import BoostParams, boostlu_map
from .errors import ConfigError, DimensionError, FormatError
from .tensor import Tensor, conv2d, global_average_pool, relu


@dataclass(frozen=True)
class NetConfig:
    in_channels: int = 1
    height: int = 32
    width: int = 32
    channels: tuple = (16, 32)
    kernel_size: int = 3
    num_classes: int = 6
    head_bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        sizes = (self.in_channels, self.height, self.width, self.num_classes, *self.channels)
        if any(s <= 0 for s in sizes):
            raise ConfigError(f"all layer sizes must be positive, got {self}")
        if self.kernel_size <= 0 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")


@dataclass
class ConvLayer:
    kernel: Tensor
    bias: Tensor
    relu: bool = True


@dataclass
class CamNet:
    conv_layers: list
    head_weight: Tensor  # C×D
    head_bias: Optional[Tensor]  # C, or None for a strictly bias-free head
    input_spec: tuple  # (channels, H, W)
    class_names: Optional[Sequence[str]] = None

    def __post_init__(self):
        d = self.conv_layers[-1].kernel.shape[0] if self.conv_layers else self.input_spec[0]
        if self.head_weight.ndim != 2 or self.head_weight.shape[1] != d:
            raise DimensionError(
                f"head weight {self.head_weight.shape} does not take {d} input channels"
            )
        if self.head_bias is not None and self.head_bias.shape != (self.num_classes,):
            raise DimensionError(f"head bias shape {self.head_bias.shape} != ({self.num_classes},)")

    @property
    def num_classes(self) -> int:
        return self.head_weight.shape[0]

    def parameters(self) -> list:
        params = []
        for layer in self.conv_layers:
            params += [layer.kernel, layer.bias]
        return params + self.head_parameters()

    def head_parameters(self) -> list:
        return [self.head_weight] + ([self.head_bias] if self.head_bias is not None else [])

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def copy(self) -> "CamNet":
        layers = [
            ConvLayer(Tensor(l.kernel.data.copy(), True), Tensor(l.bias.data.copy(), True), l.relu)
            for l in self.conv_layers
        ]
        hb = Tensor(self.head_bias.data.copy(), True) if self.head_bias is not None else None
        return CamNet(layers, Tensor(self.head_weight.data.copy(), True), hb,
                      tuple(self.input_spec), self.class_names)


@dataclass
class Cam:
    """Per-class attribution maps (C×H×W, or N×C×H×W for a batch)."""

    scores: Tensor
    class_names: Optional[Sequence[str]] = None
    boosted: bool = False

    def channel(self, c: int, sample: Optional[int] = None) -> np.ndarray:
        s = self.scores.data
        return s[c] if s.ndim == 3 else s[sample, c]

    def logits(self) -> np.ndarray:
        return self.scores.data.mean(axis=(-2, -1))


def init_net(config: NetConfig, seed: int) -> CamNet:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    cin = config.in_channels
    k = config.kernel_size
    for cout in config.channels:
        bound = 1.0 / np.sqrt(cin * k * k)
        kern = rng.uniform(-bound, bound, size=(cout, cin, k, k))
        layers.append(ConvLayer(Tensor(kern, True), Tensor(np.zeros(cout), True), True))
        cin = cout
    bound = 1.0 / np.sqrt(cin)
    head = Tensor(rng.uniform(-bound, bound, size=(config.num_classes, cin)), True)
    hbias = Tensor(np.zeros(config.num_classes), True) if config.head_bias else None
    return CamNet(layers, head, hbias, (config.in_channels, config.height, config.width))


def _check_input(net: CamNet, x: Tensor) -> None:
    spec = tuple(net.input_spec)
    if x.shape[-3:] != spec or x.ndim not in (3, 4):
        raise DimensionError(f"input shape {x.shape} does not match input spec {spec}")


def forward_features(net: CamNet, x: Tensor, keep_preactivations: bool = False):
    """Last feature map F (D×H×W); optionally also each layer's pre-activation."""
    _check_input(net, x)
    h = x
    pre = []
    for layer in net.conv_layers:
        z = conv2d(h, layer.kernel, layer.bias)
        if keep_preactivations:
            pre.append(z.data)
        h = relu(z) if layer.relu else z
    return (h, pre) if keep_preactivations else h


def _head(net: CamNet, f: Tensor) -> Tensor:
    c, d = net.head_weight.shape
    return conv2d(f, net.head_weight.reshape(c, d, 1, 1), net.head_bias)


def forward_cam(net: CamNet, x: Tensor) -> Cam:
    return Cam(_head(net, forward_features(net, x)), net.class_names)


def cam_posthoc(features, head_weights, head_bias=None) -> Cam:
    """CAM computed after the fact as an explicit weighted sum of feature channels."""
    f = np.asarray(features.data if isinstance(features, Tensor) else features, dtype=np.float64)
    w = np.asarray(head_weights.data if isinstance(head_weights, Tensor) else head_weights,
                   dtype=np.float64)
    if f.ndim != 3 or w.ndim != 2 or w.shape[1] != f.shape[0]:
        raise DimensionError(f"features {f.shape} and head weights {w.shape} disagree")
    b = None
    if head_bias is not None:
        b = np.asarray(head_bias.data if isinstance(head_bias, Tensor) else head_bias)
        if b.shape != (w.shape[0],):
            raise DimensionError(f"head bias {b.shape} does not match {w.shape[0]} classes")
    m = np.zeros((w.shape[0],) + f.shape[1:])
    for c in range(w.shape[0]):
        for d in range(w.shape[1]):
            m[c] += w[c, d] * f[d]
        if b is not None:
            m[c] += b[c]
    return Cam(Tensor(m))


def pool_logits(cam: Cam, boost: Optional[BoostParams] = None,
                class_mask: Optional[np.ndarray] = None) -> Tensor:
    m = cam.scores
    if boost is not None:
        m = boostlu_map(m, boost, class_mask)
    return global_average_pool(m)


def forward_logits(net: CamNet, x: Tensor, boost: Optional[BoostParams] = None,
                   class_mask: Optional[np.ndarray] = None) -> Tensor:
    """GAP(M), or GAP(BoostLU(M)) when ``boost`` is given."""
    return pool_logits(forward_cam(net, x), boost, class_mask)


# ---------------------------------------------------------------------------
# checkpoint container

_CKPT_MAGIC = b"CAMBCKPT"
_CKPT_VERSION = 1


def _net_arrays(net: CamNet) -> list:
    arrays = []
    for i, layer in enumerate(net.conv_layers):
        arrays += [(f"conv{i}.kernel", layer.kernel.data), (f"conv{i}.bias", layer.bias.data)]
    arrays.append(("head.weight", net.head_weight.data))
    if net.head_bias is not None:
        arrays.append(("head.bias", net.head_bias.data))
    return arrays


def checkpoint_bytes(net: CamNet, metadata: Optional[dict] = None) -> bytes:
    arrays = _net_arrays(net)
    header = {
        "version": _CKPT_VERSION,
        "input_spec": list(net.input_spec),
        "relu": [l.relu for l in net.conv_layers],
        "class_names": list(net.class_names) if net.class_names else None,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
        "metadata": metadata or {},
    }
    hb = json.dumps(header, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    return _CKPT_MAGIC + struct.pack("<HI", _CKPT_VERSION, len(hb)) + hb + body


def save_checkpoint(net: CamNet, path, metadata: Optional[dict] = None) -> Path:
    path = Path(path)
    path.write_bytes(checkpoint_bytes(net, metadata))
    return path


def read_checkpoint(path) -> tuple[CamNet, dict]:
    """Returns (net, metadata)."""
    raw = Path(path).read_bytes()
    if not raw.startswith(_CKPT_MAGIC):
        raise FormatError(f"{path}: not a camboost checkpoint")
    off = len(_CKPT_MAGIC)
    version, hlen = struct.unpack_from("<HI", raw, off)
    if version != _CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    off += struct.calcsize("<HI")
    header = json.loads(raw[off:off + hlen])
    off += hlen
    arrays = {}
    for spec in header["arrays"]:
        n = int(np.prod(spec["shape"])) if spec["shape"] else 1
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(spec["shape"])
        arrays[spec["name"]] = arr.astype(np.float64)
        off += 8 * n
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    layers = [
        ConvLayer(Tensor(arrays[f"conv{i}.kernel"], True), Tensor(arrays[f"conv{i}.bias"], True), r)
        for i, r in enumerate(header["relu"])
    ]
    hb = Tensor(arrays["head.bias"], True) if "head.bias" in arrays else None
    net = CamNet(layers, Tensor(arrays["head.weight"], True), hb,
                 tuple(header["input_spec"]), header["class_names"])
    return net, header["metadata"]


def load_checkpoint(path) -> CamNet:
    return read_checkpoint(path)[0]


def same_architecture(a: CamNet, b: CamNet) -> bool:
    shapes = lambda net: [arr.shape for _, arr in _net_arrays(net)]
    return tuple(a.input_spec) == tuple(b.input_spec) and shapes(a) == shapes(b)
