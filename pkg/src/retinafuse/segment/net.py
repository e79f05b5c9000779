"""Reduced U-Net: encoder/decoder with half-width skip connections.

Layout (depth d, base width b, level width c_i = b * 2**i):

* encoder level i: conv3 -> relu -> conv3 -> relu, kept as skip, 2x2 max pool
* bottleneck: two conv3+relu at width c_d
* decoder level i: 2x nearest upsample -> conv3+relu to c_i, concatenate the
  first ``max(1, c_i // 2)`` skip channels, then two conv3+relu
* head: 1x1 conv to 2 logits (background, vessel), softmax

All convolutions are same-padded, so output size equals input size.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ModelFormatError, ShapeError
from ..seeding import make_rng
from . import layers as L
from .loss import PROB_FLOOR, WeightMapParams

log = logging.getLogger(__name__)

MODEL_FORMAT = "retinafuse-segnet"
MODEL_VERSION = 1


@dataclass(frozen=True)
class SegNetConfig:
    depth: int = 2
    base_channels: int = 8
    in_channels: int = 1
    n_classes: int = 2

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be at least 1")
        if self.base_channels < 1:
            raise ValueError("base_channels must be at least 1")

    def width(self, level: int) -> int:
        return self.base_channels * 2**level

    def skip_width(self, level: int) -> int:
        return max(1, self.width(level) // 2)


def _layer_specs(cfg: SegNetConfig):
    """(name, kernel, in, out) for every conv layer in execution order."""
    specs = []
    cin = cfg.in_channels
    for i in range(cfg.depth):
        c = cfg.width(i)
        specs += [(f"enc{i}.a", 3, cin, c), (f"enc{i}.b", 3, c, c)]
        cin = c
    c = cfg.width(cfg.depth)
    specs += [("mid.a", 3, cin, c), ("mid.b", 3, c, c)]
    for i in reversed(range(cfg.depth)):
        c_up, c = cfg.width(i + 1), cfg.width(i)
        specs += [
            (f"dec{i}.up", 3, c_up, c),
            (f"dec{i}.a", 3, c + cfg.skip_width(i), c),
            (f"dec{i}.b", 3, c, c),
        ]
    specs.append(("head", 1, cfg.width(0), cfg.n_classes))
    return specs


@dataclass
class SegNet:
    """Network parameters: ``params[name] = (kernel, bias)`` in layer order.

    Kernels are stored ``(k, k, in, out)``.
    """

    config: SegNetConfig
    params: dict
    seed: int = 0
    epochs: int = 0
    weight_params: WeightMapParams = field(default_factory=WeightMapParams)

    @classmethod
    def init(cls, config: SegNetConfig | None = None, seed: int = 0, dtype=np.float32):
        config = config or SegNetConfig()
        rng = make_rng(seed, "segnet-init")
        params = {}
        for name, k, cin, cout in _layer_specs(config):
            std = np.sqrt(2.0 / (k * k * cin))
            kernel = rng.standard_normal((k, k, cin, cout)) * std
            params[name] = (kernel.astype(dtype), np.zeros(cout, dtype=dtype))
        return cls(config, params, seed=seed)

    @property
    def dtype(self):
        return next(iter(self.params.values()))[0].dtype

    def astype(self, dtype) -> "SegNet":
        params = {k: (w.astype(dtype), b.astype(dtype)) for k, (w, b) in self.params.items()}
        return SegNet(self.config, params, self.seed, self.epochs, self.weight_params)

    def flat_params(self) -> list:
        """Parameter arrays in canonical order (kernel, bias per layer)."""
        out = []
        for w, b in self.params.values():
            out += [w, b]
        return out

    def n_params(self) -> int:
        return sum(a.size for a in self.flat_params())

    def copy(self) -> "SegNet":
        return self.astype(self.dtype)


def _check_input(net: SegNet, x: np.ndarray):
    if x.ndim != 4 or x.shape[3] != net.config.in_channels:
        raise ShapeError(f"expected (N, H, W, {net.config.in_channels}) input, got {x.shape}")
    f = 2**net.config.depth
    if x.shape[1] % f or x.shape[2] % f:
        raise ShapeError(f"spatial dims {x.shape[1:3]} not divisible by {f}")


def _forward(net: SegNet, x: np.ndarray):
    """NHWC forward pass; returns (probabilities, tape for backward)."""
    _check_input(net, x)
    cfg, P = net.config, net.params
    tape = []

    def conv_relu(name, h):
        z, cc = L.conv_forward(h, *P[name])
        a, rc = L.relu_forward(z)
        tape.append(("conv_relu", name, cc, rc))
        return a

    skips = []
    h = x.astype(net.dtype, copy=False)
    for i in range(cfg.depth):
        h = conv_relu(f"enc{i}.a", h)
        h = conv_relu(f"enc{i}.b", h)
        skips.append(h)
        h, pc = L.pool_forward(h)
        tape.append(("pool", i, pc))
    h = conv_relu("mid.a", h)
    h = conv_relu("mid.b", h)
    for i in reversed(range(cfg.depth)):
        h = L.upsample_forward(h)
        tape.append(("up", i))
        h = conv_relu(f"dec{i}.up", h)
        keep = cfg.skip_width(i)
        h = np.concatenate([h, skips[i][..., :keep]], axis=-1)
        tape.append(("cat", i, cfg.width(i), keep, cfg.width(i)))
        h = conv_relu(f"dec{i}.a", h)
        h = conv_relu(f"dec{i}.b", h)
    z, cc = L.conv_forward(h, *P["head"])
    tape.append(("head", "head", cc))
    return L.softmax(z), tape


def forward(net: SegNet, batch: np.ndarray) -> np.ndarray:
    """Per-pixel class probabilities for an ``(N, C, H, W)`` batch.

    Returns ``(N, 2, H, W)``; channel 1 is the vessel probability.
    """
    batch = np.asarray(batch)
    if batch.ndim != 4:
        raise ShapeError(f"expected a 4-d batch, got shape {batch.shape}")
    probs, _ = _forward(net, batch.transpose(0, 2, 3, 1))
    return probs.transpose(0, 3, 1, 2)


def _backward(net: SegNet, probs, tape, truth, weights, scale=1.0):
    """Gradients of ``scale * sum(w * -log p_true)`` given a forward tape."""
    cfg = net.config
    onehot = np.eye(cfg.n_classes, dtype=probs.dtype)[truth]
    p_true = (probs * onehot).sum(axis=-1)
    active = (p_true >= PROB_FLOOR).astype(probs.dtype)
    g = (scale * weights * active).astype(probs.dtype)[..., None] * (probs - onehot)
    grads = {}
    skip_grads = {}
    for entry in reversed(tape):
        kind = entry[0]
        if kind == "head":
            g, dw, db = L.conv_backward(g, entry[2])
            grads["head"] = (dw, db)
        elif kind == "conv_relu":
            _, name, cc, rc = entry
            g = L.relu_backward(g, rc)
            g, dw, db = L.conv_backward(g, cc)
            grads[name] = (dw, db)
        elif kind == "cat":
            _, i, c_main, keep, c_skip = entry
            gs = np.zeros(g.shape[:3] + (c_skip,), dtype=g.dtype)
            gs[..., :keep] = g[..., c_main:]
            skip_grads[i] = gs
            g = g[..., :c_main]
        elif kind == "up":
            g = L.upsample_backward(g)
        elif kind == "pool":
            _, i, pc = entry
            g = L.pool_backward(g, pc) + skip_grads.pop(i)
    return [a for name in net.params for a in grads[name]]


def backward(net: SegNet, batch, truth, w) -> list:
    """Analytic gradient of the weighted cross-entropy of ``forward(net, batch)``.

    batch: (N, C, H, W); truth, w: (N, H, W). The returned list follows
    :meth:`SegNet.flat_params` order.
    """
    batch = np.asarray(batch)
    truth = np.asarray(truth).astype(np.intp)
    w = np.asarray(w, dtype=np.float64)
    if truth.shape != (batch.shape[0],) + batch.shape[2:] or w.shape != truth.shape:
        raise ShapeError(f"truth/weights must have shape {(batch.shape[0],) + batch.shape[2:]}")
    probs, tape = _forward(net, batch.transpose(0, 2, 3, 1))
    return _backward(net, probs, tape, truth, w)


@dataclass
class TrainResult:
    net: SegNet
    loss_history: list


class TrainingDiverged(RuntimeError):
    pass


def train(
    net: SegNet,
    images,
    masks,
    weights,
    epochs: int,
    lr=(1e-1, 1e-2),
    batch_size: int = 4,
    seed: int = 0,
    augment: bool = True,
) -> TrainResult:
    """Plain minibatch SGD on the pixel-averaged weighted cross-entropy.

    ``lr`` is either a float or a pair ``(first half, second half)``.
    ``images`` are (H, W) arrays, ``masks`` their {0,1} truth and ``weights``
    their weight maps. Returns the trained copy and the per-epoch mean loss.
    """
    if len(images) == 0:
        raise ValueError("empty training set")
    X = np.stack([np.asarray(im) for im in images])[..., None].astype(net.dtype)
    Y = np.stack([np.asarray(m) for m in masks]).astype(np.intp)
    W = np.stack([np.asarray(w) for w in weights]).astype(net.dtype)
    lrs = (lr, lr) if np.isscalar(lr) else tuple(lr)
    net = net.copy()
    names = list(net.params)
    n = len(X)
    history = []
    for epoch in range(epochs):
        rate = lrs[0] if epoch < (epochs + 1) // 2 else lrs[1]
        order = make_rng(seed, "segnet-train", epoch).permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = np.sort(order[start : start + batch_size])
            xb, yb, wb = X[idx], Y[idx], W[idx]
            if augment:
                xb, yb, wb = _augment(xb, yb, wb, make_rng(seed, "segnet-aug", epoch, start))
            probs, tape = _forward(net, xb)
            scale = 1.0 / yb.size
            p_true = np.take_along_axis(probs, yb[..., None], axis=-1)[..., 0]
            loss = float(-(wb * np.log(np.maximum(p_true, PROB_FLOOR))).sum() * scale)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch starting {start} (lr={rate})"
                )
            total += loss * len(idx)
            grads = _backward(net, probs, tape, yb, wb, scale)
            if rate:
                for k, name in enumerate(names):
                    wk, bk = net.params[name]
                    net.params[name] = (
                        wk - rate * grads[2 * k].astype(wk.dtype),
                        bk - rate * grads[2 * k + 1].astype(bk.dtype),
                    )
        history.append(total / n)
        log.info("epoch %d loss %.5f", epoch, history[-1])
    net.epochs += epochs
    return TrainResult(net, history)


def train_from_masks(
    images,
    masks,
    epochs: int,
    seed: int = 0,
    config: SegNetConfig | None = None,
    lr=(1e-1, 1e-2),
    batch_size: int = 4,
    w0: float = 10.0,
    sigma: float = 5.0,
) -> TrainResult:
    """Initialize a network and train it on (image, mask) pairs.

    Class weights are inverse class frequencies of the training masks.
    """
    from .loss import class_weights_from_masks, weight_map

    wp = WeightMapParams(w0, sigma, class_weights_from_masks(masks))
    weights = [weight_map(m, wp) for m in masks]
    net = SegNet.init(config, seed=seed)
    net.weight_params = wp
    return train(net, images, masks, weights, epochs, lr, batch_size, seed)


def _augment(xb, yb, wb, rng):
    """Random flips and right-angle rotations, one draw per sample."""
    xs, ys, ws = [], [], []
    for x, y, w in zip(xb, yb, wb):
        code = int(rng.integers(8))
        k, flip = code % 4, code >= 4
        x, y, w = (np.rot90(a, k, axes=(0, 1)) for a in (x, y, w))
        if flip:
            x, y, w = x[:, ::-1], y[:, ::-1], w[:, ::-1]
        xs.append(x)
        ys.append(y)
        ws.append(w)
    return np.stack(xs), np.stack(ys), np.stack(ws)


def vessel_probability(net: SegNet, img: np.ndarray) -> np.ndarray:
    """Vessel probability map of one gray image (any size)."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    f = 2**net.config.depth
    ph, pw = (-h) % f, (-w) % f
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw)), mode="reflect" if min(h, w) > 1 else "edge")
    probs, _ = _forward(net, img[None, :, :, None])
    return probs[0, :h, :w, 1].astype(np.float64)


def predict_mask(net: SegNet, img: np.ndarray):
    """Binary vessel mask and the vessel probability map.

    A pixel is vessel only when its probability strictly exceeds 0.5.
    """
    prob = vessel_probability(net, img)
    return mask_from_probability(prob), prob


def mask_from_probability(prob: np.ndarray) -> np.ndarray:
    return (np.asarray(prob) > 0.5).astype(np.uint8)


# Model file layout (all integers little-endian):
#   bytes 0..7    magic b"RFSEGNET"
#   bytes 8..11   uint32 header length H
#   next H bytes  UTF-8 JSON header: format, version, config, seed, epochs,
#                 weight map params, and the [name, shape] list of arrays
#   remainder     float32 arrays in header order, C-contiguous
_MAGIC = b"RFSEGNET"


def save_segnet(net: SegNet, path) -> None:
    arrays = []
    for name, (w, b) in net.params.items():
        arrays += [(name + ".kernel", w), (name + ".bias", b)]
    header = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "config": asdict(net.config),
        "seed": net.seed,
        "epochs": net.epochs,
        "weight_params": {
            "w0": net.weight_params.w0,
            "sigma": net.weight_params.sigma,
            "class_weights": list(net.weight_params.class_weights),
        },
        "arrays": [[n, list(a.shape)] for n, a in arrays],
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    blob = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for _, a in arrays)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(_MAGIC + struct.pack("<I", len(hbytes)) + hbytes + blob)
    tmp.replace(path)


def load_segnet(path) -> SegNet:
    path = Path(path)
    if not path.is_file():
        raise ModelFormatError(f"{path}: segmentation model not found")
    data = path.read_bytes()
    if data[:8] != _MAGIC:
        raise ModelFormatError(f"{path}: not a segmentation model file")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12 : 12 + hlen])
    if header.get("format") != MODEL_FORMAT or header.get("version") != MODEL_VERSION:
        raise ModelFormatError(
            f"{path}: unsupported model version {header.get('format')}/{header.get('version')}"
        )
    config = SegNetConfig(**header["config"])
    offset = 12 + hlen
    values = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        values[name] = arr.reshape(shape).astype(np.float32)
        offset += 4 * count
    if offset != len(data):
        raise ModelFormatError(f"{path}: parameter blob length mismatch")
    params = {}
    for name, k, cin, cout in _layer_specs(config):
        w, b = values[name + ".kernel"], values[name + ".bias"]
        if w.shape != (k, k, cin, cout) or b.shape != (cout,):
            raise ModelFormatError(f"{path}: bad shape for layer {name}")
        params[name] = (w, b)
    wp = header["weight_params"]
    return SegNet(
        config,
        params,
        seed=header["seed"],
        epochs=header["epochs"],
        weight_params=WeightMapParams(wp["w0"], wp["sigma"], tuple(wp["class_weights"])),
    )
