"""Convolutional autoencoder for image-feature extraction.

Hourglass stack: stride-2 convolutions halve each spatial dimension, fully
connected layers squeeze to a sigmoid bottleneck whose output is the image
feature vector, then the mirror decoder reconstructs the image. ReLU
everywhere except the bottleneck and the final reconstruction layer, which
are sigmoid.

Images cross the public interface in pixel range [0, 255]; internally pixels
are scaled to [0, 1] so the summed-squared-error loss keeps gradients at a
trainable magnitude. The loss is 0.5 * sum((reconstruction - image)^2) over
[0, 1] pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .numerics.layers import (
    conv2d_backward,
    conv2d_forward,
    conv_output_extent,
    deconv2d_backward,
    deconv2d_forward,
    deconv_output_extent,
    fc_backward,
    fc_forward,
)
from .numerics.optim import sgd_step
from .numerics.seeding import spawn_rng
from .numerics.tensor import NumericsError
from .serialize import read_container, write_container

MAGIC = b"CAE1"


class CaeError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, message: str):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the stack: kind, shapes, geometry, activation.

    Shapes are internal [C, H, W] triples for conv/deconv and flat widths for
    fully connected layers.
    """

    kind: str
    in_shape: tuple
    out_shape: tuple
    kernel: tuple[int, int] = (4, 4)
    stride: tuple[int, int] = (2, 2)
    padding: tuple[int, int] = (1, 1)
    activation: str = "relu"

    def __post_init__(self):
        if self.kind not in ("conv", "deconv", "fc"):
            raise CaeError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv":
            c, h, w = self.in_shape
            k, oh, ow = self.out_shape
            eh = conv_output_extent(h, self.kernel[0], self.stride[0], self.padding[0])
            ew = conv_output_extent(w, self.kernel[1], self.stride[1], self.padding[1])
            if (eh, ew) != (oh, ow):
                raise CaeError(
                    f"conv shape chain broken: {h}x{w} -> expected {eh}x{ew}, "
                    f"declared {oh}x{ow}"
                )
        if self.kind == "deconv":
            c, h, w = self.in_shape
            k, oh, ow = self.out_shape
            eh = deconv_output_extent(h, self.kernel[0], self.stride[0], self.padding[0])
            ew = deconv_output_extent(w, self.kernel[1], self.stride[1], self.padding[1])
            if (eh, ew) != (oh, ow):
                raise CaeError(
                    f"deconv shape chain broken: {h}x{w} -> expected {eh}x{ew}, "
                    f"declared {oh}x{ow}"
                )


@dataclass(frozen=True)
class CaeConfig:
    """Architecture and training hyperparameters.

    ``input_shape`` uses the external (width, height, channels) convention.
    ``fc_widths`` lists hidden fully connected widths between the flattened
    conv stack and the bottleneck; the flatten width itself is derived from
    the shape chain.
    """

    input_shape: tuple[int, int, int] = (32, 24, 3)
    conv_channels: tuple[int, ...] = (8, 16, 32)
    fc_widths: tuple[int, ...] = (64,)
    bottleneck: int = 15
    kernel: tuple[int, int] = (4, 4)
    stride: tuple[int, int] = (2, 2)
    padding: tuple[int, int] = (1, 1)
    epochs: int = 500
    learning_rate: float = 0.01
    batch_size: int = 4
    lr_decay: float = 0.5
    lr_decay_every: int = 250
    seed: int = 0

    def __post_init__(self):
        if self.bottleneck < 1 or not self.conv_channels:
            raise CaeError("need at least one conv layer and a positive bottleneck")
        if self.learning_rate <= 0:
            raise CaeError("learning rate must be positive")

    def internal_input(self) -> tuple[int, int, int]:
        w, h, c = self.input_shape
        return (c, h, w)

    def to_json(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "CaeConfig":
        d = dict(d)
        for key in ("input_shape", "conv_channels", "fc_widths", "kernel", "stride", "padding"):
            d[key] = tuple(d[key])
        return cls(**d)


def paper_config() -> CaeConfig:
    """Full-scale preset: 128x96x3 input, five conv layers, fc 6144-254-15."""
    return CaeConfig(input_shape=(128, 96, 3), conv_channels=(32, 64, 128, 256, 512),
                     fc_widths=(254,), bottleneck=15, epochs=1000, seed=0)


def desk_config(**overrides) -> CaeConfig:
    """Desk-scale default used throughout the test experiments."""
    return CaeConfig(**overrides) if overrides else CaeConfig()


@dataclass
class CaeModel:
    """Ordered encoder and decoder layers with their weights."""

    config: CaeConfig
    encoder: list[LayerSpec]
    decoder: list[LayerSpec]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def layers(self) -> list[LayerSpec]:
        return self.encoder + self.decoder

    @property
    def bottleneck_index(self) -> int:
        return len(self.encoder) - 1

    def copy(self) -> "CaeModel":
        return CaeModel(self.config, list(self.encoder), list(self.decoder),
                        [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def layer_shapes(self) -> list[tuple]:
        """(in, out) per layer in the external (width, height, channels)
        convention; fully connected shapes are plain widths."""
        out = []
        for spec in self.layers:
            if spec.kind == "fc":
                out.append((spec.in_shape[0], spec.out_shape[0]))
            else:
                (c, h, w), (k, oh, ow) = spec.in_shape, spec.out_shape
                out.append(((w, h, c), (ow, oh, k)))
        return out


def build(config: CaeConfig) -> CaeModel:
    """Construct the layer chain and seeded initial weights for ``config``."""
    c0, h0, w0 = config.internal_input()
    encoder: list[LayerSpec] = []
    c, h, w = c0, h0, w0
    for k in config.conv_channels:
        oh = conv_output_extent(h, config.kernel[0], config.stride[0], config.padding[0])
        ow = conv_output_extent(w, config.kernel[1], config.stride[1], config.padding[1])
        encoder.append(LayerSpec("conv", (c, h, w), (k, oh, ow), config.kernel,
                                 config.stride, config.padding, "relu"))
        c, h, w = k, oh, ow
    flat = c * h * w
    widths = [flat, *config.fc_widths, config.bottleneck]
    for i, (din, dout) in enumerate(zip(widths, widths[1:])):
        act = "sigmoid" if dout == config.bottleneck and i == len(widths) - 2 else "relu"
        encoder.append(LayerSpec("fc", (din,), (dout,), activation=act))

    decoder: list[LayerSpec] = []
    rwidths = widths[::-1]
    for din, dout in zip(rwidths, rwidths[1:]):
        decoder.append(LayerSpec("fc", (din,), (dout,), activation="relu"))
    chans = [c0, *config.conv_channels]
    shapes = [(c0, h0, w0)]
    cc, hh, ww = c0, h0, w0
    for k in config.conv_channels:
        hh = conv_output_extent(hh, config.kernel[0], config.stride[0], config.padding[0])
        ww = conv_output_extent(ww, config.kernel[1], config.stride[1], config.padding[1])
        shapes.append((k, hh, ww))
    for i in range(len(config.conv_channels) - 1, -1, -1):
        act = "sigmoid" if i == 0 else "relu"
        decoder.append(LayerSpec("deconv", shapes[i + 1], shapes[i], config.kernel,
                                 config.stride, config.padding, act))

    rng = spawn_rng(config.seed, "cae-init")
    weights, biases = [], []
    for spec in encoder + decoder:
        if spec.kind == "conv":
            cin, k = spec.in_shape[0], spec.out_shape[0]
            kh, kw = spec.kernel
            fan_in, fan_out = cin * kh * kw, k * kh * kw
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(k, cin, kh, kw)))
            biases.append(np.zeros(k))
        elif spec.kind == "deconv":
            cin, cout = spec.in_shape[0], spec.out_shape[0]
            kh, kw = spec.kernel
            fan_in, fan_out = cin * kh * kw, cout * kh * kw
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(cin, cout, kh, kw)))
            biases.append(np.zeros(cout))
        else:
            din, dout = spec.in_shape[0], spec.out_shape[0]
            bound = np.sqrt(6.0 / (din + dout))
            weights.append(rng.uniform(-bound, bound, size=(dout, din)))
            biases.append(np.zeros(dout))
    return CaeModel(config=config, encoder=encoder, decoder=decoder,
                    weights=weights, biases=biases)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _as_image_batch(model: CaeModel, images: np.ndarray) -> tuple[np.ndarray, bool]:
    c, h, w = model.config.internal_input()
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
        batched = False
    else:
        batched = True
    if images.ndim != 4 or images.shape[1:] != (c, h, w):
        raise CaeError(f"images must be [B, {c}, {h}, {w}] or [{c}, {h}, {w}], "
                       f"got {images.shape}")
    return images, batched


def _layer_forward(spec: LayerSpec, x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    if spec.kind == "conv":
        return conv2d_forward(x, w, spec.stride, spec.padding, b, spec.activation)
    if spec.kind == "deconv":
        return deconv2d_forward(x, w, spec.stride, spec.padding, b, spec.activation)
    return fc_forward(x, w, b, spec.activation)


def _layer_backward(spec: LayerSpec, x: np.ndarray, w: np.ndarray, b: np.ndarray,
                    grad_out: np.ndarray):
    if spec.kind == "conv":
        return conv2d_backward(x, w, grad_out, spec.stride, spec.padding, b, spec.activation)
    if spec.kind == "deconv":
        return deconv2d_backward(x, w, grad_out, spec.stride, spec.padding, b, spec.activation)
    return fc_backward(x, w, grad_out, b, spec.activation)


def _forward_stack(model: CaeModel, x01: np.ndarray, keep: bool = False):
    """Run scaled pixels through every layer; optionally keep per-layer inputs."""
    b = x01.shape[0]
    inputs = []
    cur = x01
    for i, spec in enumerate(model.layers):
        if spec.kind == "fc" and cur.ndim == 4:
            cur = cur.reshape(b, -1)
        elif spec.kind == "deconv" and cur.ndim == 2:
            cur = cur.reshape(b, *spec.in_shape)
        if keep:
            inputs.append(cur)
        cur = _layer_forward(spec, cur, model.weights[i], model.biases[i])
    return (cur, inputs) if keep else cur


def encode(model: CaeModel, image: np.ndarray) -> np.ndarray:
    """Feature vector(s) in (0, 1): bottleneck output for [0, 255] image(s)."""
    images, batched = _as_image_batch(model, image)
    cur = images / 255.0
    b = cur.shape[0]
    for i, spec in enumerate(model.encoder):
        if spec.kind == "fc" and cur.ndim == 4:
            cur = cur.reshape(b, -1)
        cur = _layer_forward(spec, cur, model.weights[i], model.biases[i])
    return cur if batched else cur[0]


def decode(model: CaeModel, features: np.ndarray) -> np.ndarray:
    """Reconstruction in [0, 255] from bottleneck feature vector(s)."""
    features = np.asarray(features, dtype=np.float64)
    batched = features.ndim == 2
    cur = features if batched else features[None]
    if cur.shape[1] != model.config.bottleneck:
        raise CaeError(f"features must have width {model.config.bottleneck}, "
                       f"got {cur.shape[1]}")
    b = cur.shape[0]
    offset = len(model.encoder)
    for i, spec in enumerate(model.decoder):
        if spec.kind == "deconv" and cur.ndim == 2:
            cur = cur.reshape(b, *spec.in_shape)
        cur = _layer_forward(spec, cur, model.weights[offset + i], model.biases[offset + i])
    out = cur * 255.0
    return out if batched else out[0]


def reconstruct(model: CaeModel, image: np.ndarray) -> np.ndarray:
    """Full pass: [0, 255] image(s) in, [0, 255] reconstruction(s) out."""
    images, batched = _as_image_batch(model, image)
    out = _forward_stack(model, images / 255.0) * 255.0
    return out if batched else out[0]


def reconstruction_error(reconstruction: np.ndarray, images: np.ndarray) -> float:
    """0.5 * sum((y - x)^2) with both arguments in [0, 255], scaled to [0, 1]."""
    reconstruction = np.asarray(reconstruction, dtype=np.float64)
    images = np.asarray(images, dtype=np.float64)
    if reconstruction.shape != images.shape:
        raise CaeError(f"shape mismatch: {reconstruction.shape} vs {images.shape}")
    diff = (reconstruction - images) / 255.0
    return 0.5 * float(np.sum(diff * diff))


def loss(model: CaeModel, batch: np.ndarray) -> float:
    """0.5 * sum((y - x)^2) over the batch, pixels scaled to [0, 1]."""
    images, _ = _as_image_batch(model, batch)
    x01 = images / 255.0
    y01 = _forward_stack(model, x01)
    return 0.5 * float(np.sum((y01 - x01) ** 2))


def loss_and_grads(model: CaeModel, batch: np.ndarray):
    """Loss plus gradients wrt every weight and bias tensor."""
    images, _ = _as_image_batch(model, batch)
    x01 = images / 255.0
    b = x01.shape[0]
    y01, inputs = _forward_stack(model, x01, keep=True)
    total = 0.5 * float(np.sum((y01 - x01) ** 2))
    grad = y01 - x01
    grad_ws: list = [None] * len(model.layers)
    grad_bs: list = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        spec = model.layers[i]
        # incoming grad matches this layer's output; flat/spatial reshapes
        # between stages are pure views
        if spec.kind == "fc":
            grad = grad.reshape(b, spec.out_shape[0])
        else:
            grad = grad.reshape(b, *spec.out_shape)
        gx, gw, gb = _layer_backward(spec, inputs[i], model.weights[i],
                                     model.biases[i], grad)
        grad_ws[i], grad_bs[i] = gw, gb
        grad = gx
    return total, grad_ws, grad_bs


def train(model: CaeModel, images: np.ndarray, config: CaeConfig | None = None):
    """Minibatch SGD over ``images`` ([N, C, H, W] in [0, 255]).

    Returns ``(trained model, per-epoch loss history)``; the input model is
    untouched. The learning rate decays by ``lr_decay`` every
    ``lr_decay_every`` epochs. Raises :class:`TrainingDiverged` with the
    epoch index if the loss goes non-finite.
    """
    config = config or model.config
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[0] < 2:
        raise CaeError("training needs at least 2 images shaped [N, C, H, W]")
    model = model.copy()
    n = images.shape[0]
    history: list[float] = []
    rng = spawn_rng(config.seed, "cae-train")
    lr = config.learning_rate
    for epoch in range(config.epochs):
        if epoch > 0 and epoch % config.lr_decay_every == 0:
            lr *= config.lr_decay
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch = images[order[start:start + config.batch_size]]
            batch_loss, grad_ws, grad_bs = loss_and_grads(model, batch)
            total += batch_loss
            if not np.isfinite(batch_loss):
                raise TrainingDiverged(epoch, "loss is not finite")
            for i in range(len(model.layers)):
                model.weights[i] = sgd_step(model.weights[i], grad_ws[i], lr)
                model.biases[i] = sgd_step(model.biases[i], grad_bs[i], lr)
        history.append(total)
    return model, history


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_model(path: Path, model: CaeModel) -> None:
    tensors: list[np.ndarray] = []
    for w, b in zip(model.weights, model.biases):
        tensors.append(w)
        tensors.append(b)
    with open(path, "wb") as fh:
        write_container(fh, MAGIC, {"config": model.config.to_json()}, tensors)


def load_model(path: Path) -> CaeModel:
    with open(path, "rb") as fh:
        header, tensors = read_container(fh, MAGIC)
    config = CaeConfig.from_json(header["config"])
    model = build(config)
    if len(tensors) != 2 * len(model.layers):
        raise CaeError(f"model file holds {len(tensors)} tensors, "
                       f"expected {2 * len(model.layers)}")
    for i in range(len(model.layers)):
        w, b = tensors[2 * i], tensors[2 * i + 1]
        if w.shape != model.weights[i].shape or b.shape != model.biases[i].shape:
            raise CaeError(f"layer {i}: stored shapes {w.shape}/{b.shape} do not match "
                           f"architecture {model.weights[i].shape}/{model.biases[i].shape}")
        model.weights[i] = w
        model.biases[i] = b
    return model
