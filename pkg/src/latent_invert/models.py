"""Network definitions: projector P, mapping network F, neural decoder and
discriminator, all built from a flat layer list."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import DimensionError, SpecError
from .rng import stream

LAYER_KINDS = ("dense", "conv", "activation", "flatten", "average-pool")


@dataclass(frozen=True)
class Layer:
    kind: str
    size: int = 0  # output features (dense), output channels (conv), window (pool)
    stride: int = 1
    fn: str = ""  # activation name


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    input_shape: tuple
    output_shape: tuple

    def shapes(self):
        """Per-layer output shapes (batch axis excluded); raises SpecError on
        the first layer that does not compose."""
        shape = tuple(self.input_shape)
        out = []
        for i, layer in enumerate(self.layers):
            shape = _next_shape(i, layer, shape)
            out.append(shape)
        if shape != tuple(self.output_shape):
            raise SpecError(f"final shape {shape} differs from declared output {self.output_shape}")
        return out


def _next_shape(i, layer, shape):
    where = f"layer {i} ({layer.kind})"
    if layer.kind == "dense":
        if len(shape) != 1 or layer.size < 1:
            raise SpecError(f"{where}: dense needs a flat input, got {shape}")
        return (layer.size,)
    if layer.kind == "conv":
        if len(shape) != 3 or shape[1] < 3 or shape[2] < 3 or layer.stride not in (1, 2) or layer.size < 1:
            raise SpecError(f"{where}: conv needs (C, H>=3, W>=3) and stride 1|2, got {shape}")
        s = layer.stride
        return (layer.size, -(-shape[1] // s), -(-shape[2] // s))
    if layer.kind == "activation":
        if layer.fn not in ("relu", "tanh", "sigmoid"):
            raise SpecError(f"{where}: unknown activation {layer.fn!r}")
        return shape
    if layer.kind == "flatten":
        return (int(np.prod(shape)),)
    if layer.kind == "average-pool":
        if len(shape) != 3 or shape[1] % layer.size or shape[2] % layer.size:
            raise SpecError(f"{where}: pool window {layer.size} does not divide {shape}")
        return (shape[0], shape[1] // layer.size, shape[2] // layer.size)
    raise SpecError(f"{where}: unknown layer kind")


class ParameterStore(dict):
    """Insertion-ordered ``name -> Tensor`` map.  ``spec`` is the network the
    tensors belong to, when known."""

    def __init__(self, items=(), spec=None):
        super().__init__()
        self.spec = spec
        for name, t in dict(items).items():
            self.add(name, t)

    def add(self, name, t):
        if name in self:
            raise KeyError(f"duplicate parameter name {name!r}")
        if not isinstance(t, nc.Tensor):
            t = nc.Tensor(t)
        self[name] = t
        return t

    def zero_grad(self):
        for t in self.values():
            t.grad = None

    def trainable(self, flag=True):
        for t in self.values():
            t.requires_grad = flag
        return self

    def copy(self):
        out = ParameterStore(spec=self.spec)
        for name, t in self.items():
            out.add(name, nc.Tensor(t.data.copy(), requires_grad=t.requires_grad))
        return out

    def checksum(self):
        h = hashlib.sha256()
        for name, t in self.items():
            h.update(name.encode("ascii"))
            h.update(np.asarray(t.shape, dtype="<u4").tobytes())
            h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return h.hexdigest()

    def size(self):
        return sum(t.size for t in self.values())


def _param_names(i, layer):
    return f"{layer.kind}{i}.w", f"{layer.kind}{i}.b"


def init_network(spec, seed, stream_name="init"):
    """Glorot-uniform weights, zero biases.

    Weights are drawn from ``Uniform(-s, s)`` with
    ``s = sqrt(6 / (fan_in + fan_out))``; conv fans count the 3x3 window.
    """
    shapes = spec.shapes()
    rng = stream(seed, stream_name)
    store = ParameterStore(spec=spec)
    prev = tuple(spec.input_shape)
    for i, (layer, shape) in enumerate(zip(spec.layers, shapes)):
        wname, bname = _param_names(i, layer)
        if layer.kind == "dense":
            fan_in, fan_out = prev[0], layer.size
            s = np.sqrt(6.0 / (fan_in + fan_out))
            store.add(wname, rng.uniform(-s, s, size=(fan_in, fan_out)))
            store.add(bname, np.zeros(fan_out))
        elif layer.kind == "conv":
            fan_in, fan_out = prev[0] * 9, layer.size * 9
            s = np.sqrt(6.0 / (fan_in + fan_out))
            store.add(wname, rng.uniform(-s, s, size=(layer.size, prev[0], 3, 3)))
            store.add(bname, np.zeros(layer.size))
        prev = shape
    return store


def run_network(params, x, taps=None):
    """Forward ``x`` (batch first) through ``params.spec``.

    When ``taps`` is a list, every activation output that directly follows
    a conv layer is appended to it.
    """
    spec = params.spec
    if spec is None:
        raise SpecError("parameter store carries no network spec")
    if not isinstance(x, nc.Tensor):
        x = nc.Tensor(x)
    if tuple(x.shape[1:]) != tuple(spec.input_shape):
        raise DimensionError(f"input {x.shape[1:]} does not match network input {spec.input_shape}")
    h = x
    prev_kind = None
    for i, layer in enumerate(spec.layers):
        wname, bname = _param_names(i, layer)
        if layer.kind == "dense":
            h = nc.add_bias(nc.matmul(h, params[wname]), params[bname])
        elif layer.kind == "conv":
            h = nc.add_bias(nc.conv2d(h, params[wname], layer.stride), params[bname])
        elif layer.kind == "activation":
            h = nc.elementwise(h, layer.fn)
            if taps is not None and prev_kind == "conv":
                taps.append(h)
        elif layer.kind == "flatten":
            h = nc.flatten(h)
        elif layer.kind == "average-pool":
            h = nc.avg_pool2d(h, layer.size)
        prev_kind = layer.kind
    return h


# -- default architectures ----------------------------------------------------

def _conv_stack(channels, act="relu"):
    layers = []
    for c in channels:
        layers += [Layer("conv", c, stride=2), Layer("activation", fn=act)]
    return layers


def projector_spec(resolution=32, w_dim=8, channels=(8, 16, 32)):
    layers = _conv_stack(channels) + [Layer("flatten"), Layer("dense", w_dim)]
    return NetworkSpec(tuple(layers), (1, resolution, resolution), (w_dim,))


def mapping_spec(z_dim=16, w_dim=8, hidden=32):
    layers = (Layer("dense", hidden), Layer("activation", fn="tanh"), Layer("dense", w_dim))
    return NetworkSpec(layers, (z_dim,), (w_dim,))


def decoder_spec(w_dim=8, resolution=32, hidden=64):
    layers = (Layer("dense", hidden), Layer("activation", fn="tanh"), Layer("dense", resolution * resolution))
    return NetworkSpec(layers, (w_dim,), (resolution * resolution,))


def discriminator_spec(resolution=32, channels=(8, 16, 32)):
    layers = _conv_stack(channels) + [Layer("flatten"), Layer("dense", 1)]
    return NetworkSpec(tuple(layers), (1, resolution, resolution), (1,))


# -- named forward passes -----------------------------------------------------

def mlp_forward(params, x):
    return run_network(params, x)


def _as_image_batch(params, images, what):
    images = images if isinstance(images, nc.Tensor) else nc.Tensor(images)
    res = params.spec.input_shape[1]
    if images.data.ndim != 3 or images.shape[1:] != (res, res):
        raise DimensionError(
            f"{what} expects images of shape (N, {res}, {res}), got {images.shape}; "
            "resize first with imaging.resize_bilinear"
        )
    return nc.reshape(images, (images.shape[0], 1, res, res))


def projector_forward(params, images):
    """Images ``(N, H, W)`` to latent estimates ``(N, w_dim)``."""
    return run_network(params, _as_image_batch(params, images, "projector"))


def discriminator_forward(params, images):
    """Returns ``(logits (N, 1), features)``; logits are raw scores."""
    taps = []
    logits = run_network(params, _as_image_batch(params, images, "discriminator"), taps)
    return logits, taps
