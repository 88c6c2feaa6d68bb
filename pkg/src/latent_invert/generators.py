"""Frozen generator backends.

Three stand-ins for a pretrained image generator:

* ``procedural``: an analytic, differentiable face renderer driven by an
  8-dimensional latent.  Every raw coordinate is squashed with ``tanh`` into
  a geometric range, so any real vector is a valid latent.
* ``procedural-ood``: the same parameterisation rendered in a different
  style (sharper edges, squarish face, background ramp).  Its images lie
  outside the procedural backend's output space.
* ``neural``: a frozen, randomly initialised MLP decoder.

Images are ``(N, H, W)`` float64 arrays with values in ``[0, 1]``; latents
are ``(N, dim)`` arrays.  The horizontal pixel coordinate ``u`` runs along
columns and the vertical ``v`` along rows, so ``image[row, col]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import ConfigError, DimensionError
from .models import ParameterStore, decoder_spec, init_network, mapping_spec, mlp_forward, run_network
from .rng import box_muller

PROCEDURAL = "procedural"
PROCEDURAL_OOD = "procedural-ood"
NEURAL = "neural"

W_DIM = 8
SHARPNESS = 25.0
OOD_SHARPNESS = 60.0
OOD_FACE_EXPONENT = 4
OOD_RAMP = 0.15

# (midpoint, half-span) for tanh-squashed latent coordinates, in order:
# centre x, centre y, radius x, radius y, eye spacing, eye size,
# brightness, mouth width
LATENT_RANGES = (
    (0.5, 0.2),
    (0.5, 0.2),
    (0.25, 0.1),
    (0.25, 0.1),
    (0.45, 0.15),
    (0.12, 0.05),
    (0.65, 0.25),
    (0.5, 0.2),
)
EYE_DROP = 0.35  # eyes sit this many y-radii above centre
EYE_DARKEN = 0.8
MOUTH_DROP = 0.4
MOUTH_WIDTH = 0.6
MOUTH_HEIGHT = 0.12
MOUTH_DARKEN = 0.6


@dataclass(frozen=True, eq=False)
class GeneratorBackend:
    variant: str
    resolution: int = 32
    decoder: ParameterStore | None = None
    sharpness: float = SHARPNESS
    face_exponent: int = 2
    ramp: float = 0.0

    def __post_init__(self):
        if self.variant not in (PROCEDURAL, PROCEDURAL_OOD, NEURAL):
            raise ConfigError(f"unknown generator variant {self.variant!r}")
        if self.variant == NEURAL and self.decoder is None:
            raise ConfigError("neural backend needs decoder parameters")

    @property
    def differentiable(self):
        return True

    def state_bytes(self):
        """Everything that defines the backend, for frozen-ness checks."""
        head = f"{self.variant}|{self.resolution}|{self.sharpness!r}|{self.face_exponent}|{self.ramp!r}"
        tail = self.decoder.checksum() if self.decoder is not None else ""
        return (head + "|" + tail).encode("ascii")


def procedural_backend(resolution=32):
    return GeneratorBackend(PROCEDURAL, resolution)


def neural_backend(seed, resolution=32, w_dim=W_DIM):
    dec = init_network(decoder_spec(w_dim, resolution), seed, "G")
    return GeneratorBackend(NEURAL, resolution, decoder=dec)


def make_ood_variant(base):
    if base.variant != PROCEDURAL:
        raise ConfigError(f"OOD variant needs a procedural base, got {base.variant!r}")
    return GeneratorBackend(
        PROCEDURAL_OOD, base.resolution,
        sharpness=OOD_SHARPNESS, face_exponent=OOD_FACE_EXPONENT, ramp=OOD_RAMP,
    )


# -- latents ------------------------------------------------------------------

def sample_z(rng, count, z_dim=16):
    return box_muller(rng, (count, z_dim))


def make_mapping(seed, z_dim=16, w_dim=W_DIM):
    """The frozen entangling MLP F."""
    return init_network(mapping_spec(z_dim, w_dim), seed, "F")


def map_f(f_params, z):
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[1] != f_params.spec.input_shape[0]:
        raise DimensionError(f"z has {z.shape[1]} entries, mapping expects {f_params.spec.input_shape[0]}")
    return mlp_forward(f_params, z).data


# -- rendering ----------------------------------------------------------------

def pixel_grid(resolution):
    """``(u, v)`` pixel-centre coordinates, each ``(res, res)``."""
    c = (np.arange(resolution) + 0.5) / resolution
    u, v = np.meshgrid(c, c)  # u varies along columns
    return u, v


def _blob(q, k):
    # sigma(k (1 - q))
    return nc.sigmoid(nc.add_const(nc.mul_const(q, -k), k))


def _quadric(u, v, cu, cv, ru, rv, power=2):
    a = nc.div(nc.sub(u, cu), ru)
    b = nc.div(nc.sub(v, cv), rv)
    a, b = nc.square(a), nc.square(b)
    if power == 4:
        a, b = nc.square(a), nc.square(b)
    return nc.add(a, b)


def _render_tensor(w, resolution, sharpness, face_exponent, ramp):
    n = w.shape[0]
    full = (n, resolution, resolution)
    ug, vg = pixel_grid(resolution)
    u = nc.Tensor(np.broadcast_to(ug, full))
    v = nc.Tensor(np.broadcast_to(vg, full))

    t = nc.tanh(w)
    params = []
    for k, (mid, span) in enumerate(LATENT_RANGES):
        col = nc.add_const(nc.mul_const(nc.getitem(t, (slice(None), slice(k, k + 1))), span), mid)
        params.append(nc.reshape(col, (n, 1, 1)))
    cx, cy, rx, ry, e, fe, b, m = params

    ex = nc.mul(e, rx)
    eye_y = nc.sub(cy, nc.mul_const(ry, EYE_DROP))
    eye_r = nc.mul(fe, rx)
    mouth_y = nc.add(cy, nc.mul_const(ry, MOUTH_DROP))
    mouth_rx = nc.mul_const(nc.mul(m, rx), MOUTH_WIDTH)
    mouth_ry = nc.mul_const(ry, MOUTH_HEIGHT)

    def big(p):
        return nc.broadcast_to(p, full)

    cx_, cy_, rx_, ry_ = big(cx), big(cy), big(rx), big(ry)
    ex_, eye_y_, eye_r_ = big(ex), big(eye_y), big(eye_r)

    k = sharpness
    face = _blob(_quadric(u, v, cx_, cy_, rx_, ry_, face_exponent), k)
    left = _blob(_quadric(u, v, nc.sub(cx_, ex_), eye_y_, eye_r_, eye_r_), k)
    right = _blob(_quadric(u, v, nc.add(cx_, ex_), eye_y_, eye_r_, eye_r_), k)
    mouth = _blob(_quadric(u, v, cx_, big(mouth_y), big(mouth_rx), big(mouth_ry)), k)

    def dim(mask, amount):
        return nc.add_const(nc.mul_const(mask, -amount), 1.0)

    img = nc.mul(big(b), face)
    img = nc.mul(img, dim(left, EYE_DARKEN))
    img = nc.mul(img, dim(right, EYE_DARKEN))
    img = nc.mul(img, dim(mouth, MOUTH_DARKEN))
    if ramp:
        background = nc.mul(nc.mul_const(u, ramp), dim(face, 1.0))
        img = nc.add(img, background)
    return img


def _as_latent(w):
    if isinstance(w, nc.Tensor):
        return w
    return nc.Tensor(np.atleast_2d(np.asarray(w, dtype=np.float64)))


def render_procedural(w, resolution=32, sharpness=SHARPNESS, face_exponent=2, ramp=0.0):
    """Render latents ``(N, 8)`` to a ``(N, res, res)`` tensor.  Taped when
    ``w`` requires gradients."""
    w = _as_latent(w)
    if w.data.ndim != 2 or w.shape[1] != W_DIM:
        raise DimensionError(f"procedural renderer needs (N, {W_DIM}) latents, got {w.shape}")
    return _render_tensor(w, resolution, sharpness, face_exponent, ramp)


def neural_decode(dec_params, w, resolution=32):
    w = _as_latent(w)
    if w.data.ndim != 2 or w.shape[1] != dec_params.spec.input_shape[0]:
        raise DimensionError(f"decoder expects (N, {dec_params.spec.input_shape[0]}) latents, got {w.shape}")
    h = run_network(dec_params, w)
    # (tanh(h) + 1) / 2 == sigmoid(2h): a smooth clamp into (0, 1)
    pix = nc.sigmoid(nc.mul_const(h, 2.0))
    return nc.reshape(pix, (w.shape[0], resolution, resolution))


def render(backend, w, decoder=None):
    """Backend dispatch.  ``decoder`` overrides the neural backend's stored
    parameters (used when the decoder is being trained)."""
    if backend.variant == NEURAL:
        return neural_decode(decoder if decoder is not None else backend.decoder, w, backend.resolution)
    return render_procedural(w, backend.resolution, backend.sharpness, backend.face_exponent, backend.ramp)


def render_array(backend, w):
    return render(backend, np.asarray(w, dtype=np.float64)).data


def generate(backend, f_params, z):
    """``(w, images)`` with ``w = F(z)`` and ``images = G(w)``."""
    w = map_f(f_params, z)
    return w, render_array(backend, w)
