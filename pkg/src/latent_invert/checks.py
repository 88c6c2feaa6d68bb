"""Finite-difference verification of every differentiable primitive and of
the end-to-end projector and renderer losses."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .generators import render_procedural
from .models import init_network, projector_forward, projector_spec, run_network
from .rng import stream

TOLERANCE = 1e-4
# Within one relu region the projector loss is exactly quadratic in any single
# weight, so central differences carry no truncation error there.  A wide step
# keeps cancellation noise far below the tolerance on tiny gradients (dead
# channels); probes that straddle a kink are skipped instead.
PIECEWISE_EPS = 1e-3


@dataclass
class CheckResult:
    name: str
    seed: int
    error: float

    @property
    def ok(self):
        return self.error < TOLERANCE


def _weighted(op, r):
    # scalar probe: sum(op(x) * r) with fixed random weights r
    def f(x):
        y = op(x)
        return nc.total(nc.mul(y, nc.Tensor(r.reshape(y.shape))))
    return f


def _away_from_zero(rng, shape, margin=1e-3):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * (margin + np.abs(x)), x)


def primitive_cases(rng):
    """``(name, f, x)`` triples covering every primitive and each argument of
    the binary ones."""
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    img = rng.normal(size=(2, 2, 6, 6))
    ker = rng.normal(size=(3, 2, 3, 3))
    v = rng.normal(size=(2, 5))
    w = rng.normal(size=(2, 5))
    pos = rng.uniform(0.5, 2.0, size=(2, 5))
    bias = rng.normal(size=5)
    T = nc.Tensor

    def out_r(shape):
        return rng.normal(size=shape)

    cases = [
        ("matmul[a]", _weighted(lambda x: nc.matmul(x, T(b)), out_r((3, 2))), a),
        ("matmul[b]", _weighted(lambda x: nc.matmul(T(a), x), out_r((3, 2))), b),
    ]
    for s in (1, 2):
        o = -(-6 // s)
        cases += [
            (f"conv2d/s{s}[x]", _weighted(lambda x, s=s: nc.conv2d(x, T(ker), s), out_r((2, 3, o, o))), img),
            (f"conv2d/s{s}[k]", _weighted(lambda k, s=s: nc.conv2d(T(img), k, s), out_r((2, 3, o, o))), ker),
        ]
    cases += [
        ("conv2d/unbatched[x]", _weighted(lambda x: nc.conv2d(x, T(ker), 1), out_r((3, 6, 6))), img[0]),
        ("avg_pool2d", _weighted(lambda x: nc.avg_pool2d(x, 2), out_r((2, 2, 3, 3))), img),
        ("tanh", _weighted(nc.tanh, out_r(v.shape)), v),
        ("sigmoid", _weighted(nc.sigmoid, out_r(v.shape)), v),
        ("relu", _weighted(nc.relu, out_r(v.shape)), _away_from_zero(rng, v.shape)),
        ("square", _weighted(nc.square, out_r(v.shape)), v),
        ("absolute", _weighted(nc.absolute, out_r(v.shape)), _away_from_zero(rng, v.shape)),
        ("log_clamped", _weighted(nc.log_clamped, out_r(v.shape)), pos),
        ("add_const", _weighted(lambda x: nc.add_const(x, 0.7), out_r(v.shape)), v),
        ("mul_const", _weighted(lambda x: nc.mul_const(x, -1.3), out_r(v.shape)), v),
        ("add[a]", _weighted(lambda x: nc.add(x, T(w)), out_r(v.shape)), v),
        ("add[b]", _weighted(lambda x: nc.add(T(w), x), out_r(v.shape)), v),
        ("sub[a]", _weighted(lambda x: nc.sub(x, T(w)), out_r(v.shape)), v),
        ("sub[b]", _weighted(lambda x: nc.sub(T(w), x), out_r(v.shape)), v),
        ("mul[a]", _weighted(lambda x: nc.mul(x, T(w)), out_r(v.shape)), v),
        ("mul[b]", _weighted(lambda x: nc.mul(T(w), x), out_r(v.shape)), v),
        ("div[a]", _weighted(lambda x: nc.div(x, T(pos)), out_r(v.shape)), v),
        ("div[b]", _weighted(lambda x: nc.div(T(v), x), out_r(v.shape)), pos),
        ("add_bias[x]", _weighted(lambda x: nc.add_bias(x, T(bias)), out_r(v.shape)), v),
        ("add_bias[b]", _weighted(lambda x: nc.add_bias(T(v), x), out_r(v.shape)), bias),
        ("broadcast_to", _weighted(lambda x: nc.broadcast_to(x, (2, 5, 3)), out_r((2, 5, 3))), v[:, :, None]),
        ("reshape", _weighted(lambda x: nc.reshape(x, (5, 2)), out_r((5, 2))), v),
        ("getitem", _weighted(lambda x: nc.getitem(x, (slice(None), slice(1, 4))), out_r((2, 3))), v),
        ("total", lambda x: nc.total(nc.square(x)), v),
        ("mean", lambda x: nc.mean(nc.square(x)), v),
        ("mean[axis=0]", _weighted(lambda x: nc.mean(x, axis=0), out_r((5,))), v),
    ]
    return cases


def projector_loss_cases(rng, seed, resolution=32, w_dim=8, batch=2):
    """One case per projector parameter tensor: latent loss on rendered
    images as a function of that tensor alone.  Each case carries a ``skip``
    predicate flagging probe pairs on opposite sides of a relu kink."""
    params = init_network(projector_spec(resolution, w_dim), seed, "P")
    for name, t in params.items():
        if name.endswith(".b"):
            t.data = rng.normal(scale=0.1, size=t.shape)  # zero biases hide bias gradients
    w = rng.normal(scale=0.7, size=(batch, w_dim))
    images = render_procedural(w, resolution).data
    target = nc.Tensor(w)

    batch_in = images[:, None]

    def with_value(name, x):
        local = params.copy()
        local[name] = x
        return local

    def case(name):
        def f(x):
            pred = projector_forward(with_value(name, x), images)
            return nc.mean(nc.square(nc.sub(pred, target)))
        return f

    def crosses_kink(name):
        def signs(x):
            taps = []
            run_network(with_value(name, nc.Tensor(x)), batch_in, taps)
            return [t.data > 0 for t in taps]

        def skip(plus, minus):
            return any((a != b).any() for a, b in zip(signs(plus), signs(minus)))
        return skip

    return [(f"projector_loss[{name}]", case(name), params[name].data, crosses_kink(name)) for name in params]


def renderer_cases(rng, resolution=16):
    w = rng.normal(scale=0.8, size=(1, 8))
    return [("render_mean_pixel[w]", lambda x: nc.mean(render_procedural(x, resolution)), w)]


def gradient_suite(seeds=range(10), sample=24):
    """Run every check for every seed.  Large tensors are spot-checked on
    ``sample`` random elements each."""
    results = []
    t0 = time.perf_counter()
    for seed in seeds:
        rng = stream(seed, "gradcheck")
        cases = [c + (None, 1e-5) for c in primitive_cases(rng) + renderer_cases(rng)]
        cases += [c + (PIECEWISE_EPS,) for c in projector_loss_cases(rng, seed)]
        for name, f, x, skip, eps in cases:
            err = nc.grad_check(f, x, eps=eps, sample=sample, rng=rng, skip=skip)
            results.append(CheckResult(name, seed, err))
    return results, time.perf_counter() - t0
