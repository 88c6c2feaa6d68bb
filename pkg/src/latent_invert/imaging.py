"""Resampling, super-resolution through a projector, and image statistics.

Images are 2-D float arrays in ``[0, 1]``; batches stack them on axis 0.
"""

from __future__ import annotations

import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import DimensionError
from .generators import render
from .models import projector_forward

PSNR_CAP = 99.0


def downsample(x, factor):
    """Non-overlapping ``factor x factor`` box average."""
    x = np.asarray(x, dtype=np.float64)
    if factor < 1 or x.shape[0] % factor or x.shape[1] % factor:
        raise DimensionError(f"factor {factor} does not divide image size {x.shape}")
    if factor == 1:
        return x.copy()
    h, w = x.shape[0] // factor, x.shape[1] // factor
    blocks = x.reshape(h, factor, w, factor)
    ref = blocks[:, :1, :, :1]
    # offset from the block's first pixel keeps constant blocks exact
    return (ref + (blocks - ref).mean(axis=(1, 3), keepdims=True))[:, 0, :, 0]


def _axis_weights(src, dst):
    pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0.0, src - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, src - 1)
    return lo, hi, pos - lo


def resize_bilinear(x, size):
    """Half-pixel aligned bilinear resize with edge clamping to ``size x size``."""
    if size < 1:
        raise DimensionError(f"target size must be >= 1, got {size}")
    x = np.asarray(x, dtype=np.float64)
    r0, r1, fr = _axis_weights(x.shape[0], size)
    c0, c1, fc = _axis_weights(x.shape[1], size)
    # v0 + f (v1 - v0): exact on constants and at integer sample points
    rows = x[r0] + fr[:, None] * (x[r1] - x[r0])
    out = rows[:, c0] + fc[None, :] * (rows[:, c1] - rows[:, c0])
    return np.clip(out, 0.0, 1.0)


def psnr(a, b):
    """Peak-1 PSNR in dB, capped at 99 when the images (nearly) coincide."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"psnr: shapes {a.shape} and {b.shape} differ")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return float(min(PSNR_CAP, max(0.0, 10.0 * np.log10(1.0 / mse))))


def laplacian_energy(x):
    """Mean squared 5-point Laplacian response over interior pixels."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or min(x.shape) < 3:
        raise DimensionError(f"laplacian_energy needs an image of at least 3x3, got {x.shape}")
    c = x[1:-1, 1:-1]
    resp = (x[:-2, 1:-1] + x[2:, 1:-1]) + (x[1:-1, :-2] + x[1:-1, 2:]) - 4.0 * c
    return float(np.mean(resp * resp))


def box_blur(x):
    """3x3 mean filter with edge clamping."""
    x = np.asarray(x, dtype=np.float64)
    p = np.pad(x, 1, mode="edge")
    h, w = x.shape
    return sum(p[i : i + h, j : j + w] for i in range(3) for j in range(3)) / 9.0


def diversity_metric(batch):
    """Mean over unordered pairs of the mean absolute pixel difference."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape[0] < 2:
        raise DimensionError("diversity needs at least two images")
    flat = batch.reshape(batch.shape[0], -1)
    dists = [np.mean(np.abs(flat[i] - flat[j])) for i, j in combinations(range(len(flat)), 2)]
    return float(np.mean(dists))


def super_resolve(p_params, backend, x_low):
    """``G(P(resize(x_low)))`` at the generator's full resolution."""
    res = p_params.spec.input_shape[1]
    x_in = resize_bilinear(x_low, res)[None]
    w = projector_forward(p_params, x_in).data
    return render(backend, w).data[0]


@dataclass
class SweepReport:
    factors: list
    rows: list = field(default_factory=list)  # (factor, image_idx, psnr_reconstruction, psnr_bilinear)

    def mean_by_factor(self):
        out = {}
        for f in self.factors:
            sel = [r for r in self.rows if r[0] == f]
            out[f] = (float(np.mean([r[2] for r in sel])), float(np.mean([r[3] for r in sel])))
        return out

    def column(self, factor, which):
        idx = {"reconstruction": 2, "bilinear": 3}[which]
        return np.array([r[idx] for r in self.rows if r[0] == factor])

    def to_csv(self):
        buf = io.StringIO()
        buf.write("factor,image_idx,psnr_reconstruction,psnr_bilinear\n")
        for f, i, pr, pb in self.rows:
            buf.write(f"{f},{i},{pr!r},{pb!r}\n")
        return buf.getvalue()


def resolution_sweep(p_params, backend, factors, images, threads=1):
    """PSNR of super-resolved and of plainly upsampled images for each
    downsampling factor.  ``images`` are full-resolution originals."""
    images = np.asarray(images, dtype=np.float64)
    factors = sorted(int(f) for f in factors)
    res = images.shape[-1]

    def one(factor):
        out = []
        for i, x in enumerate(images):
            low = downsample(x, factor)
            sr = super_resolve(p_params, backend, low)
            up = resize_bilinear(low, res)
            out.append((factor, i, psnr(sr, x), psnr(up, x)))
        return out

    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        chunks = list(pool.map(one, factors))
    report = SweepReport(factors)
    for chunk in chunks:
        report.rows.extend(chunk)
    return report
