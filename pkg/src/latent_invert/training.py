"""Losses, Adam, and the training loops.

All loops share one data path: a fresh batch ``z`` every step from the run's
``data`` stream, ``w = F(z)``, ``x = G(w)``.  Out-of-distribution batches and
the discriminator draw from their own streams, so switching an auxiliary
loss weight to zero leaves the projector's trajectory bit-identical to plain
latent regression.
"""

from __future__ import annotations

import io
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import numcore as nc
from .errors import ConfigError, ContractError, DimensionError, TrainingDiverged
from .generators import (
    NEURAL, PROCEDURAL, make_mapping, make_ood_variant, map_f, neural_backend,
    procedural_backend, render, render_array, sample_z,
)
from .imaging import laplacian_energy, diversity_metric
from .models import (
    discriminator_forward, discriminator_spec, init_network, projector_forward, projector_spec,
)
from .rng import stream

METRICS_HEADER = "step,latent_loss,recon_loss,d_loss,g_adv,fm,diversity,ms"


@dataclass
class TrainConfig:
    seed: int = 0
    backend: str = PROCEDURAL
    z_dim: int = 16
    w_dim: int = 8
    resolution: int = 32
    batch_size: int = 32
    steps: int = 5000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_recon: float = 1.0
    lambda_adv: float = 0.1
    lambda_fm: float = 1.0
    eval_every: int = 100
    out_dir: str = "runs/default"
    train_g: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.backend not in (PROCEDURAL, NEURAL):
            raise ConfigError(f"backend must be {PROCEDURAL!r} or {NEURAL!r}, got {self.backend!r}")
        for name in ("z_dim", "w_dim", "resolution", "batch_size", "steps", "eval_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.resolution < 3:
            raise ConfigError("resolution must be >= 3")
        if not (self.learning_rate > 0 and self.eps > 0):
            raise ConfigError("learning_rate and eps must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        for name in ("lambda_recon", "lambda_adv", "lambda_fm"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.backend == PROCEDURAL and self.w_dim != 8:
            raise ConfigError("procedural backend needs w_dim = 8")
        return self

    def as_items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]


@dataclass
class MetricsRow:
    step: int
    latent_loss: float | None = None
    recon_loss: float | None = None
    d_loss: float | None = None
    g_adv: float | None = None
    fm: float | None = None
    diversity: float | None = None
    ms: float | None = None

    def csv(self):
        def cell(v):
            return "" if v is None else repr(float(v))

        vals = [str(self.step)] + [cell(getattr(self, k)) for k in
                                   ("latent_loss", "recon_loss", "d_loss", "g_adv", "fm", "diversity")]
        vals.append("" if self.ms is None else f"{self.ms:.3f}")
        return ",".join(vals)


def metrics_csv(rows):
    buf = io.StringIO()
    buf.write(METRICS_HEADER + "\n")
    for row in rows:
        buf.write(row.csv() + "\n")
    return buf.getvalue()


@dataclass
class TrainResult:
    params: object
    metrics: list
    history: dict
    stores: dict = field(default_factory=dict)
    report: dict = field(default_factory=dict)


# -- losses -------------------------------------------------------------------

def _t(x):
    return x if isinstance(x, nc.Tensor) else nc.Tensor(x)


def latent_loss(pred, target):
    """Mean squared latent error over batch and coordinates."""
    pred, target = _t(pred), _t(target)
    if pred.shape != target.shape:
        raise DimensionError(f"latent_loss: {pred.shape} vs {target.shape}")
    return nc.mean(nc.square(nc.sub(pred, target)))


def reconstruction_loss(recon, images):
    """Mean squared pixel error over batch and pixels."""
    recon, images = _t(recon), _t(images)
    if recon.shape != images.shape:
        raise DimensionError(f"reconstruction_loss: {recon.shape} vs {images.shape}")
    return nc.mean(nc.square(nc.sub(recon, images)))


def gan_d_loss(real_logits, fake_logits):
    real, fake = _t(real_logits), _t(fake_logits)
    real_term = nc.mean(nc.log_clamped(nc.sigmoid(real)))
    fake_term = nc.mean(nc.log_clamped(nc.sigmoid(nc.mul_const(fake, -1.0))))
    return nc.mul_const(nc.add(real_term, fake_term), -1.0)


def gan_g_loss(fake_logits):
    """Non-saturating generator loss ``-mean(log sigmoid(fake))``."""
    return nc.mul_const(nc.mean(nc.log_clamped(nc.sigmoid(_t(fake_logits)))), -1.0)


def feature_tap_loss(real_feats, fake_feats):
    if len(real_feats) != len(fake_feats) or not real_feats:
        raise DimensionError("feature lists must be non-empty and of equal length")
    terms = []
    for r, f in zip(real_feats, fake_feats):
        r, f = _t(r), _t(f)
        if r.shape[1:] != f.shape[1:]:
            raise DimensionError(f"feature shapes {r.shape} vs {f.shape}")
        diff = nc.sub(nc.mean(r, axis=0), nc.mean(f, axis=0))
        terms.append(nc.mean(nc.absolute(diff)))
    out = terms[0]
    for t in terms[1:]:
        out = nc.add(out, t)
    return nc.mul_const(out, 1.0 / len(terms))


def feature_matching_loss(d_params, x_real, x_fake):
    """Mean over discriminator taps of the mean absolute difference between
    batch-averaged real and fake features."""
    if _t(x_real).shape != _t(x_fake).shape:
        raise DimensionError("real and fake batches differ in shape")
    _, real_feats = discriminator_forward(d_params, x_real)
    _, fake_feats = discriminator_forward(d_params, x_fake)
    return feature_tap_loss(real_feats, fake_feats)


# -- Adam ---------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place.  Missing gradients count as
    zero."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v = state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def _grads(params):
    return {name: t.grad for name, t in params.items() if t.grad is not None}


def _step_adam(params, state, cfg):
    adam_step(params, _grads(params), state, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)


# -- shared setup -------------------------------------------------------------

@dataclass
class World:
    """Frozen pieces of an experiment: F and G."""
    cfg: TrainConfig
    f_params: object
    backend: object

    def fingerprint(self):
        return self.f_params.checksum(), self.backend.state_bytes()

    def latents(self, rng, n):
        return map_f(self.f_params, sample_z(rng, n, self.cfg.z_dim))

    def pairs(self, rng, n, decoder=None):
        w = self.latents(rng, n)
        if decoder is None:
            return w, render_array(self.backend, w)
        return w, render(self.backend, w, decoder=decoder).data


def build_world(cfg):
    f = make_mapping(cfg.seed, cfg.z_dim, cfg.w_dim)
    if cfg.backend == NEURAL:
        backend = neural_backend(cfg.seed, cfg.resolution, cfg.w_dim)
    else:
        backend = procedural_backend(cfg.resolution)
    return World(cfg, f, backend)


def ood_backend_for(cfg):
    return make_ood_variant(procedural_backend(cfg.resolution))


def init_projector(cfg):
    return init_network(projector_spec(cfg.resolution, cfg.w_dim), cfg.seed, "P")


def heldout_pairs(world, n=64, name="eval"):
    return world.pairs(stream(world.cfg.seed, name), n)


def ood_images(world, ood_backend, rng, n):
    return render_array(ood_backend, world.latents(rng, n))


def _finite_or_raise(step, **losses):
    if not all(np.isfinite(v) for v in losses.values()):
        raise TrainingDiverged(step, losses)


class _Clock:
    def __init__(self):
        self.t0 = time.perf_counter()

    def ms(self):
        return (time.perf_counter() - self.t0) * 1000.0


def _latent_pass(p, w, x):
    pred = projector_forward(p, x)
    return latent_loss(pred, w)


# -- training loops ------------------------------------------------------------

def train_projection(cfg, p_params=None, world=None, mapping=None):
    """Unsupervised latent regression: minimise ``|P(G(F(z))) - F(z)|^2``.

    ``p_params`` continues from an existing projector (copied, not mutated).
    ``mapping`` replaces F by an arbitrary ``z -> w`` callable.
    """
    world = world or build_world(cfg)
    p = (p_params.copy() if p_params is not None else init_projector(cfg)).trainable()
    state = AdamState()
    rng = stream(cfg.seed, "data")
    frozen = world.fingerprint()
    clock = _Clock()
    rows, losses = [], []
    for step in range(cfg.steps):
        if mapping is None:
            w, x = world.pairs(rng, cfg.batch_size)
        else:
            w = np.asarray(mapping(sample_z(rng, cfg.batch_size, cfg.z_dim)), dtype=np.float64)
            x = render_array(world.backend, w)
        p.zero_grad()
        with nc.Tape():
            loss = _latent_pass(p, w, x)
            nc.backward(loss)
        value = float(loss.data)
        _finite_or_raise(step, latent_loss=value)
        _step_adam(p, state, cfg)
        losses.append(value)
        if step % cfg.eval_every == 0:
            rows.append(MetricsRow(step, latent_loss=value, ms=clock.ms()))
    if world.fingerprint() != frozen:
        raise ContractError("F or G changed during projector training")
    return TrainResult(p, rows, {"latent_loss": np.array(losses)})


def train_supervised_baseline(cfg, world=None):
    """Reconstruction-supervised projector: minimise ``|G(P(x)) - x|^2`` with
    gradients flowing through the frozen generator."""
    world = world or build_world(cfg)
    p = init_projector(cfg).trainable()
    state = AdamState()
    rng = stream(cfg.seed, "data")
    frozen = world.fingerprint()
    clock = _Clock()
    rows, recon_hist, latent_hist = [], [], []
    for step in range(cfg.steps):
        w, x = world.pairs(rng, cfg.batch_size)
        p.zero_grad()
        with nc.Tape():
            pred = projector_forward(p, x)
            loss = reconstruction_loss(render(world.backend, pred), x)
            nc.backward(loss)
        recon = float(loss.data)
        lat = float(latent_loss(pred.data, w).data)
        _finite_or_raise(step, recon_loss=recon)
        _step_adam(p, state, cfg)
        recon_hist.append(recon)
        latent_hist.append(lat)
        if step % cfg.eval_every == 0:
            rows.append(MetricsRow(step, latent_loss=lat, recon_loss=recon, ms=clock.ms()))
    if world.fingerprint() != frozen:
        raise ContractError("G changed during baseline training")
    return TrainResult(p, rows, {"recon_loss": np.array(recon_hist), "latent_loss": np.array(latent_hist)})


def reconstruct(p_params, backend, images, decoder=None):
    return render(backend, projector_forward(p_params, images).data, decoder=decoder).data


def _mse_per_batch(a, b):
    return float(np.mean((a - b) ** 2))


def finetune_reconstruction(p_params, cfg, ood_backend, world=None, probe_size=64):
    """Continue latent regression while adding ``lambda_recon`` times the
    reconstruction error on out-of-distribution images.

    The report compares reconstructions of a fixed OOD probe set before and
    after: their mean Laplacian energy (detail) and reconstruction MSE.
    """
    if cfg.lambda_recon < 0:
        raise ConfigError("lambda_recon must be >= 0")
    world = world or build_world(cfg)
    probe = ood_images(world, ood_backend, stream(cfg.seed, "ood-probe"), probe_size)
    before = reconstruct(p_params, world.backend, probe)

    p = p_params.copy().trainable()
    state = AdamState()
    rng = stream(cfg.seed, "data")
    ood_rng = stream(cfg.seed, "ood")
    frozen = world.fingerprint()
    clock = _Clock()
    rows, latent_hist, recon_hist = [], [], []
    for step in range(cfg.steps):
        w, x = world.pairs(rng, cfg.batch_size)
        x_ood = ood_images(world, ood_backend, ood_rng, cfg.batch_size)
        p.zero_grad()
        with nc.Tape():
            lat = _latent_pass(p, w, x)
            recon = reconstruction_loss(render(world.backend, projector_forward(p, x_ood)), x_ood)
            total = nc.add(lat, nc.mul_const(recon, cfg.lambda_recon))
            nc.backward(total)
        lv, rv = float(lat.data), float(recon.data)
        _finite_or_raise(step, latent_loss=lv, recon_loss=rv)
        _step_adam(p, state, cfg)
        latent_hist.append(lv)
        recon_hist.append(rv)
        if step % cfg.eval_every == 0:
            rows.append(MetricsRow(step, latent_loss=lv, recon_loss=rv, ms=clock.ms()))
    if world.fingerprint() != frozen:
        raise ContractError("G changed during fine-tuning")

    after = reconstruct(p, world.backend, probe)
    lap = lambda batch: float(np.mean([laplacian_energy(im) for im in batch]))  # noqa: E731
    lap_before, lap_after = lap(before), lap(after)
    report = {
        "n_images": probe_size,
        "lambda_recon": cfg.lambda_recon,
        "steps": cfg.steps,
        "laplacian_energy_original": lap(probe),
        "laplacian_energy_before": lap_before,
        "laplacian_energy_after": lap_after,
        "laplacian_ratio": lap_after / lap_before if lap_before > 0 else None,
        "smoothed": lap_after <= lap_before,
        "ood_recon_mse_before": _mse_per_batch(before, probe),
        "ood_recon_mse_after": _mse_per_batch(after, probe),
    }
    history = {"latent_loss": np.array(latent_hist), "recon_loss": np.array(recon_hist)}
    return TrainResult(p, rows, history, report=report)


def train_joint_adversarial(p_params, g_dec_params, cfg, ood_backend, world=None):
    """Alternate discriminator and projector(+decoder) updates on OOD images.

    The discriminator separates real OOD images from ``G(P(x_ood))``.  The
    projector (and, if ``cfg.train_g``, the decoder) then minimises the
    latent loss plus ``lambda_adv`` times the non-saturating generator loss
    plus ``lambda_fm`` times feature matching.  Nothing here expects
    convergence; the batch diversity of reconstructions is logged every
    ``eval_every`` steps to expose mode collapse.
    """
    world = world or build_world(cfg)
    if world.backend.variant != NEURAL:
        raise ConfigError("joint training needs the neural decoder backend")
    p = p_params.copy().trainable()
    g = g_dec_params.copy().trainable(cfg.train_g)
    d = init_network(discriminator_spec(cfg.resolution), cfg.seed, "D").trainable()
    p_state, g_state, d_state = AdamState(), AdamState(), AdamState()
    rng = stream(cfg.seed, "data")
    ood_rng = stream(cfg.seed, "ood")
    f_sum = world.f_params.checksum()
    clock = _Clock()
    rows, collapse = [], []
    hist = {k: [] for k in ("latent_loss", "recon_loss", "d_loss", "g_adv", "fm")}
    for step in range(cfg.steps):
        w, x = world.pairs(rng, cfg.batch_size, decoder=g)
        x_ood = ood_images(world, ood_backend, ood_rng, cfg.batch_size)

        fake = reconstruct(p, world.backend, x_ood, decoder=g)
        d.zero_grad()
        with nc.Tape():
            real_logits, _ = discriminator_forward(d, x_ood)
            fake_logits, _ = discriminator_forward(d, fake)
            d_loss = gan_d_loss(real_logits, fake_logits)
            nc.backward(d_loss)
        dv = float(d_loss.data)
        _finite_or_raise(step, d_loss=dv)
        _step_adam(d, d_state, cfg)

        d.trainable(False)
        _, real_feats = discriminator_forward(d, x_ood)
        p.zero_grad()
        g.zero_grad()
        with nc.Tape():
            lat = _latent_pass(p, w, x)
            recon_img = render(world.backend, projector_forward(p, x_ood), decoder=g)
            fake_logits, fake_feats = discriminator_forward(d, recon_img)
            adv = gan_g_loss(fake_logits)
            fm = feature_tap_loss(real_feats, fake_feats)
            total = nc.add(lat, nc.add(nc.mul_const(adv, cfg.lambda_adv), nc.mul_const(fm, cfg.lambda_fm)))
            nc.backward(total)
        d.trainable(True)
        vals = {
            "latent_loss": float(lat.data),
            "recon_loss": _mse_per_batch(recon_img.data, x_ood),
            "d_loss": dv,
            "g_adv": float(adv.data),
            "fm": float(fm.data),
        }
        _finite_or_raise(step, **vals)
        _step_adam(p, p_state, cfg)
        if cfg.train_g:
            _step_adam(g, g_state, cfg)
        for k, v in vals.items():
            hist[k].append(v)
        if step % cfg.eval_every == 0:
            div = diversity_metric(recon_img.data)
            collapse.append({"step": step, "diversity": div})
            rows.append(MetricsRow(step, diversity=div, ms=clock.ms(), **vals))
    if world.f_params.checksum() != f_sum:
        raise ContractError("F changed during joint training")
    report = {
        "train_g": cfg.train_g,
        "real_diversity": diversity_metric(x_ood),
        "collapse": collapse,
    }
    history = {k: np.array(v) for k, v in hist.items()}
    return TrainResult(p, rows, history, stores={"P": p, "G": g, "D": d}, report=report)
