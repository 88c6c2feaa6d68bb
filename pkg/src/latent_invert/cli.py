"""Command-line front end.

Every subcommand writes into a run directory::

    config.resolved   metrics.csv   ckpt.bin
    img/NNN_*.pgm     report/*.json|csv

Usage: ``python -m latent_invert <command> [flags]``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import clustering, imaging
from .checks import TOLERANCE, gradient_suite
from .errors import LatentInvertError
from .fileio import config_text, image_grid, load_checkpoint, parse_config, parse_config_text, save_checkpoint, write_pgm
from .generators import NEURAL, GeneratorBackend, make_ood_variant, procedural_backend, render_array
from .models import decoder_spec, mapping_spec, projector_forward, projector_spec
from .rng import stream
from .training import (
    World, build_world, finetune_reconstruction, heldout_pairs, metrics_csv, ood_backend_for,
    ood_images, reconstruct, train_joint_adversarial, train_projection, train_supervised_baseline,
)

COMMANDS = ("train", "baseline", "finetune", "joint", "superres", "sweep", "ood-eval",
            "cluster", "pairs", "gradcheck", "render")
THREADS_ENV = "LATENT_INVERT_THREADS"
N_SHOW = 8


class UsageError(LatentInvertError):
    pass


def worker_threads():
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


# -- run directory -------------------------------------------------------------

class RunDir:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._img = 0

    def text(self, rel, content):
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content, encoding="utf-8")
        return path

    def json(self, rel, obj):
        return self.text(rel, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def image(self, tag, image):
        path = self.root / "img" / f"{self._img:03d}_{tag}.pgm"
        self._img += 1
        write_pgm(image, path)
        return path


def _checkpoint_stores(p, world, extra=None):
    stores = {"P": p, "F": world.f_params}
    if world.backend.variant == NEURAL:
        stores["G"] = world.backend.decoder
    stores.update(extra or {})
    return stores


def _restore(path, cfg_overrides):
    """Rebuild ``(cfg, world, P, stores)`` from a checkpoint written by a
    training command; flags may override non-structural settings."""
    if path is None:
        raise UsageError("this command needs --ckpt PATH (a checkpoint from `train`)")
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    stores, echo = load_checkpoint(path)
    cfg = parse_config_text(echo, cfg_overrides)
    if "P" not in stores or "F" not in stores:
        raise UsageError(f"checkpoint {path} lacks P or F tensors")
    stores["P"].spec = projector_spec(cfg.resolution, cfg.w_dim)
    stores["F"].spec = mapping_spec(cfg.z_dim, cfg.w_dim)
    if cfg.backend == NEURAL:
        if "G" not in stores:
            raise UsageError(f"checkpoint {path} lacks decoder tensors for the neural backend")
        stores["G"].spec = decoder_spec(cfg.w_dim, cfg.resolution)
        backend = GeneratorBackend(NEURAL, cfg.resolution, decoder=stores["G"])
    else:
        backend = procedural_backend(cfg.resolution)
    return cfg, World(cfg, stores["F"], backend), stores["P"], stores


def _write_training(run, cfg, result, world, extra=None):
    run.text("config.resolved", config_text(cfg))
    run.text("metrics.csv", metrics_csv(result.metrics))
    save_checkpoint(_checkpoint_stores(result.params, world, extra), cfg, run.root / "ckpt.bin")


def _recon_panel(run, tag, p, world, decoder=None):
    _, x = heldout_pairs(world, N_SHOW)
    rec = reconstruct(p, world.backend, x, decoder=decoder)
    run.image(tag, image_grid([x, rec]))


# -- commands ------------------------------------------------------------------

def cmd_train(args, cfg, run):
    world = build_world(cfg)
    result = train_projection(cfg, world=world)
    _write_training(run, cfg, result, world)
    _recon_panel(run, "reconstruction", result.params, world)


def cmd_baseline(args, cfg, run):
    world = build_world(cfg)
    result = train_supervised_baseline(cfg, world=world)
    _write_training(run, cfg, result, world)
    _recon_panel(run, "reconstruction", result.params, world)


def cmd_finetune(args, cfg, run):
    cfg, world, p, _ = _restore(args.ckpt, args.overrides)
    ood = ood_backend_for(cfg)
    result = finetune_reconstruction(p, cfg, ood, world=world)
    _write_training(run, cfg, result, world)
    run.json("report/smoothing.json", result.report)
    probe = ood_images(world, ood, stream(cfg.seed, "ood-probe"), N_SHOW)
    run.image("finetune", image_grid([probe, reconstruct(p, world.backend, probe),
                                      reconstruct(result.params, world.backend, probe)]))


def cmd_joint(args, cfg, run):
    cfg, world, p, _ = _restore(args.ckpt, args.overrides)
    if world.backend.variant != NEURAL:
        raise UsageError("joint needs a checkpoint trained with backend=neural")
    ood = ood_backend_for(cfg)
    result = train_joint_adversarial(p, world.backend.decoder, cfg, ood, world=world)
    g = result.stores["G"]
    run.text("config.resolved", config_text(cfg))
    run.text("metrics.csv", metrics_csv(result.metrics))
    stores = {"P": result.params, "F": world.f_params, "G": g, "D": result.stores["D"]}
    save_checkpoint(stores, cfg, run.root / "ckpt.bin")
    run.json("report/collapse.json", result.report)
    probe = ood_images(world, ood, stream(cfg.seed, "ood-probe"), N_SHOW)
    run.image("joint", image_grid([probe, reconstruct(result.params, world.backend, probe, decoder=g)]))


def cmd_superres(args, cfg, run):
    cfg, world, p, _ = _restore(args.ckpt, args.overrides)
    run.text("config.resolved", config_text(cfg))
    _, x = heldout_pairs(world, N_SHOW)
    low = [imaging.downsample(im, args.factor) for im in x]
    up = [imaging.resize_bilinear(im, cfg.resolution) for im in low]
    sr = [imaging.super_resolve(p, world.backend, im) for im in low]
    run.image(f"superres_x{args.factor}", image_grid([x, up, sr]))
    lines = ["image_idx,psnr_reconstruction,psnr_bilinear"]
    lines += [f"{i},{imaging.psnr(s, o)!r},{imaging.psnr(u, o)!r}" for i, (o, u, s) in enumerate(zip(x, up, sr))]
    run.text("report/superres.csv", "\n".join(lines) + "\n")


def cmd_sweep(args, cfg, run):
    cfg, world, p, _ = _restore(args.ckpt, args.overrides)
    run.text("config.resolved", config_text(cfg))
    factors = [int(f) for f in args.factors.split(",")]
    _, x = heldout_pairs(world, args.n)
    report = imaging.resolution_sweep(p, world.backend, factors, x, threads=worker_threads())
    run.text("report/sweep.csv", report.to_csv())
    summary = {str(f): {"psnr_reconstruction": r, "psnr_bilinear": b}
               for f, (r, b) in report.mean_by_factor().items()}
    run.json("report/sweep_summary.json", summary)
    rows = [x[:N_SHOW]]
    for f in report.factors:
        rows.append([imaging.super_resolve(p, world.backend, imaging.downsample(im, f)) for im in x[:N_SHOW]])
    run.image("sweep", image_grid(rows))


def cmd_ood_eval(args, cfg, run):
    cfg, world, p, _ = _restore(args.ckpt, args.overrides)
    run.text("config.resolved", config_text(cfg))
    _, x = heldout_pairs(world, args.n)
    x_ood = ood_images(world, make_ood_variant(procedural_backend(cfg.resolution)),
                       stream(cfg.seed, "ood-eval"), args.n)
    mse_in = float(np.mean((reconstruct(p, world.backend, x) - x) ** 2))
    rec_ood = reconstruct(p, world.backend, x_ood)
    mse_ood = float(np.mean((rec_ood - x_ood) ** 2))
    run.json("report/ood.json", {"n_images": args.n, "mse_in_distribution": mse_in,
                                 "mse_ood": mse_ood, "ratio": mse_ood / mse_in})
    run.image("ood", image_grid([x_ood[:N_SHOW], rec_ood[:N_SHOW]]))


def _cluster_points(args, cfg, world, p):
    rng = stream(cfg.seed, "cluster")
    if args.source == "mixture":
        w, truth = clustering.mixture_latents(rng, args.n, cfg.w_dim)
    else:
        w, truth = world.latents(rng, args.n), None
    backend = world.backend
    if args.source == "ood":
        backend = make_ood_variant(procedural_backend(cfg.resolution))
    images = render_array(backend, w)
    return images, projector_forward(p, images).data, truth


def cmd_cluster(args, cfg, run):
    cfg, world, p, _ = _restore(args.ckpt, args.overrides)
    run.text("config.resolved", config_text(cfg))
    images, emb, truth = _cluster_points(args, cfg, world, p)
    tree = clustering.ward_agglomerate(emb)
    labels = clustering.cut_k(tree, args.k)
    run.text("report/dendrogram.json", tree.to_json() + "\n")
    run.text("report/labels.csv", "index,cluster\n" + "".join(f"{i},{c}\n" for i, c in enumerate(labels)))
    summary = {"n": int(len(labels)), "k": args.k, "source": args.source,
               "sizes": [int(np.sum(labels == c)) for c in range(args.k)]}
    if truth is not None:
        summary["ari"] = clustering.adjusted_rand_index(labels, truth)
    run.json("report/cluster.json", summary)
    run.image("clusters", image_grid([images[labels == c][:N_SHOW] for c in range(args.k)]))


def cmd_pairs(args, cfg, run):
    cfg, world, p, _ = _restore(args.ckpt, args.overrides)
    run.text("config.resolved", config_text(cfg))
    images, emb, _ = _cluster_points(args, cfg, world, p)
    pairs = clustering.closest_pairs(emb, args.m)
    run.text("report/pairs.csv", "rank,i,j,sq_dist\n"
             + "".join(f"{r},{i},{j},{d!r}\n" for r, (i, j, d) in enumerate(pairs)))
    run.image("pairs", image_grid([images[[i for i, _, _ in pairs[:N_SHOW]]],
                                   images[[j for _, j, _ in pairs[:N_SHOW]]]]))


def cmd_gradcheck(args, cfg, run):
    results, seconds = gradient_suite(range(args.seeds))
    worst = max(r.error for r in results)
    run.json("report/gradcheck.json", {
        "tolerance": TOLERANCE,
        "max_error": worst,
        "checks": len(results),
        "seconds": round(seconds, 3),
        "results": [{"name": r.name, "seed": r.seed, "error": r.error} for r in results],
    })
    failed = [r for r in results if not r.ok]
    for r in failed:
        print(f"gradcheck FAIL {r.name} seed={r.seed} error={r.error:.3e}", file=sys.stderr)
    print(f"gradcheck: {len(results)} checks, max relative error {worst:.3e}")
    return 1 if failed else 0


def cmd_render(args, cfg, run):
    if args.latent:
        w = np.array([[float(v) for v in args.latent.split(",")]])
    else:
        w = stream(cfg.seed, "render").normal(scale=0.7, size=(args.n, cfg.w_dim))
    base = procedural_backend(cfg.resolution)
    run.image("render", image_grid([render_array(base, w), render_array(make_ood_variant(base), w)]))


HANDLERS = {
    "train": cmd_train, "baseline": cmd_baseline, "finetune": cmd_finetune, "joint": cmd_joint,
    "superres": cmd_superres, "sweep": cmd_sweep, "ood-eval": cmd_ood_eval, "cluster": cmd_cluster,
    "pairs": cmd_pairs, "gradcheck": cmd_gradcheck, "render": cmd_render,
}

FLAG_KEYS = {"seed": "seed", "steps": "steps", "eval_every": "eval_every", "lr": "learning_rate",
             "batch_size": "batch_size", "backend": "backend", "lambda_recon": "lambda_recon",
             "lambda_adv": "lambda_adv", "lambda_fm": "lambda_fm"}


def build_parser():
    parser = argparse.ArgumentParser(prog="latent-invert", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--out", help="run directory (default: out_dir from config)")
    parser.add_argument("--ckpt", help="checkpoint from a training command")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--steps", type=int)
    parser.add_argument("--eval-every", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--backend", choices=("procedural", "neural"))
    parser.add_argument("--lambda-recon", type=float)
    parser.add_argument("--lambda-adv", type=float)
    parser.add_argument("--lambda-fm", type=float)
    parser.add_argument("--k", type=int, default=4, help="clusters for `cluster`")
    parser.add_argument("--m", type=int, default=10, help="pairs for `pairs`")
    parser.add_argument("--n", type=int, default=64, help="images for evaluation commands")
    parser.add_argument("--factor", type=int, default=4, help="downsampling factor for `superres`")
    parser.add_argument("--factors", default="1,2,4,8", help="factors for `sweep`")
    parser.add_argument("--source", choices=("mixture", "generator", "ood"), default="mixture",
                        help="latents for `cluster`/`pairs`")
    parser.add_argument("--seeds", type=int, default=10, help="seeds for `gradcheck`")
    parser.add_argument("--latent", help="comma-separated latent for `render`")
    return parser


def _overrides(args):
    out = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag)
        if value is not None:
            out[key] = value
    return out


def run_command(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        worker_threads()
        args.overrides = _overrides(args)
        cfg = parse_config(args.config, args.overrides)
        run = RunDir(args.out or cfg.out_dir)
        code = HANDLERS[args.command](args, cfg, run)
        return int(code or 0)
    except (LatentInvertError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run_command())
