"""Helpers shared by the demo scripts: one cached projector per step count."""

import argparse
from pathlib import Path

from latent_invert.fileio import save_checkpoint, write_pgm
from latent_invert.cli import _restore
from latent_invert.training import TrainConfig, build_world, train_projection

OUT = Path(__file__).resolve().parent / "out"


def parser(doc, steps=2000):
    p = argparse.ArgumentParser(description=doc.strip().splitlines()[0])
    p.add_argument("--steps", type=int, default=steps, help="projector training steps")
    p.add_argument("--seed", type=int, default=0)
    return p


def projector(steps, seed=0):
    """Train (or reload) a projector on the procedural face generator."""
    ckpt = OUT / f"projector_s{seed}_{steps}.bin"
    if ckpt.is_file():
        cfg, world, p, _ = _restore(ckpt, {})
        return cfg, world, p
    print(f"training the projector for {steps} steps (cached in {ckpt.name}) ...")
    cfg = TrainConfig(seed=seed, steps=steps)
    world = build_world(cfg)
    result = train_projection(cfg, world=world)
    save_checkpoint({"P": result.params, "F": world.f_params}, cfg, ckpt)
    return cfg, world, result.params


def save(name, image):
    OUT.mkdir(exist_ok=True)
    write_pgm(image, OUT / name)
    print(f"  wrote {OUT.name}/{name}")
