"""Joint adversarial training of projector and decoder, watched for collapse.

A small neural decoder stands in for a trainable generator.  A discriminator
compares OOD images with their reconstructions; the projector and decoder
chase it with a non-saturating GAN loss plus feature matching.  Nothing is
expected to converge.  The batch diversity of reconstructions is the probe:
values near zero mean every input comes back as the same image.
"""

import argparse

from _shared import save
from latent_invert.fileio import image_grid
from latent_invert.generators import NEURAL
from latent_invert.rng import stream
from latent_invert.training import (
    TrainConfig, build_world, init_projector, ood_backend_for, ood_images, reconstruct, train_joint_adversarial,
)

ap = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
ap.add_argument("--steps", type=int, default=600)
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()

cfg = TrainConfig(seed=args.seed, backend=NEURAL, steps=args.steps, eval_every=max(1, args.steps // 12))
world = build_world(cfg)
ood = ood_backend_for(cfg)
result = train_joint_adversarial(init_projector(cfg), world.backend.decoder, cfg, ood, world=world)

print(f"diversity of real OOD batches: {result.report['real_diversity']:.4f}")
for row in result.report["collapse"]:
    bar = "#" * int(row["diversity"] * 200)
    print(f"  step {row['step']:5d}  {row['diversity']:.4f} {bar}")
h = result.history
print(f"final losses: D {h['d_loss'][-1]:.3f}, G adversarial {h['g_adv'][-1]:.3f}, feature match {h['fm'][-1]:.4f}")

probe = ood_images(world, ood, stream(cfg.seed, "ood-probe"), 8)
save("04_joint.pgm", image_grid([probe, reconstruct(result.params, world.backend, probe,
                                                    decoder=result.stores["G"])]))
