"""Invert a frozen face generator with a projector trained only on latent error.

The generator G renders an 8-number latent w as a 32x32 face.  The projector
P never sees a pixel loss: it learns from pairs (G(w), w) alone, minimising
the squared latent error.  Afterwards G(P(x)) should redraw unseen faces.
"""

import numpy as np

from _shared import parser, projector, save
from latent_invert import imaging
from latent_invert.fileio import image_grid
from latent_invert.models import projector_forward
from latent_invert.training import heldout_pairs, reconstruct

args = parser(__doc__).parse_args()
cfg, world, p = projector(args.steps, args.seed)

w, x = heldout_pairs(world, 64)
rec = reconstruct(p, world.backend, x)
scores = [imaging.psnr(r, o) for r, o in zip(rec, x)]
print(f"held-out reconstruction PSNR: mean {np.mean(scores):.2f} dB, worst {np.min(scores):.2f} dB")

err = ((projector_forward(p, x).data - w) ** 2).mean(axis=0)
names = ["centre x", "centre y", "width", "height", "eye spacing", "eye size", "brightness", "mouth width"]
print("latent error per coordinate (small features are the hardest to read off 32 pixels):")
for n, e in sorted(zip(names, err), key=lambda t: t[1]):
    print(f"  {n:12s} {e:.4f}")

save("01_reconstructions.pgm", image_grid([x[:8], rec[:8]]))
print("top row: generator samples, bottom row: G(P(x))")
