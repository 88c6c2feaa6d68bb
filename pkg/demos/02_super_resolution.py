"""Super-resolution by projection: shrink a face, then let G redraw it.

Each face is box-downsampled by 2, 4 and 8, resized back to 32x32 and pushed
through G(P(.)).  Plain bilinear upsampling is the yardstick.  The projector
was trained on sharp faces only, so blurred inputs are a distribution shift
it has never seen; the sweep shows how much that costs.
"""

from _shared import parser, projector, save
from latent_invert import imaging
from latent_invert.fileio import image_grid
from latent_invert.training import heldout_pairs

args = parser(__doc__).parse_args()
cfg, world, p = projector(args.steps, args.seed)
_, x = heldout_pairs(world, 64)

report = imaging.resolution_sweep(p, world.backend, [1, 2, 4, 8], x)
print("factor  projector PSNR  bilinear PSNR  projector wins")
for f, (rec, bil) in report.mean_by_factor().items():
    wins = (report.column(f, "reconstruction") > report.column(f, "bilinear")).mean()
    print(f"  x{f:<4d} {rec:10.2f} dB {bil:11.2f} dB {wins:12.0%}")

rows = [x[:8]]
for f in (2, 4, 8):
    low = [imaging.downsample(im, f) for im in x[:8]]
    rows.append([imaging.resize_bilinear(im, 32) for im in low])
    rows.append([imaging.super_resolve(p, world.backend, im) for im in low])
save("02_superres.pgm", image_grid(rows))
print("rows: original, then bilinear / projected pairs at x2, x4, x8")
