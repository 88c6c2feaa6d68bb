"""Ward clustering of projector embeddings recovers how faces were made.

Latents are drawn from four tight groups that differ in face position.  The
faces are rendered, embedded by P, and clustered with Ward's linkage; the
adjusted Rand index scores agreement with the true groups.  Clustering the
true latents directly is the ceiling.
"""

import numpy as np

from _shared import parser, projector, save
from latent_invert import clustering
from latent_invert.fileio import image_grid
from latent_invert.generators import render_array
from latent_invert.models import projector_forward
from latent_invert.rng import stream

ap = parser(__doc__)
ap.add_argument("--n", type=int, default=200)
args = ap.parse_args()
cfg, world, p = projector(args.steps, args.seed)

w, truth = clustering.mixture_latents(stream(cfg.seed, "cluster"), args.n)
images = render_array(world.backend, w)
emb = projector_forward(p, images).data

for name, pts in (("true latents", w), ("P embeddings", emb)):
    labels = clustering.cut_k(clustering.ward_agglomerate(pts), 4)
    print(f"{name:13s} ARI {clustering.adjusted_rand_index(labels, truth):.3f}  "
          f"sizes {np.bincount(labels).tolist()}")

tree = clustering.ward_agglomerate(emb)
print("last three merge heights:", ", ".join(f"{m[2]:.2f}" for m in tree.merges[-3:]))
labels = clustering.cut_k(tree, 4)
save("05_clusters.pgm", image_grid([images[labels == c][:8] for c in range(4)]))

pairs = clustering.closest_pairs(emb, 4)
print("closest embedded pairs:", ", ".join(f"({i},{j}) {d:.4f}" for i, j, d in pairs))
save("05_pairs.pgm", image_grid([images[[i for i, _, _ in pairs]], images[[j for _, j, _ in pairs]]]))
