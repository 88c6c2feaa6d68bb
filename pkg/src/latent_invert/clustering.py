"""Greedy Ward agglomeration over latent embeddings.

Heights are Ward merge costs on squared Euclidean distance,
``d(A, B) = n_A n_B / (n_A + n_B) * |mu_A - mu_B|^2`` (no square root), and
are maintained with the Lance-Williams recurrence.  Ties go to the
lexicographically smallest ``(left id, right id)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError


@dataclass
class Dendrogram:
    n: int
    merges: list = field(default_factory=list)  # (left, right, height, size)

    def heights(self):
        return np.array([m[2] for m in self.merges])

    def to_json(self):
        merges = [[int(l), int(r), float(h), int(s)] for l, r, h, s in self.merges]
        return json.dumps({"n": int(self.n), "merges": merges})

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        return cls(obj["n"], [(int(l), int(r), float(h), int(s)) for l, r, h, s in obj["merges"]])


def _points(points):
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise DimensionError(f"points must be (n, dim), got shape {pts.shape}")
    return pts


def pairwise_sq_dist(points):
    pts = _points(points)
    if len(pts) < 2:
        raise DimensionError("need at least two points")
    diff = pts[:, None, :] - pts[None, :, :]
    d = np.einsum("ijk,ijk->ij", diff, diff)
    # exact symmetry and zero diagonal regardless of summation order
    d = np.triu(d, 1)
    return d + d.T


def ward_agglomerate(points):
    pts = _points(points)
    n = len(pts)
    if n < 2:
        raise DimensionError("ward_agglomerate needs at least two points")
    d = 0.5 * pairwise_sq_dist(pts)
    np.fill_diagonal(d, np.inf)
    ids = np.arange(n)  # cluster id occupying each slot
    sizes = np.ones(n)
    alive = np.ones(n, dtype=bool)
    tree = Dendrogram(n)
    for step in range(n - 1):
        best = d.min()
        ii, jj = np.nonzero(d == best)
        cand = [(min(ids[i], ids[j]), max(ids[i], ids[j]), i, j) for i, j in zip(ii, jj) if i < j]
        left, right, a, b = min(cand)
        na, nb = sizes[a], sizes[b]
        nc = sizes
        # Lance-Williams update into slot a; slot b retires
        new = ((na + nc) * d[a] + (nb + nc) * d[b] - nc * best) / (na + nb + nc)
        new[~alive] = np.inf
        d[a, :] = new
        d[:, a] = new
        d[a, a] = np.inf
        d[b, :] = np.inf
        d[:, b] = np.inf
        alive[b] = False
        sizes[a] = na + nb
        ids[a] = n + step
        tree.merges.append((int(left), int(right), float(best), int(na + nb)))
    return tree


def cut_k(tree, k):
    """Flat labels from undoing the last ``k - 1`` merges; clusters are
    numbered by their smallest leaf id."""
    n = tree.n
    if not 1 <= k <= n:
        raise DimensionError(f"k must lie in [1, {n}], got {k}")
    parent = list(range(2 * n - 1))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for step, (left, right, _, _) in enumerate(tree.merges[: n - k]):
        parent[find(left)] = n + step
        parent[find(right)] = n + step
    roots = [find(i) for i in range(n)]
    first = {}
    for leaf, root in enumerate(roots):
        first.setdefault(root, leaf)
    order = {root: idx for idx, root in enumerate(sorted(first, key=first.get))}
    return np.array([order[r] for r in roots], dtype=int)


def closest_pairs(points, m):
    """The ``m`` nearest unordered pairs as ``(i, j, squared distance)``."""
    d = pairwise_sq_dist(points)
    n = len(d)
    if not 1 <= m <= n * (n - 1) // 2:
        raise DimensionError(f"m must lie in [1, {n * (n - 1) // 2}], got {m}")
    i, j = np.triu_indices(n, 1)
    dist = d[i, j]
    order = np.lexsort((j, i, dist))[:m]
    return [(int(i[o]), int(j[o]), float(dist[o])) for o in order]


def mixture_latents(rng, n, w_dim=8, components=4, offset=2.0, sigma=0.3, axes=(0, 1)):
    """Latents from a Gaussian mixture whose component means sit at
    ``(+-offset, +-offset)`` on ``axes`` and 0 elsewhere.  Returns
    ``(w, component labels)`` with components as balanced as ``n`` allows."""
    if components != 4:
        raise DimensionError("the corner mixture has exactly 4 components")
    means = np.zeros((4, w_dim))
    for c, (sx, sy) in enumerate(((-1, -1), (-1, 1), (1, -1), (1, 1))):
        means[c, axes[0]], means[c, axes[1]] = sx * offset, sy * offset
    labels = rng.permutation(np.arange(n) % 4)
    return means[labels] + sigma * rng.normal(size=(n, w_dim)), labels


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1) / 2.0


def adjusted_rand_index(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"labelings differ in length: {a.shape} vs {b.shape}")
    n = len(a)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)
    index = _comb2(table).sum()
    sa = _comb2(table.sum(axis=1)).sum()
    sb = _comb2(table.sum(axis=0)).sum()
    expected = sa * sb / _comb2(n) if n > 1 else 0.0
    top = 0.5 * (sa + sb)
    if top == expected:
        same = table.shape[0] == table.shape[1] and np.count_nonzero(table) == table.shape[0]
        return 1.0 if same else 0.0
    return float((index - expected) / (top - expected))
