"""Abundance-driven SLIC superpixels with center-pixel selection."""
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import ParameterError

_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass
class SlicConfig:
    size: float = 5.0
    compactness: float = 0.1
    iterations: int = 10
    seed: int = 0  # the procedure is deterministic; kept for provenance

    def validate(self):
        if self.size < 2:
            raise ParameterError("superpixel size S must be >= 2")
        if self.compactness < 0:
            raise ParameterError("compactness m must be >= 0")
        if self.iterations < 1:
            raise ParameterError("need at least one iteration")
        return self


@dataclass
class Segmentation:
    labels: np.ndarray               # (H, W) superpixel ids 0..Q-1
    members: List[np.ndarray]        # row-major pixel indices per superpixel
    centers: np.ndarray              # center pixel index per superpixel
    seeds: Optional[np.ndarray] = None  # initial seed coordinates (Q0, 2)
    origin: Optional[np.ndarray] = None  # seed id each superpixel grew from

    @property
    def count(self):
        return len(self.members)

    @property
    def shape(self):
        return self.labels.shape

    @classmethod
    def from_labels(cls, labels, seeds=None, origin=None):
        labels = np.asarray(labels)
        H, W = labels.shape
        flat = labels.ravel()
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat)
        members = np.split(order, np.cumsum(counts)[:-1])
        centers = np.array([center_pixel(m, W) for m in members], dtype=int)
        return cls(labels, members, centers, seeds, origin)

    def group_index(self):
        """Superpixel id of every pixel, in row-major order."""
        return self.labels.ravel()


def compound_distance(i, j, X, S, m):
    """D(i, j) between flat pixel indices ``i`` and ``j`` of field ``X``.

    The abundance term is the squared Euclidean distance of the abundance
    vectors, which enters D squared again.
    """
    H, W, _ = X.shape
    ri, ci = divmod(int(i), W)
    rj, cj = divmod(int(j), W)
    diff = X[ri, ci] - X[rj, cj]
    d_abu = float(diff @ diff)
    d_spa = np.hypot(ri - rj, ci - cj)
    return float(np.sqrt(d_abu ** 2 + (d_spa / S) ** 2 * m ** 2))


def center_pixel(members, width):
    """Member closest to the mean coordinate; ties -> smallest (row, col).

    Distances are compared as exact integers (scaled by the member count).
    """
    members = np.asarray(members, dtype=np.int64)
    if members.size == 0:
        raise ValueError("center_pixel: empty superpixel")
    members = np.sort(members)
    r, c = np.divmod(members, width)
    K = members.size
    d2 = (K * r - r.sum()) ** 2 + (K * c - c.sum()) ** 2
    return int(members[np.argmin(d2)])


def _grid_seeds(H, W, S):
    nr = max(1, int(round(H / S)))
    nc = max(1, int(round(W / S)))
    rows = (np.arange(nr) + 0.5) * H / nr
    cols = (np.arange(nc) + 0.5) * W / nc
    rr, cc = np.meshgrid(np.floor(rows), np.floor(cols), indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1).astype(int)


def _gradient(X):
    P = np.pad(X, ((1, 1), (1, 1), (0, 0)), mode="edge")
    gy = P[2:, 1:-1] - P[:-2, 1:-1]
    gx = P[1:-1, 2:] - P[1:-1, :-2]
    return (gy ** 2).sum(-1) + (gx ** 2).sum(-1)


def _perturb(seeds, grad):
    H, W = grad.shape
    out = seeds.copy()
    for k, (r, c) in enumerate(seeds):
        best = (grad[r, c], r, c)
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                rr, cc = r + dr, c + dc
                if 0 <= rr < H and 0 <= cc < W and grad[rr, cc] < best[0]:
                    best = (grad[rr, cc], rr, cc)
        out[k] = best[1:]
    return out


def enforce_connectivity(labels, min_size):
    """Make every superpixel 4-connected.

    Disconnected pieces become their own superpixels; any piece smaller than
    ``min_size`` is merged into the neighbor sharing the longest border
    (ties -> lower id). Labels are renumbered in raster order.
    """
    H, W = labels.shape
    comp = np.zeros((H, W), dtype=np.int64)
    nxt = 0
    for lab in np.unique(labels):
        cl, n = ndimage.label(labels == lab, structure=_FOUR)
        sel = cl > 0
        comp[sel] = cl[sel] + nxt - 1
        nxt += n

    while True:
        sizes = np.bincount(comp.ravel(), minlength=nxt)
        small = [c for c in _raster_order(comp) if 0 < sizes[c] < min_size]
        if not small or (sizes > 0).sum() == 1:
            break
        merged = False
        for c in small:
            mask = comp == c
            if not mask.any():
                continue
            border = _neighbor_counts(comp, mask)
            if not border:
                continue
            target = min(border, key=lambda t: (-border[t], t))
            comp[mask] = target
            merged = True
        if not merged:
            break
    return _renumber(comp)


def _raster_order(comp):
    _, first = np.unique(comp.ravel(), return_index=True)
    ids = comp.ravel()[np.sort(first)]
    return list(ids)


def _neighbor_counts(comp, mask):
    counts = {}
    H, W = comp.shape
    for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        src = mask[max(0, -dr):H - max(0, dr), max(0, -dc):W - max(0, dc)]
        dst = comp[max(0, dr):H - max(0, -dr), max(0, dc):W - max(0, -dc)]
        dmask = mask[max(0, dr):H - max(0, -dr), max(0, dc):W - max(0, -dc)]
        nb = dst[src & ~dmask]
        for t, n in zip(*np.unique(nb, return_counts=True)):
            counts[int(t)] = counts.get(int(t), 0) + int(n)
    return counts


def _renumber(comp):
    ids = _raster_order(comp)
    lut = np.zeros(comp.max() + 1, dtype=np.int64)
    lut[ids] = np.arange(len(ids))
    return lut[comp]


def slic_segment(X, cfg=None):
    """Cluster an (H, W, p) abundance field into compact superpixels.

    Seeds start on a regular grid of spacing ``cfg.size``, moved to the
    lowest-gradient position in their 3x3 neighborhood, then refined with
    ``cfg.iterations`` rounds of windowed assignment and mean updates.
    """
    cfg = (cfg or SlicConfig()).validate()
    fractions = getattr(X, "fractions", X)
    feat = np.ascontiguousarray(fractions, dtype=float)
    H, W, p = feat.shape
    S = float(cfg.size)
    seeds = _perturb(_grid_seeds(H, W, S), _gradient(feat))
    K = len(seeds)
    if K == 1:
        labels = np.zeros((H, W), dtype=np.int64)
        return Segmentation.from_labels(labels, seeds, np.zeros(1, dtype=np.int64))

    pos = seeds.astype(float)
    cfeat = feat[seeds[:, 0], seeds[:, 1]].copy()
    rows, cols = np.mgrid[0:H, 0:W]
    # before the first sweep every pixel belongs to its nearest seed
    labels = _nearest(seeds, H, W)
    dist = np.empty((H, W))
    for _ in range(cfg.iterations):
        kernels.slic_assign(feat, cfeat, pos, S, float(cfg.compactness), labels, dist)
        flat = labels.ravel()
        counts = np.bincount(flat, minlength=K).astype(float)
        live = counts > 0
        for axis, coord in enumerate((rows, cols)):
            s = np.bincount(flat, weights=coord.ravel(), minlength=K)
            pos[live, axis] = s[live] / counts[live]
        f2 = feat.reshape(-1, p)
        for ch in range(p):
            s = np.bincount(flat, weights=f2[:, ch], minlength=K)
            cfeat[live, ch] = s[live] / counts[live]
    raw = labels
    labels = enforce_connectivity(raw, max(1, int(S * S / 4)))
    # each final superpixel descends from the seed owning most of its pixels
    n = labels.max() + 1
    votes = np.zeros((n, K), dtype=np.int64)
    np.add.at(votes, (labels.ravel(), raw.ravel()), 1)
    return Segmentation.from_labels(labels, seeds, votes.argmax(axis=1))


def _nearest(seeds, H, W):
    rows, cols = np.mgrid[0:H, 0:W]
    best = np.full((H, W), np.inf)
    labels = np.zeros((H, W), dtype=np.int64)
    for k, (r, c) in enumerate(seeds):
        d = (rows - r) ** 2 + (cols - c) ** 2
        closer = d < best
        best[closer] = d[closer]
        labels[closer] = k
    return labels


def nearest_seed_labels(seeds, shape):
    """Label map assigning each pixel to its spatially nearest seed."""
    return _nearest(np.asarray(seeds), *shape)
