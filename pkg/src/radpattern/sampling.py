"""Hard-core sampling of points with a prescribed (gridded) intensity."""

from __future__ import annotations

import math

import numpy as np

from .quadrature import VolumeGrid


class PackingError(RuntimeError):
    def __init__(self, message, placed=0, max_feasible=None):
        super().__init__(message)
        self.placed = placed
        self.max_feasible = max_feasible


def max_feasible_count(volume, dmin):
    """Upper bound on hard-core points in ``volume`` (random close packing ~ 0.64)."""
    if dmin <= 0:
        return math.inf
    return int(0.64 * volume / (math.pi / 6 * dmin**3))


def hardcore_positions(grid: VolumeGrid, intensity, count, dmin, rng, radius=None, max_retries=10_000):
    """Sequentially place ``count`` points, each drawn from ``intensity * weights``.

    A candidate closer than ``dmin`` to an accepted point is redrawn (at most
    ``max_retries`` times per point).  Points are uniform within their cell
    and kept inside the ball of ``radius`` when given.
    """
    if count == 0:
        return np.zeros((0, 3))
    p = np.asarray(intensity, float) * grid.weights
    total = p.sum()
    if total <= 0:
        raise PackingError("intensity has zero mass")
    cdf = np.cumsum(p / total)
    cdf[-1] = 1.0
    h = grid.h
    cell = max(dmin, 1e-300)
    buckets: dict = {}
    pts = np.empty((count, 3))
    batch = 256
    pool = np.empty((0, 3))
    placed = 0
    retries = 0
    while placed < count:
        if len(pool) == 0:
            idx = np.searchsorted(cdf, rng.random(batch))
            pool = grid.points[idx] + (rng.random((batch, 3)) - 0.5) * h
        x, pool = pool[0], pool[1:]
        if radius is not None and x @ x > radius * radius:
            continue
        key = tuple(np.floor(x / cell).astype(int))
        ok = True
        if dmin > 0:
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    for dz in (-1, 0, 1):
                        for y in buckets.get((key[0] + dx, key[1] + dy, key[2] + dz), ()):
                            if np.sum((x - y) ** 2) < dmin * dmin:
                                ok = False
                                break
                        if not ok:
                            break
                    if not ok:
                        break
                if not ok:
                    break
        if not ok:
            retries += 1
            if retries > max_retries:
                raise PackingError(
                    f"placed {placed}/{count} points; no room at spacing {dmin:.3g} after {max_retries} tries",
                    placed,
                    max_feasible_count(grid.volume, dmin),
                )
            continue
        retries = 0
        buckets.setdefault(key, []).append(x)
        pts[placed] = x
        placed += 1
    return pts
