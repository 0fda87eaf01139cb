"""Superpoint extraction on the 2D map, and lifting ids back to full resolution.

The map is first cut into Euclidean clusters.  Locally linear runs of points
(stem-like traces) are peeled off as their own superpoints, the remainder is
re-clustered, and every remaining cluster is then either accepted whole (high
solidity, or a Laplacian spectrum indicating a single group) or split
spectrally and re-examined, up to a bounded number of rounds.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import cluster as cl
from .core import PointCloud, nearest_indices
from .errors import DegenerateGeometryError, InputError

log = logging.getLogger(__name__)

# Clusters below this size skip the solidity / spectral tests entirely.
MIN_CLUSTER_SIZE = 3

# How a group of points ended up as one superpoint.
LINEAR_REGION = "linear_region"
SOLID_CLUSTER = "solid_cluster"
SPECTRAL_LEAF = "spectral_leaf"
SPECTRAL_SPLIT = "spectral_split"


@dataclass(frozen=True)
class SuperpointSet:
    """Partition of the map points into superpoints.

    assignments  (N,) superpoint id per point, ids 0..K-1, none empty
    provenance   length-K tuple naming the rule that finalized each superpoint
    exhausted    True when the split loop hit its round limit and leftover
                 clusters were finalized as-is
    """

    assignments: np.ndarray
    provenance: tuple[str, ...]
    exhausted: bool = False

    def __post_init__(self):
        a = np.asarray(self.assignments, dtype=np.int64)
        if a.ndim != 1 or len(a) == 0:
            raise InputError("assignments must be a non-empty vector")
        k = len(self.provenance)
        counts = np.bincount(a, minlength=max(k, 1))
        if a.min() < 0 or a.max() >= k or (counts[:k] == 0).any():
            raise InputError("superpoint ids must cover 0..K-1 with no empty id")
        a.setflags(write=False)
        object.__setattr__(self, "assignments", a)
        object.__setattr__(self, "provenance", tuple(self.provenance))

    @property
    def n_superpoints(self) -> int:
        return len(self.provenance)

    def members(self, sp_id: int) -> np.ndarray:
        return np.nonzero(self.assignments == sp_id)[0]


def extract_superpoints(points2d, params: cl.ClusterParams = cl.ClusterParams(),
                        max_rounds: int = 10, seed: int = 0) -> SuperpointSet:
    """Partition 2D map points into superpoints.

    Accepts an (N, 2) array or anything with a `.y` attribute holding one
    (an Embedding).  Every point is assigned to exactly one superpoint.
    """
    pts = np.asarray(getattr(points2d, "y", points2d), dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InputError(f"expected (N, 2) map points, got {pts.shape}")
    n = len(pts)
    if n == 0:
        raise InputError("cannot extract superpoints from an empty map")
    if max_rounds < 1:
        raise InputError("max_rounds must be at least 1")

    assignments = np.full(n, -1, dtype=np.int64)
    provenance: list[str] = []

    def finalize(index: np.ndarray, rule: str) -> None:
        assignments[index] = len(provenance)
        provenance.append(rule)

    # Step 1: initial Euclidean clusters.
    first = cl.euclidean_cluster(pts, params.d_E)

    # Step 2: peel off locally linear runs, cluster by cluster.
    linear_mask = np.zeros(n, dtype=bool)
    for cid in np.unique(first):
        idx = np.nonzero(first == cid)[0]
        if len(idx) < MIN_CLUSTER_SIZE:
            continue
        linear_mask[idx] = cl.linear_points(pts[idx], params.r_E, params.T_E)
    if linear_mask.any():
        lin_idx = np.nonzero(linear_mask)[0]
        comp = cl.euclidean_cluster(pts[lin_idx], params.d_E)
        for cid in np.unique(comp):
            finalize(lin_idx[comp == cid], LINEAR_REGION)

    # Step 3: re-cluster what is left.
    pending: list[np.ndarray] = []
    rest = np.nonzero(~linear_mask)[0]
    if len(rest):
        again = cl.euclidean_cluster(pts[rest], params.d_E)
        pending = [rest[again == cid] for cid in np.unique(again)]

    # Steps 4-7: accept or split until nothing is pending.
    exhausted = False
    for round_no in range(max_rounds):
        if not pending:
            break
        next_pending: list[np.ndarray] = []
        for idx in pending:
            sub = pts[idx]
            if len(idx) < MIN_CLUSTER_SIZE:
                finalize(idx, SOLID_CLUSTER)
                continue
            try:
                sol = cl.solidity(sub, 2.0 * params.d_E)
            except DegenerateGeometryError:
                # A collinear leftover is a filled segment: convex by any
                # reasonable reading, accept it as solid.
                sol = 1.0
            if sol > params.s_E:
                finalize(idx, SOLID_CLUSTER)
                continue
            k = cl.spectral_k(sub, params.T_s, sigma=params.d_E,
                              laplacian=params.laplacian)
            if k <= 1:
                finalize(idx, SPECTRAL_LEAF)
                continue
            part = cl.spectral_partition(sub, k, sigma=params.d_E,
                                         laplacian=params.laplacian, seed=seed)
            for pid in np.unique(part):
                next_pending.append(idx[part == pid])
        pending = next_pending
        # Every point is either assigned or still pending, never both.
        claimed = int((assignments >= 0).sum()) + sum(len(i) for i in pending)
        if claimed != n:
            raise AssertionError(f"partition broken after round {round_no}: "
                                 f"{claimed} of {n} points accounted for")
    if pending:
        exhausted = True
        log.warning("superpoint split loop exhausted %d rounds with %d clusters "
                    "left; finalizing them as-is", max_rounds, len(pending))
        for idx in pending:
            finalize(idx, SPECTRAL_SPLIT)

    return SuperpointSet(assignments, tuple(provenance), exhausted)


def lift_superpoints(sp: SuperpointSet, low_res: PointCloud,
                     high_res: PointCloud) -> np.ndarray:
    """Superpoint id for every high-res point, via its nearest low-res point."""
    if len(sp.assignments) != len(low_res):
        raise InputError(f"superpoint set covers {len(sp.assignments)} points "
                         f"but the low-res cloud has {len(low_res)}")
    idx = nearest_indices(low_res.points, high_res.points)
    return sp.assignments[idx]
