"""2D grouping primitives: Euclidean clustering, linearity masks, solidity and
spectral cluster counting / partitioning.

Everything here operates on the flattened (N, 2) coordinates produced by the
embedding; the only scale in play is the clustering distance d_E, which also
sets the affinity bandwidth (sigma = d_E) and the alpha-shape radius (2 d_E).
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, eigh
from scipy.spatial import ConvexHull, Delaunay, QhullError, cKDTree

from .core import n_workers
from .errors import DegenerateGeometryError, InputError, NumericalError

log = logging.getLogger(__name__)

# Affinities are truncated to zero beyond this many bandwidths.
AFFINITY_CUTOFF_SIGMAS = 3.0

KMEANS_RESTARTS = 20
KMEANS_MAX_ITER = 300


@dataclass(frozen=True)
class ClusterParams:
    """Thresholds of the superpoint pipeline.

    d_E     Euclidean clustering distance in the 2D map.
    r_E     PCA neighborhood radius for the linearity test (fixed at 2 d_E
            unless overridden).
    T_E     eigenvalue-ratio threshold below which a point counts as linear.
    s_E     solidity above which a cluster is accepted as a single superpoint.
    T_s     Laplacian eigenvalues below this count toward the cluster number.
    """

    d_E: float = 2.0
    r_E: float | None = None
    T_E: float = 0.1
    s_E: float = 0.8
    T_s: float = 0.0005
    laplacian: str = "symmetric"   # or "unnormalized"

    def __post_init__(self):
        if self.d_E <= 0:
            raise InputError("d_E must be positive")
        if self.r_E is None:
            object.__setattr__(self, "r_E", 2.0 * self.d_E)
        if self.r_E <= 0:
            raise InputError("r_E must be positive")
        if not (0 < self.T_E < 1) or not (0 < self.s_E < 1):
            raise InputError("T_E and s_E must lie in (0, 1)")
        if self.T_s <= 0:
            raise InputError("T_s must be positive")
        if self.laplacian not in ("symmetric", "unnormalized"):
            raise InputError(f"unknown laplacian kind {self.laplacian!r}")


def _check_points2d(points: np.ndarray, min_count: int = 1) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InputError(f"expected (N, 2) points, got {pts.shape}")
    if len(pts) < min_count:
        raise InputError(f"need at least {min_count} points, got {len(pts)}")
    if not np.isfinite(pts).all():
        raise InputError("points must be finite")
    return pts


def euclidean_cluster(points2d: np.ndarray, d_E: float) -> np.ndarray:
    """Group points connected by hops strictly shorter than d_E.

    Returns one cluster id per point.  Ids count up from 0 in order of
    discovery, scanning from the lowest point index, so they are stable for a
    given input ordering.
    """
    pts = _check_points2d(points2d)
    if d_E <= 0:
        raise InputError("d_E must be positive")
    n = len(pts)
    ids = np.full(n, -1, dtype=np.int64)
    tree = cKDTree(pts)
    # query_ball_point is a closed ball; drop neighbors at exactly d_E to get
    # the strict inequality the contract asks for.
    neighbors = tree.query_ball_point(pts, d_E, workers=n_workers())
    next_id = 0
    for start in range(n):
        if ids[start] != -1:
            continue
        ids[start] = next_id
        queue = deque([start])
        while queue:
            j = queue.popleft()
            cand = np.asarray(neighbors[j], dtype=np.int64)
            cand = cand[ids[cand] == -1]
            if len(cand) == 0:
                continue
            d = np.linalg.norm(pts[cand] - pts[j], axis=1)
            cand = cand[d < d_E]
            for c in cand:
                if ids[c] == -1:
                    ids[c] = next_id
                    queue.append(c)
        next_id += 1
    return ids


def linear_points(points2d: np.ndarray, r_E: float, T_E: float) -> np.ndarray:
    """Mask of points whose r_E neighborhood is nearly one-dimensional.

    A point qualifies when it has at least 3 neighbors (itself included)
    within r_E and the ratio of the smaller to the larger eigenvalue of the
    neighborhood covariance falls below T_E.
    """
    pts = _check_points2d(points2d)
    if r_E <= 0 or not (0 < T_E < 1):
        raise InputError("bad linearity parameters")
    tree = cKDTree(pts)
    neighbors = tree.query_ball_point(pts, r_E, workers=n_workers())
    mask = np.zeros(len(pts), dtype=bool)
    for i, idx in enumerate(neighbors):
        if len(idx) < 3:
            continue
        nb = pts[idx]
        nb = nb - nb.mean(axis=0)
        # 2x2 covariance in closed form.
        a = np.dot(nb[:, 0], nb[:, 0])
        c = np.dot(nb[:, 1], nb[:, 1])
        b = np.dot(nb[:, 0], nb[:, 1])
        tr = a + c
        disc = np.sqrt(max((a - c) ** 2 + 4.0 * b * b, 0.0))
        lam_big = 0.5 * (tr + disc)
        lam_small = max(0.5 * (tr - disc), 0.0)
        if lam_big > 0 and lam_small / lam_big < T_E:
            mask[i] = True
    return mask


def solidity(points2d: np.ndarray, alpha: float) -> float:
    """Concave-to-convex area ratio of a 2D point set.

    The concave outline is the alpha complex: the union of Delaunay triangles
    whose circumradius is below alpha.  Its area (sum of the triangle areas,
    which equals the shoelace area of the boundary polygon) is divided by the
    convex hull area.  Falls back to 1.0 when no triangle survives the alpha
    filter, and raises DegenerateGeometryError on collinear input.
    """
    pts = _check_points2d(points2d, min_count=3)
    if alpha <= 0:
        raise InputError("alpha must be positive")
    try:
        hull = ConvexHull(pts)
        tri = Delaunay(pts)
    except QhullError as exc:
        raise DegenerateGeometryError(
            f"cannot build a hull over {len(pts)} points: {exc}") from None
    hull_area = hull.volume  # 2D: "volume" is the enclosed area
    if hull_area <= 0:
        raise DegenerateGeometryError("convex hull has zero area")

    corners = pts[tri.simplices]                       # (T, 3, 2)
    e1 = corners[:, 1] - corners[:, 0]
    e2 = corners[:, 2] - corners[:, 0]
    e3 = corners[:, 2] - corners[:, 1]
    area2 = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])  # 2 * area
    la = np.linalg.norm(e1, axis=1)
    lb = np.linalg.norm(e2, axis=1)
    lc = np.linalg.norm(e3, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        circumradius = np.where(area2 > 0, (la * lb * lc) / (2.0 * area2), np.inf)
    kept = circumradius < alpha
    if not kept.any():
        log.debug("alpha shape degenerate (alpha=%g): falling back to convex hull",
                  alpha)
        return 1.0
    concave_area = 0.5 * float(area2[kept].sum())
    return min(concave_area / hull_area, 1.0)


# ---------------------------------------------------------------------------
# Spectral machinery

def affinity_matrix(points2d: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian affinities exp(-d^2 / 2 sigma^2), zeroed beyond 3 sigma and on
    the diagonal."""
    pts = _check_points2d(points2d)
    if sigma <= 0:
        raise InputError("sigma must be positive")
    d2 = np.sum(pts * pts, axis=1)
    sq = d2[:, None] + d2[None, :] - 2.0 * (pts @ pts.T)
    np.maximum(sq, 0.0, out=sq)
    w = np.exp(-sq / (2.0 * sigma * sigma))
    w[sq > (AFFINITY_CUTOFF_SIGMAS * sigma) ** 2] = 0.0
    np.fill_diagonal(w, 0.0)
    return 0.5 * (w + w.T)   # exact symmetry despite float noise in sq


def _laplacian(w: np.ndarray, kind: str) -> np.ndarray:
    deg = w.sum(axis=1)
    if kind == "unnormalized":
        return np.diag(deg) - w
    isolated = deg <= 0
    with np.errstate(divide="ignore"):
        inv_sqrt = np.where(isolated, 0.0, 1.0 / np.sqrt(np.where(isolated, 1.0, deg)))
    lap = -w * inv_sqrt[:, None] * inv_sqrt[None, :]
    np.fill_diagonal(lap, np.where(isolated, 0.0, 1.0))
    # Isolated vertices keep a zero row, so each still contributes one zero
    # eigenvalue, exactly like a singleton component.
    return 0.5 * (lap + lap.T)


def spectral_k(points2d: np.ndarray, T_s: float, sigma: float,
               laplacian: str = "symmetric") -> int:
    """Number of Laplacian eigenvalues below T_s (the estimated cluster count)."""
    pts = _check_points2d(points2d, min_count=2)
    if T_s <= 0:
        raise InputError("T_s must be positive")
    w = affinity_matrix(pts, sigma)
    lap = _laplacian(w, laplacian)
    try:
        evals = eigh(lap, eigvals_only=True)
    except LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from None
    return int(np.count_nonzero(evals < T_s))


def spectral_partition(points2d: np.ndarray, k: int, sigma: float,
                       laplacian: str = "symmetric", seed: int = 0) -> np.ndarray:
    """Split points into k groups from the leading Laplacian eigenvectors.

    Rows of the eigenvector matrix are normalized to unit length (zero rows of
    isolated vertices are left alone) and clustered with seeded k-means.
    """
    pts = _check_points2d(points2d, min_count=2)
    if not (2 <= k <= len(pts)):
        raise InputError(f"k must lie in [2, {len(pts)}], got {k}")
    w = affinity_matrix(pts, sigma)
    lap = _laplacian(w, laplacian)
    try:
        _, vecs = eigh(lap, subset_by_index=[0, k - 1])
    except LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from None
    norms = np.linalg.norm(vecs, axis=1)
    rows = vecs / np.maximum(norms, 1e-12)[:, None]
    return kmeans(rows, k, seed=seed)


def kmeans(x: np.ndarray, k: int, seed: int = 0,
           restarts: int = KMEANS_RESTARTS) -> np.ndarray:
    """Seeded k-means with k-means++ starts; best of `restarts` by WCSS."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or not (1 <= k <= len(x)):
        raise InputError("bad k-means input")
    rng = np.random.default_rng(seed)
    best_labels = None
    best_cost = np.inf
    for _ in range(restarts):
        labels, cost = _kmeans_once(x, k, rng)
        if cost < best_cost:
            best_cost = cost
            best_labels = labels
    return best_labels


def _kmeans_once(x: np.ndarray, k: int, rng) -> tuple[np.ndarray, float]:
    n = len(x)
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    centers[0] = x[rng.integers(n)]
    closest = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            centers[j] = x[rng.integers(n)]   # duplicates everywhere
        else:
            centers[j] = x[rng.choice(n, p=closest / total)]
        closest = np.minimum(closest, np.sum((x - centers[j]) ** 2, axis=1))
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(KMEANS_MAX_ITER):
        d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_labels = d2.argmin(axis=1)
        for j in range(k):
            members = new_labels == j
            if members.any():
                centers[j] = x[members].mean(axis=0)
            else:
                # Re-seat an empty cluster on the point farthest from its center.
                worst = d2[np.arange(n), new_labels].argmax()
                centers[j] = x[worst]
                new_labels[worst] = j
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    d2 = np.sum((x - centers[labels]) ** 2, axis=1)
    return labels, float(d2.sum())
