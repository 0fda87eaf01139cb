"""Leaf/Stem classification of superpoints and leaf instance segmentation.

Per-point shape descriptors are eigenvalue ratios of the neighborhood
covariance at several radii, computed on the full-resolution cloud; a
superpoint's descriptor is the mean over its member points.  A linear SVM on
standardized descriptors separates Leaf from Stem.  Leaf instances come from a
second, leaf-only embedding clustered in the plane.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import tsne
from .core import (LEAF, STEM, PointCloud, VoxelParams, n_workers,
                   nearest_indices, voxel_downsample)
from .errors import InputError, TrainingError

log = logging.getLogger(__name__)

DEFAULT_RADII = (4.0, 5.0, 6.0)

SVM_TOL = 1e-6          # relative objective change
SVM_MAX_ITER = 20000


# ---------------------------------------------------------------------------
# Shape descriptors

def shape_ratios(eigenvalues) -> tuple[float, float, float]:
    """(anisotropy, planarity, sphericity) from descending covariance
    eigenvalues; all zero when the neighborhood is degenerate."""
    lam = np.maximum(np.asarray(eigenvalues, dtype=np.float64), 0.0)
    l1, l2, l3 = lam
    if not (l1 >= l2 >= l3):
        raise InputError("eigenvalues must be sorted descending")
    if l1 <= 0:
        return (0.0, 0.0, 0.0)
    return ((l1 - l3) / l1, (l2 - l3) / l1, l3 / l1)


def point_features(cloud, radii=DEFAULT_RADII) -> np.ndarray:
    """Per-point descriptor: shape ratios at each radius, concatenated.

    A point needs at least 3 neighbors strictly inside the radius (itself
    included) for a covariance; otherwise its triplet is zero.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
        raise InputError("need a non-empty (N, 3) cloud")
    radii = tuple(float(r) for r in radii)
    if len(radii) == 0 or min(radii) <= 0:
        raise InputError("radii must be positive")
    n = len(pts)
    out = np.zeros((n, 3 * len(radii)), dtype=np.float64)
    tree = cKDTree(pts)
    for ri, r in enumerate(radii):
        neighbors = tree.query_ball_point(pts, r, workers=n_workers())
        covs = np.zeros((n, 3, 3), dtype=np.float64)
        ok = np.zeros(n, dtype=bool)
        for i, idx in enumerate(neighbors):
            nb = pts[idx]
            d = nb - pts[i]
            inside = np.einsum("ij,ij->i", d, d) < r * r
            nb = nb[inside]
            if len(nb) < 3:
                continue
            nb = nb - nb.mean(axis=0)
            covs[i] = (nb.T @ nb) / len(nb)
            ok[i] = True
        lams = np.linalg.eigvalsh(covs[ok])[:, ::-1]
        lams = np.maximum(lams, 0.0)
        l1 = lams[:, 0]
        good = l1 > 0
        trip = np.zeros((int(ok.sum()), 3), dtype=np.float64)
        trip[good, 0] = (l1[good] - lams[good, 2]) / l1[good]
        trip[good, 1] = (lams[good, 1] - lams[good, 2]) / l1[good]
        trip[good, 2] = lams[good, 2] / l1[good]
        out[ok, 3 * ri:3 * ri + 3] = trip
    return out


def superpoint_features(features: np.ndarray, assignments: np.ndarray) -> np.ndarray:
    """Mean descriptor over the member points of each superpoint."""
    f = np.asarray(features, dtype=np.float64)
    a = np.asarray(assignments, dtype=np.int64)
    if f.ndim != 2 or len(f) != len(a):
        raise InputError("features and assignments must align")
    if len(a) == 0:
        raise InputError("empty assignment vector")
    k = int(a.max()) + 1
    counts = np.bincount(a, minlength=k)
    if (counts == 0).any():
        raise InputError("assignments must use every id in 0..K-1")
    out = np.empty((k, f.shape[1]), dtype=np.float64)
    for col in range(f.shape[1]):
        out[:, col] = np.bincount(a, weights=f[:, col], minlength=k) / counts
    return out


# ---------------------------------------------------------------------------
# Linear SVM

@dataclass(frozen=True)
class SvmModel:
    weights: np.ndarray
    bias: float
    feature_means: np.ndarray
    feature_stds: np.ndarray
    C: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.asarray(self.feature_means, dtype=np.float64)
        sd = np.asarray(self.feature_stds, dtype=np.float64)
        if w.ndim != 1 or w.shape != mu.shape or w.shape != sd.shape:
            raise InputError("weights and scaler shapes must match")
        if (sd <= 0).any():
            raise InputError("feature stds must be positive")
        if self.C <= 0:
            raise InputError("C must be positive")
        for name, arr in (("weights", w), ("feature_means", mu), ("feature_stds", sd)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def decision_values(self, features: np.ndarray) -> np.ndarray:
        f = np.asarray(features, dtype=np.float64)
        z = (f - self.feature_means) / self.feature_stds
        return z @ self.weights + self.bias


def majority_labels(semantic: np.ndarray, assignments: np.ndarray) -> np.ndarray:
    """Majority semantic class of each superpoint; exact ties go to Leaf."""
    sem = np.asarray(semantic, dtype=np.int64)
    a = np.asarray(assignments, dtype=np.int64)
    if sem.shape != a.shape or len(sem) == 0:
        raise InputError("semantic labels and assignments must align")
    k = int(a.max()) + 1
    leaf_votes = np.bincount(a[sem == LEAF], minlength=k)
    stem_votes = np.bincount(a[sem == STEM], minlength=k)
    return np.where(stem_votes > leaf_votes, STEM, LEAF).astype(np.int64)


def _objective(w, b, x, y, c):
    margins = 1.0 - y * (x @ w + b)
    return 0.5 * float(w @ w) + c * float(np.maximum(margins, 0.0).sum()), margins


def _steepest_subgradient(w, x, y, c, margins):
    """Minimum-norm element of the objective's subdifferential at (w, b).

    Margins sitting exactly on the hinge contribute any fraction of their
    term's gradient; the fractions minimizing the subgradient norm come from a
    small box-constrained least squares.  The result is the steepest descent
    direction (negated), and its norm vanishes exactly at the optimum.
    """
    scale = 1e-9 * (1.0 + np.abs(margins).max())
    viol = margins > scale
    near = np.abs(margins) <= scale
    g = np.concatenate([w - c * (y[viol, None] * x[viol]).sum(axis=0),
                        [-c * float(y[viol].sum())]])
    if near.any():
        cols = c * y[near, None] * np.column_stack([x[near], np.ones(near.sum())])
        from scipy.optimize import lsq_linear
        fit = lsq_linear(cols.T, g, bounds=(0.0, 1.0))
        g = g - cols.T @ fit.x
    return g[:-1], float(g[-1])


def _line_search(w, b, dw, db, x, y, c, margins):
    """Exact minimizer of the piecewise-quadratic objective along (dw, db)."""
    slope = y * (x @ dw + db)          # margin_i(alpha) = margins_i - alpha*slope_i
    with np.errstate(divide="ignore", invalid="ignore"):
        bp = margins / slope
    bp = bp[np.isfinite(bp) & (bp > 0)]
    bp = np.unique(bp)
    # Candidate steps: every breakpoint plus the unconstrained minimum of the
    # quadratic piece on each interval between consecutive breakpoints.
    edges = np.concatenate([[0.0], bp, [bp[-1] * 2.0 + 1.0 if len(bp) else 1e6]])
    dww = float(dw @ dw)
    cands = list(bp)
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid_active = margins - 0.5 * (lo + hi) * slope > 0
        q1 = float(w @ dw) - c * float(slope[mid_active].sum())
        if dww > 0:
            alpha = -q1 / dww
            if lo < alpha <= hi:
                cands.append(alpha)
        elif q1 < 0:
            cands.append(hi)
    best_alpha, best_val = 0.0, None
    for alpha in cands:
        if alpha <= 0:
            continue
        val, _ = _objective(w + alpha * dw, b + alpha * db, x, y, c)
        if best_val is None or val < best_val:
            best_alpha, best_val = alpha, val
    return best_alpha, best_val


def fit_svm(features: np.ndarray, labels: np.ndarray, C: float = 1.0,
            seed: int = 0) -> SvmModel:
    """Fit the L2-regularized hinge loss by deterministic batch sub-gradient
    descent: steepest (minimum-norm) sub-gradient direction with an exact line
    search, stopping on a 1e-6 relative objective change or a vanishing
    sub-gradient."""
    f = np.asarray(features, dtype=np.float64)
    lab = np.asarray(labels, dtype=np.int64)
    if f.ndim != 2 or len(f) != len(lab) or len(f) == 0:
        raise InputError("bad training set shapes")
    classes = np.unique(lab)
    if not np.all(np.isin(classes, [LEAF, STEM])):
        raise InputError(f"labels must be Leaf({LEAF}) or Stem({STEM})")
    if len(classes) < 2:
        raise TrainingError("training set contains a single class; "
                            "cannot fit a separating plane")
    if C <= 0:
        raise InputError("C must be positive")
    del seed  # the solver is deterministic; accepted for interface stability

    mu = f.mean(axis=0)
    sd = f.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    x = (f - mu) / sd
    y = np.where(lab == LEAF, 1.0, -1.0)

    w = np.zeros(f.shape[1], dtype=np.float64)
    b = 0.0
    obj, margins = _objective(w, b, x, y, C)
    quiet = 0
    for _ in range(SVM_MAX_ITER):
        gw, gb = _steepest_subgradient(w, x, y, C, margins)
        if gw @ gw + gb * gb <= (1e-10 * (1.0 + float(w @ w))) ** 2:
            break   # no descent direction exists: optimal
        alpha, val = _line_search(w, b, -gw, -gb, x, y, C, margins)
        if val is None or val >= obj:
            break
        w = w - alpha * gw
        b = b - alpha * gb
        prev = obj
        obj, margins = _objective(w, b, x, y, C)
        # The objective ratchets down monotonically; consider it converged
        # after a few consecutive relative changes below tolerance.
        quiet = quiet + 1 if prev - obj <= SVM_TOL * max(prev, 1e-30) else 0
        if quiet >= 3:
            break
    else:
        log.debug("svm stopped at max_iter=%d with objective %.6g",
                  SVM_MAX_ITER, obj)
    return SvmModel(w, float(b), mu, sd, float(C))


def train_svm(features: np.ndarray, semantic: np.ndarray,
              assignments: np.ndarray, C: float = 1.0, seed: int = 0) -> SvmModel:
    """Majority-label the superpoints, then fit the SVM on their descriptors."""
    labels = majority_labels(semantic, assignments)
    k = int(np.asarray(assignments).max()) + 1
    f = np.asarray(features, dtype=np.float64)
    if len(f) != k:
        raise InputError(f"expected {k} superpoint descriptors, got {len(f)}")
    return fit_svm(f, labels, C=C, seed=seed)


def classify(model: SvmModel, features: np.ndarray) -> np.ndarray:
    """Leaf/Stem decision per superpoint; a decision value of exactly 0 is Leaf."""
    d = model.decision_values(features)
    return np.where(d >= 0, LEAF, STEM).astype(np.int64)


def classify_cloud(model: SvmModel, features: np.ndarray,
                   assignments: np.ndarray, cloud: PointCloud) -> PointCloud:
    """Broadcast superpoint decisions onto the member points of a cloud."""
    a = np.asarray(assignments, dtype=np.int64)
    if len(a) != len(cloud):
        raise InputError("assignments must cover the cloud")
    sp_class = classify(model, features)
    return PointCloud(cloud.points, sp_class[a], cloud.instance_labels)


# ---------------------------------------------------------------------------
# Model file format: one "key=value" per line, floats via repr for an exact
# round trip.

_MODEL_KEYS = ("weights", "bias", "feature_means", "feature_stds", "C", "radii")


def save_model(path, model: SvmModel, radii=DEFAULT_RADII) -> None:
    def fmt(arr):
        return ",".join(repr(float(v)) for v in np.asarray(arr).ravel())
    with open(path, "w") as fh:
        fh.write(f"weights={fmt(model.weights)}\n")
        fh.write(f"bias={repr(model.bias)}\n")
        fh.write(f"feature_means={fmt(model.feature_means)}\n")
        fh.write(f"feature_stds={fmt(model.feature_stds)}\n")
        fh.write(f"C={repr(model.C)}\n")
        fh.write(f"radii={fmt(radii)}\n")


def load_model(path) -> tuple[SvmModel, tuple[float, ...]]:
    values = {}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise InputError(f"{path}: line {lineno}: expected key=value")
                key, _, raw = line.partition("=")
                key = key.strip()
                if key not in _MODEL_KEYS:
                    raise InputError(f"{path}: unknown model key {key!r}")
                values[key] = np.array([float(v) for v in raw.split(",")])
    except FileNotFoundError:
        raise InputError(f"model file not found: {path}") from None
    missing = [k for k in _MODEL_KEYS if k not in values]
    if missing:
        raise InputError(f"{path}: missing model keys {missing}")
    model = SvmModel(values["weights"], float(values["bias"][0]),
                     values["feature_means"], values["feature_stds"],
                     float(values["C"][0]))
    return model, tuple(values["radii"])


# ---------------------------------------------------------------------------
# Leaf instance segmentation

@dataclass(frozen=True)
class InstanceParams:
    v: float = 1.0
    perplexity: float = 60.0
    d_E: float = 2.0
    min_points: int = 1000

    def __post_init__(self):
        if self.v <= 0 or self.d_E <= 0 or self.perplexity < 1:
            raise InputError("instance parameters must be positive")


def instance_segment(leaf_cloud: PointCloud,
                     params: InstanceParams = InstanceParams(),
                     tsne_config: tsne.TsneConfig = tsne.TsneConfig()) -> PointCloud:
    """Assign an instance id to every point of a leaf-only cloud.

    Downsample, embed with the instance perplexity, cluster the map at d_E,
    then lift cluster ids back through each point's nearest downsampled
    neighbor.  Fewer than 4 points cannot be embedded and become one instance.
    """
    if len(leaf_cloud) == 0:
        raise InputError("instance segmentation needs a non-empty leaf cloud")
    if len(leaf_cloud) < 4:
        ids = np.zeros(len(leaf_cloud), dtype=np.int64)
        return PointCloud(leaf_cloud.points, leaf_cloud.semantic_labels, ids)

    low_res, _ = voxel_downsample(leaf_cloud,
                                  VoxelParams(params.v, params.min_points))
    perp = params.perplexity
    if perp >= len(low_res) - 1:
        perp = float(len(low_res) - 2)
        log.debug("instance perplexity reduced to %g for %d points",
                  perp, len(low_res))
    emb = tsne.embed(low_res.points, tsne_config.replace(perplexity=perp))
    from . import cluster as cl
    map_ids = cl.euclidean_cluster(emb.y, params.d_E)
    idx = nearest_indices(low_res.points, leaf_cloud.points)
    return PointCloud(leaf_cloud.points, leaf_cloud.semantic_labels,
                      map_ids[idx])
