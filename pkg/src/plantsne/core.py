"""Point-cloud data model, ASCII I/O, voxel downsampling and 1-NN label transfer.

Coordinates are kept in the native units of the input file throughout; nothing
in the pipeline rescales them.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import FormatError, InputError

log = logging.getLogger(__name__)

# Semantic class ids used everywhere downstream.
LEAF = 0
STEM = 1

CLASS_NAMES = {LEAF: "Leaf", STEM: "Stem"}

# Default mapping from raw label values in Pheno4D-style files to class ids.
# Raw values missing from the map (ground, for instance) are filtered out.
DEFAULT_CLASS_MAP = {1: STEM, 2: LEAF}


def n_workers() -> int:
    """Thread count for neighbor queries, from PLANTSNE_THREADS (default 1)."""
    try:
        w = int(os.environ.get("PLANTSNE_THREADS", "1"))
    except ValueError:
        return 1
    return w if w != 0 else 1


@dataclass(frozen=True)
class PointCloud:
    """Immutable 3D point set with optional per-point semantic / instance labels.

    points            (N, 3) float64, finite
    semantic_labels   (N,) int64 class ids, or None
    instance_labels   (N,) int64 non-negative ids, or None
    """

    points: np.ndarray
    semantic_labels: np.ndarray | None = None
    instance_labels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InputError(f"points must have shape (N, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise InputError("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        for name in ("semantic_labels", "instance_labels"):
            lab = getattr(self, name)
            if lab is None:
                continue
            lab = np.asarray(lab, dtype=np.int64)
            if lab.shape != (len(pts),):
                raise InputError(f"{name} must have one entry per point, "
                                 f"got {lab.shape} for {len(pts)} points")
            if name == "instance_labels" and len(lab) and lab.min() < 0:
                raise InputError("instance ids must be non-negative")
            lab.setflags(write=False)
            object.__setattr__(self, name, lab)

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, index) -> "PointCloud":
        """New cloud restricted to `index` (mask or index array), labels carried along."""
        sem = self.semantic_labels
        inst = self.instance_labels
        return PointCloud(self.points[index],
                          None if sem is None else sem[index],
                          None if inst is None else inst[index])


@dataclass(frozen=True)
class VoxelParams:
    """Voxel grid average filter parameters.

    v is halved (down to 1e-3) until at least min_points survive, so sparse
    clouds pass through nearly untouched.
    """

    v: float = 1.0
    min_points: int = 1000

    def __post_init__(self):
        if self.v <= 0:
            raise InputError("voxel size v must be positive")
        if self.min_points < 1:
            raise InputError("min_points must be at least 1")


# ---------------------------------------------------------------------------
# ASCII I/O
#
# Pheno4D-style rows: "x y z [semantic] [instance]", whitespace separated.
# All rows in a file must have the same column count (3, 4 or 5).

def read_cloud(path, fmt: str = "pheno4d_txt",
               class_map: dict[int, int] | None = None) -> PointCloud:
    """Read an ASCII point cloud.

    fmt "pheno4d_txt" accepts 3, 4 or 5 columns; "xyz" requires exactly 3.
    When a semantic column is present and class_map is given, raw values are
    mapped through it and points with unmapped values are dropped (this is how
    ground points are filtered out of labeled scans).
    """
    if fmt not in ("pheno4d_txt", "xyz"):
        raise InputError(f"unknown point cloud format {fmt!r}")
    try:
        data = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except FileNotFoundError:
        raise InputError(f"input file not found: {path}") from None
    except ValueError:
        _raise_parse_error(path)
        raise  # unreachable; _raise_parse_error always raises
    if data.size == 0:
        raise InputError(f"{path}: no points")
    ncol = data.shape[1]
    if fmt == "xyz" and ncol != 3:
        raise FormatError(f"{path}: xyz format requires 3 columns, found {ncol}")
    if ncol not in (3, 4, 5):
        raise FormatError(f"{path}: expected 3 to 5 columns, found {ncol}")
    if not np.isfinite(data).all():
        raise FormatError(f"{path}: non-finite value in file")

    pts = data[:, :3]
    sem = inst = None
    if ncol >= 4:
        sem = _int_column(data[:, 3], path, "semantic")
    if ncol == 5:
        inst = _int_column(data[:, 4], path, "instance")

    if sem is not None and class_map is not None:
        keep = np.isin(sem, list(class_map.keys()))
        dropped = len(sem) - int(keep.sum())
        if dropped:
            log.debug("%s: dropped %d points with unmapped labels", path, dropped)
        pts = pts[keep]
        inst = None if inst is None else inst[keep]
        lut = {int(k): int(v) for k, v in class_map.items()}
        sem = np.array([lut[int(s)] for s in sem[keep]], dtype=np.int64)
        if len(pts) == 0:
            raise InputError(f"{path}: no points left after class mapping")
    return PointCloud(pts, sem, inst)


def _int_column(col: np.ndarray, path, what: str) -> np.ndarray:
    rounded = np.rint(col)
    if not np.all(col == rounded):
        raise FormatError(f"{path}: non-integer {what} label")
    return rounded.astype(np.int64)


def _raise_parse_error(path):
    """Re-scan a file that np.loadtxt rejected and name the offending line."""
    ncol = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            for tok in parts:
                try:
                    float(tok)
                except ValueError:
                    raise FormatError(
                        f"{path}: line {lineno}: cannot parse {tok!r} as a number"
                    ) from None
            if ncol is None:
                ncol = len(parts)
            elif len(parts) != ncol:
                raise FormatError(
                    f"{path}: line {lineno}: expected {ncol} columns, found {len(parts)}"
                ) from None
    raise FormatError(f"{path}: malformed point cloud file")


def write_points(path, points: np.ndarray, *label_columns) -> None:
    """Write "x y z [int columns...]" rows; coordinates with 6 decimals."""
    points = np.asarray(points, dtype=np.float64)
    cols = [np.asarray(c, dtype=np.int64) for c in label_columns]
    with open(path, "w") as fh:
        for i in range(len(points)):
            x, y, z = points[i]
            row = f"{x:.6f} {y:.6f} {z:.6f}"
            for c in cols:
                row += f" {c[i]}"
            fh.write(row + "\n")


def write_cloud(path, cloud: PointCloud) -> None:
    """Write a cloud in the same row layout it is read from.

    An instance column is only valid alongside a semantic column, so instance
    ids are written as column 5 with semantics as column 4.
    """
    cols = []
    if cloud.semantic_labels is not None:
        cols.append(cloud.semantic_labels)
        if cloud.instance_labels is not None:
            cols.append(cloud.instance_labels)
    elif cloud.instance_labels is not None:
        raise InputError("cannot write instance labels without semantic labels")
    write_points(path, cloud.points, *cols)


# ---------------------------------------------------------------------------
# Voxel grid average filter

def voxel_downsample(cloud: PointCloud,
                     params: VoxelParams = VoxelParams()) -> tuple[PointCloud, np.ndarray]:
    """Replace each occupied voxel by the centroid of its member points.

    Voxel of a point is floor(coord / v) per axis, so points sitting exactly on
    a voxel boundary belong to the higher-index voxel.  Returns the filtered
    cloud (unlabeled) and an index map: index_map[i] is the output index that
    input point i contributed to.
    """
    if len(cloud) == 0:
        raise InputError("cannot downsample an empty cloud")
    pts = cloud.points
    v = float(params.v)
    while True:
        keys = np.floor(pts / v).astype(np.int64)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        if len(uniq) >= params.min_points or v / 2.0 < 1e-3:
            break
        v /= 2.0
    if v != params.v:
        log.debug("voxel size reduced from %g to %g to keep >= %d points",
                  params.v, v, params.min_points)
    counts = np.bincount(inverse)
    centroids = np.empty((len(uniq), 3), dtype=np.float64)
    for axis in range(3):
        centroids[:, axis] = np.bincount(inverse, weights=pts[:, axis]) / counts
    return PointCloud(centroids), inverse


# ---------------------------------------------------------------------------
# Exact nearest neighbor and label transfer

def nearest_indices(reference: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Index of the exact nearest reference point for each query.

    Distance ties are broken toward the lowest reference index.
    """
    reference = np.asarray(reference, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    if reference.ndim != 2 or len(reference) == 0:
        raise InputError("reference set must be a non-empty 2D array")
    if queries.ndim != 2 or queries.shape[1] != reference.shape[1]:
        raise InputError("query dimensionality must match the reference set")
    tree = cKDTree(reference)
    k = min(2, len(reference))
    dist, idx = tree.query(queries, k=k, workers=n_workers())
    if k == 1:
        return np.zeros(len(queries), dtype=np.int64)
    best = idx[:, 0].astype(np.int64)
    # A second neighbor at exactly the same distance means the winner is
    # ambiguous; resolve those few queries against the full tie set.
    for j in np.nonzero(dist[:, 1] <= dist[:, 0])[0]:
        cand = tree.query_ball_point(queries[j], dist[j, 0] * (1 + 1e-9))
        d = np.linalg.norm(reference[cand] - queries[j], axis=1)
        dmin = d.min()
        best[j] = min(c for c, dc in zip(cand, d) if dc == dmin)
    return best


def knn_1(query, reference) -> int:
    """Index of the nearest point of `reference` (PointCloud or array) to `query`."""
    ref = reference.points if isinstance(reference, PointCloud) else reference
    q = np.asarray(query, dtype=np.float64).reshape(1, -1)
    return int(nearest_indices(ref, q)[0])


def propagate_labels(low_res: PointCloud, high_res: PointCloud) -> PointCloud:
    """Copy the labels of each high-res point's nearest low-res point onto it."""
    if low_res.semantic_labels is None and low_res.instance_labels is None:
        raise InputError("low-res cloud carries no labels to propagate")
    idx = nearest_indices(low_res.points, high_res.points)
    sem = low_res.semantic_labels
    inst = low_res.instance_labels
    return PointCloud(high_res.points,
                      None if sem is None else sem[idx],
                      None if inst is None else inst[idx])
