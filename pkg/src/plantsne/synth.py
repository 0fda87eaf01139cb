"""Seeded synthetic plants with exact labels, for tests and demos.

A plant is a vertical cylindrical stem, plus planar elliptical leaf blades
attached to it by short thin petioles.  Stem and petiole points are labeled
Stem (instance 0); each blade is labeled Leaf with its own instance id.  An
optional quadratic bow curls the blades out of their planes, which is the
regime where embeddings start tearing leaves apart.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LEAF, STEM, PointCloud
from .errors import GenerationError, InputError

# Leaves may not come closer than this fraction of their combined radii.
MIN_LEAF_GAP = 0.95
AZIMUTH_TRIES = 50

ELLIPSE_ASPECT = 0.55       # minor over major semi-axis
PETIOLE_RADIUS_FACTOR = 0.35
PETIOLE_TILT = 0.35         # radians above horizontal
GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))   # phyllotactic step, ~137.5 deg


@dataclass(frozen=True)
class PlantSpec:
    n_leaves: int = 5
    leaf_size_range: tuple[float, float] = (14.0, 20.0)
    stem_height: float = 80.0
    stem_radius: float = 1.0
    petiole_length_range: tuple[float, float] = (6.0, 10.0)
    point_spacing: float = 1.0
    noise_std: float = 0.05
    bow: float = 0.0            # normal displacement per unit radius^2 / a
    seed: int = 0

    def __post_init__(self):
        if self.n_leaves < 0:
            raise InputError("n_leaves must be non-negative")
        for name in ("stem_height", "stem_radius", "point_spacing"):
            if getattr(self, name) <= 0:
                raise InputError(f"{name} must be positive")
        if self.noise_std < 0 or self.bow < 0:
            raise InputError("noise_std and bow must be non-negative")
        for name in ("leaf_size_range", "petiole_length_range"):
            lo, hi = getattr(self, name)
            if lo <= 0 or hi < lo:
                raise InputError(f"{name} must be 0 < lo <= hi")


def _cylinder(base: np.ndarray, axis: np.ndarray, length: float, radius: float,
              spacing: float) -> np.ndarray:
    """Points on the surface of a cylinder along `axis` (unit vector)."""
    # Build an orthonormal frame around the axis.
    ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(axis, ref)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    n_rows = max(2, int(round(length / spacing)) + 1)
    n_theta = max(3, int(round(2.0 * np.pi * radius / spacing)))
    heights = np.linspace(0.0, length, n_rows)
    thetas = np.linspace(0.0, 2.0 * np.pi, n_theta, endpoint=False)
    pts = (base[None, None, :]
           + heights[:, None, None] * axis[None, None, :]
           + radius * np.cos(thetas)[None, :, None] * u[None, None, :]
           + radius * np.sin(thetas)[None, :, None] * v[None, None, :])
    return pts.reshape(-1, 3)


def _blade(center: np.ndarray, major: np.ndarray, minor: np.ndarray,
           a: float, b: float, spacing: float, bow: float) -> np.ndarray:
    """Filled ellipse of points in the plane spanned by major/minor axes,
    bowed along the plane normal by bow * r^2 / a."""
    normal = np.cross(major, minor)
    s = np.arange(-a, a + spacing / 2, spacing)
    t = np.arange(-b, b + spacing / 2, spacing)
    ss, tt = np.meshgrid(s, t, indexing="ij")
    inside = (ss / a) ** 2 + (tt / b) ** 2 <= 1.0
    ss, tt = ss[inside], tt[inside]
    lift = bow * (ss * ss + tt * tt) / a
    pts = (center[None, :]
           + ss[:, None] * major[None, :]
           + tt[:, None] * minor[None, :]
           + lift[:, None] * normal[None, :])
    return pts


def _leaf_frames(spec: PlantSpec, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Heights, sizes and petiole lengths for each leaf (azimuths come later)."""
    lo, hi = 0.30 * spec.stem_height, 0.95 * spec.stem_height
    base = np.linspace(lo, hi, max(spec.n_leaves, 1))
    jitter = (hi - lo) / max(spec.n_leaves, 1) * 0.2
    heights = base + rng.uniform(-jitter, jitter, size=spec.n_leaves or 1)[:spec.n_leaves]
    sizes = rng.uniform(*spec.leaf_size_range, size=spec.n_leaves)
    petioles = rng.uniform(*spec.petiole_length_range, size=spec.n_leaves)
    return heights[:spec.n_leaves], sizes, petioles


def _blade_centers(spec: PlantSpec, heights, sizes, petioles,
                   azimuths) -> tuple[np.ndarray, np.ndarray]:
    """Blade center positions and bounding radii for the overlap test."""
    centers = np.empty((spec.n_leaves, 3))
    radii = np.empty(spec.n_leaves)
    for i in range(spec.n_leaves):
        a = sizes[i] / 2.0
        u = _petiole_dir(azimuths[i])
        start = np.array([spec.stem_radius * np.cos(azimuths[i]),
                          spec.stem_radius * np.sin(azimuths[i]),
                          heights[i]])
        centers[i] = start + u * (petioles[i] + a)
        radii[i] = a
    return centers, radii


def _petiole_dir(azimuth: float) -> np.ndarray:
    d = np.array([np.cos(azimuth) * np.cos(PETIOLE_TILT),
                  np.sin(azimuth) * np.cos(PETIOLE_TILT),
                  np.sin(PETIOLE_TILT)])
    return d / np.linalg.norm(d)


def generate(spec: PlantSpec) -> PointCloud:
    """Deterministically generate the plant described by `spec`."""
    rng = np.random.default_rng(spec.seed)
    chunks: list[np.ndarray] = []
    sem: list[np.ndarray] = []
    inst: list[np.ndarray] = []

    def add(points: np.ndarray, class_id: int, instance_id: int) -> None:
        chunks.append(points)
        sem.append(np.full(len(points), class_id, dtype=np.int64))
        inst.append(np.full(len(points), instance_id, dtype=np.int64))

    stem = _cylinder(np.zeros(3), np.array([0.0, 0.0, 1.0]),
                     spec.stem_height, spec.stem_radius, spec.point_spacing)
    add(stem, STEM, 0)

    if spec.n_leaves:
        heights, sizes, petioles = _leaf_frames(spec, rng)
        # Golden-angle spiral with jitter: successive leaves land far apart in
        # azimuth, which is both plant-like and easy to keep overlap-free.
        spiral = rng.uniform(0.0, 2.0 * np.pi) + GOLDEN_ANGLE * np.arange(spec.n_leaves)
        azimuths = None
        for _ in range(AZIMUTH_TRIES):
            candidate = spiral + rng.uniform(-0.3, 0.3, size=spec.n_leaves)
            centers, radii = _blade_centers(spec, heights, sizes, petioles,
                                            candidate)
            ok = True
            for i in range(spec.n_leaves):
                for j in range(i + 1, spec.n_leaves):
                    gap = np.linalg.norm(centers[i] - centers[j])
                    if gap < MIN_LEAF_GAP * (radii[i] + radii[j]):
                        ok = False
                        break
                if not ok:
                    break
            if ok:
                azimuths = candidate
                break
        if azimuths is None:
            raise GenerationError(
                f"could not place {spec.n_leaves} leaves without overlap "
                f"in {AZIMUTH_TRIES} tries; reduce leaf sizes or their count")

        for i in range(spec.n_leaves):
            a = sizes[i] / 2.0
            b = ELLIPSE_ASPECT * a
            phi = azimuths[i]
            u = _petiole_dir(phi)
            start = np.array([spec.stem_radius * np.cos(phi),
                              spec.stem_radius * np.sin(phi),
                              heights[i]])
            petiole = _cylinder(start, u, petioles[i],
                                PETIOLE_RADIUS_FACTOR * spec.stem_radius,
                                spec.point_spacing)
            add(petiole, STEM, 0)
            minor = np.array([-np.sin(phi), np.cos(phi), 0.0])
            center = start + u * (petioles[i] + a)
            blade = _blade(center, u, minor, a, b, spec.point_spacing, spec.bow)
            add(blade, LEAF, i + 1)

    points = np.vstack(chunks)
    if spec.noise_std > 0:
        points = points + rng.normal(0.0, spec.noise_std, size=points.shape)
    return PointCloud(points,
                      np.concatenate(sem),
                      np.concatenate(inst))
