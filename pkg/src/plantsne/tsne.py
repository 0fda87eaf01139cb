"""Exact t-SNE: dense O(N^2) affinities, perplexity calibration and embedding.

High-dimensional similarities are conditional Gaussians normalized per point,
with the bandwidth of each point tuned so that the perplexity 2^H (entropy H
in bits) of its conditional distribution matches a single target.  Joint
affinities are the symmetrized conditionals divided by 2N.  The 2D map is fit
by momentum gradient descent on the Kullback-Leibler divergence between the
joint affinities and a Student-t neighborhood distribution in the plane.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .core import PointCloud
from .errors import InputError, NumericalError

log = logging.getLogger(__name__)

# Probabilities are clamped to this floor inside logarithms only.
EPS = 1e-12


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    n_iter: int = 1000
    learning_rate: float = 200.0
    early_exaggeration_factor: float = 4.0
    early_exaggeration_iters: int = 100
    momentum_initial: float = 0.5
    momentum_final: float = 0.8
    momentum_switch_iter: int = 250
    init_std: float = 1e-4
    seed: int = 0
    perplexity_tol: float = 1e-5  # on log2(perplexity)
    max_bisection_steps: int = 50

    def __post_init__(self):
        if self.perplexity < 1:
            raise InputError("perplexity must be at least 1")
        if self.n_iter < 1 or self.learning_rate <= 0:
            raise InputError("n_iter and learning_rate must be positive")
        if self.early_exaggeration_factor < 1:
            raise InputError("early exaggeration factor must be >= 1")
        if not (0 <= self.early_exaggeration_iters <= self.n_iter):
            raise InputError("early_exaggeration_iters out of range")
        for m in (self.momentum_initial, self.momentum_final):
            if not (0 <= m < 1):
                raise InputError("momenta must lie in [0, 1)")
        if self.perplexity_tol <= 0 or self.max_bisection_steps < 1:
            raise InputError("bad perplexity search settings")

    def replace(self, **kw) -> "TsneConfig":
        from dataclasses import replace
        return replace(self, **kw)


@dataclass(frozen=True)
class AffinityMatrix:
    """Joint probabilities p_ij: symmetric, zero diagonal, summing to one."""

    p: np.ndarray
    sigmas: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise InputError(f"affinity matrix must be square, got {p.shape}")
        n = p.shape[0]
        if np.any(np.diag(p) != 0):
            raise InputError("affinity diagonal must be zero")
        if p.min() < 0:
            raise InputError("affinities must be non-negative")
        scale = max(p.max(), 1.0)
        if np.abs(p - p.T).max() > 1e-12 * scale:
            raise InputError("affinity matrix must be symmetric")
        if n > 1 and abs(p.sum() - 1.0) > 1e-9:
            raise InputError(f"affinities must sum to 1, got {p.sum()!r}")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)
        if self.sigmas is not None:
            s = np.asarray(self.sigmas, dtype=np.float64)
            if s.shape != (n,):
                raise InputError("sigmas must have one entry per point")
            s.setflags(write=False)
            object.__setattr__(self, "sigmas", s)

    def __len__(self) -> int:
        return len(self.p)


@dataclass(frozen=True)
class Embedding:
    y: np.ndarray              # (N, 2)
    kl_history: np.ndarray     # KL against the plain (unexaggerated) P, per iteration
    config: TsneConfig

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        kl = np.asarray(self.kl_history, dtype=np.float64)
        y.setflags(write=False)
        kl.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "kl_history", kl)


@dataclass(frozen=True)
class SigmaSearch:
    sigma: float
    residual: float   # |log2(achieved perplexity) - log2(target)|
    degenerate: bool = False


def conditional_p(distances: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian conditional probabilities over a point's neighbors.

    `distances` holds the Euclidean distances from one point to every other
    point (the self entry is not included).  Computed with a max-shift so the
    largest exponent is always 0.
    """
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 1 or len(d) == 0:
        raise InputError("need distances to at least one neighbor")
    if sigma <= 0:
        raise InputError("sigma must be positive")
    z = -(d * d) / (2.0 * sigma * sigma)
    m = z.max()
    if not np.isfinite(m):
        raise NumericalError("conditional probabilities underflowed "
                             "(non-finite exponents)")
    e = np.exp(z - m)
    return e / e.sum()


def _log2_perplexity(distances: np.ndarray, sigma: float) -> float:
    """log2 of the perplexity 2^H of the conditional distribution at sigma."""
    z = -(distances * distances) / (2.0 * sigma * sigma)
    m = z.max()
    e = np.exp(z - m)
    s = e.sum()
    p = e / s
    # H = -sum p log2 p, evaluated from the shifted exponents for stability.
    log2_p = (z - m - np.log(s)) / np.log(2.0)
    return float(-np.dot(p, log2_p))


def search_sigma(distances: np.ndarray, target_perplexity: float,
                 tol: float = 1e-5, max_steps: int = 50) -> SigmaSearch:
    """Bisect (in log sigma) for the bandwidth hitting the target perplexity.

    Perplexity is monotone non-decreasing in sigma, so plain bisection on
    log2(perp) - log2(target) converges when the target is attainable; when it
    is not (for example all neighbors exactly equidistant), the best sigma and
    its residual are returned instead of failing.
    """
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 1 or len(d) == 0:
        raise InputError("need distances to at least one neighbor")
    if not (1.0 <= target_perplexity <= len(d)):
        raise InputError(f"target perplexity {target_perplexity} outside "
                         f"[1, {len(d)}] for {len(d)} neighbors")
    mean_d = float(d.mean())
    if mean_d == 0.0:
        # All neighbors coincide with the point: distribution is uniform for
        # every sigma.  Return the minimal bandwidth and flag it.
        sigma = 1e-20
        res = abs(np.log2(len(d)) - np.log2(target_perplexity))
        return SigmaSearch(sigma, res, degenerate=True)

    target = float(np.log2(target_perplexity))

    def f(log_sigma: float) -> float:
        return _log2_perplexity(d, float(np.exp(log_sigma))) - target

    lo = float(np.log(1e-20 * mean_d))
    hi = float(np.log(1e20 * mean_d))
    f_lo, f_hi = f(lo), f(hi)
    grow = 0
    while f_lo > 0 and grow < 30:      # target below what the bracket reaches
        lo -= 10.0
        f_lo = f(lo)
        grow += 1
    grow = 0
    while f_hi < 0 and grow < 30:
        hi += 10.0
        f_hi = f(hi)
        grow += 1

    best_sigma, best_res = (np.exp(lo), abs(f_lo))
    if abs(f_hi) < best_res:
        best_sigma, best_res = np.exp(hi), abs(f_hi)
    if f_lo > 0 or f_hi < 0:
        # No sign change: the target is unattainable (discrete ties); report
        # the closest end of the bracket.
        return SigmaSearch(float(best_sigma), float(best_res))

    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        f_mid = f(mid)
        if abs(f_mid) < best_res:
            best_sigma, best_res = np.exp(mid), abs(f_mid)
        if abs(f_mid) <= tol:
            break
        if f_mid < 0:
            lo = mid
        else:
            hi = mid
    return SigmaSearch(float(best_sigma), float(best_res))


def conditional_matrix(points: np.ndarray, perplexity: float,
                       tol: float = 1e-5, max_steps: int = 50
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalized conditional probabilities for every point, plus sigmas."""
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if n < 2:
        raise InputError("need at least two points")
    if not (perplexity < n - 1):
        raise InputError(f"perplexity {perplexity} must be below N-1 = {n - 1}")
    dist = squareform(pdist(pts))
    cond = np.zeros((n, n), dtype=np.float64)
    sigmas = np.empty(n, dtype=np.float64)
    others = np.arange(n)
    worst = 0.0
    for i in range(n):
        d_i = dist[i, others != i]
        found = search_sigma(d_i, perplexity, tol=tol, max_steps=max_steps)
        sigmas[i] = found.sigma
        worst = max(worst, found.residual)
        row = conditional_p(d_i, found.sigma)
        cond[i, :i] = row[:i]
        cond[i, i + 1:] = row[i:]
    if worst > tol:
        log.debug("perplexity calibration residual up to %.3g (log2 scale)", worst)
    return cond, sigmas


def joint_p(conditionals: np.ndarray,
            sigmas: np.ndarray | None = None) -> AffinityMatrix:
    """Symmetrize conditionals into joint affinities p_ij = (p_j|i + p_i|j) / 2N."""
    c = np.asarray(conditionals, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise InputError(f"conditional matrix must be square, got {c.shape}")
    n = c.shape[0]
    rows = c.sum(axis=1)
    if np.abs(rows - 1.0).max() > 1e-6:
        raise InputError("conditional rows must each sum to 1")
    if np.any(np.diag(c) != 0):
        raise InputError("conditional diagonal must be zero")
    p = (c + c.T) / (2.0 * n)
    return AffinityMatrix(p, sigmas)


def affinities(points: np.ndarray, config: TsneConfig = TsneConfig()) -> AffinityMatrix:
    """Full pipeline from coordinates to the joint affinity matrix."""
    cond, sigmas = conditional_matrix(points, config.perplexity,
                                      tol=config.perplexity_tol,
                                      max_steps=config.max_bisection_steps)
    return joint_p(cond, sigmas)


def low_dim_q(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Student-t joint probabilities in the map, and the raw (1+d^2)^-1 kernel."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or len(y) < 2:
        raise InputError("need at least two map points")
    d2 = _sq_dists(y)
    w = 1.0 / (1.0 + d2)
    np.fill_diagonal(w, 0.0)
    z = w.sum()
    if z <= 0:
        raise NumericalError("degenerate map: kernel mass is zero")
    return w / z, w


def _sq_dists(y: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, clipped at zero."""
    sq = np.sum(y * y, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (y @ y.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def kl_divergence(p, q: np.ndarray) -> float:
    """KL(P || Q) over point pairs; terms with p_ij = 0 contribute nothing."""
    pm = p.p if isinstance(p, AffinityMatrix) else np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if pm.shape != q.shape:
        raise InputError("P and Q must have the same shape")
    mask = pm > 0
    ps = pm[mask]
    qs = np.maximum(q[mask], EPS)
    kl = float(np.dot(ps, np.log(np.maximum(ps, EPS)) - np.log(qs)))
    return _checked_kl(kl)


def _checked_kl(kl: float) -> float:
    # True KL is non-negative; tolerate only summation noise around zero.
    if kl < -1e-9:
        raise NumericalError(f"negative KL divergence: {kl}")
    return max(kl, 0.0)


def kl_gradient(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Exact gradient of KL(P || Q(y)) with respect to the map coordinates."""
    q, w = low_dim_q(y)
    return _gradient_from(p, q, w, y)


def _gradient_from(p: np.ndarray, q: np.ndarray, w: np.ndarray,
                   y: np.ndarray) -> np.ndarray:
    pq = (p - q) * w
    return 4.0 * (pq.sum(axis=1)[:, None] * y - pq @ y)


def embed(points, config: TsneConfig = TsneConfig()) -> Embedding:
    """Fit a 2D map of the points by momentum gradient descent on the KL cost.

    The joint affinities are multiplied by the early exaggeration factor for
    the first early_exaggeration_iters updates.  kl_history records, after
    every update, the divergence against the plain affinities, so the curve is
    comparable across both phases.
    """
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points)
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2:
        raise InputError("points must be a 2D array")
    n = len(pts)
    aff = affinities(pts, config)
    p = aff.p

    rng = np.random.default_rng(config.seed)
    y = rng.normal(0.0, config.init_std, size=(n, 2))
    update = np.zeros_like(y)
    kl_history = np.empty(config.n_iter, dtype=np.float64)

    # Sum p log p is constant; per-iteration KL then needs only sum p log q.
    log_p_sum = float(np.sum(p * np.log(np.maximum(p, EPS))))

    p_exag = p * config.early_exaggeration_factor
    for t in range(config.n_iter):
        p_t = p_exag if t < config.early_exaggeration_iters else p
        momentum = (config.momentum_initial if t < config.momentum_switch_iter
                    else config.momentum_final)
        q, w = low_dim_q(y)
        if t > 0:
            kl_history[t - 1] = _kl_from_parts(p, log_p_sum, q)
        grad = _gradient_from(p_t, q, w, y)
        if not np.isfinite(grad).all():
            raise NumericalError(f"non-finite gradient at iteration {t}")
        update = momentum * update - config.learning_rate * grad
        y = y + update
    kl_history[config.n_iter - 1] = _kl_from_parts(p, log_p_sum, low_dim_q(y)[0])
    return Embedding(y, kl_history, config)


def _kl_from_parts(p: np.ndarray, log_p_sum: float, q: np.ndarray) -> float:
    # Zero-p terms multiply a finite clamped log, so they still contribute 0.
    kl = log_p_sum - float(np.sum(p * np.log(np.maximum(q, EPS))))
    return _checked_kl(kl)
