"""
infotheory.py — k-nearest-neighbour information estimates
=========================================================
KSG mutual information (estimator #1, max-norm), its conditional variant and
a permutation (shuffle) significance test. Reported estimates are in nats and
clipped at zero; the shuffle test compares the unclipped values.

Samples are rows of a SampleCloud; when a cloud is built from a time-series
block, time columns become samples and state dimensions become coordinates.
"""

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma

from erdmd.errors import ArgumentError, SampleError
from erdmd.utils.logging import setup_logger

logger = setup_logger("infotheory")

DEFAULT_K = 5
DEFAULT_N_SHUFFLES = 100
DEFAULT_ALPHA = 0.05
JITTER_SCALE = 1e-12


# ===========================================================================
# DOMAIN TYPES
# ===========================================================================

@dataclass(frozen=True)
class SampleCloud:
    """n samples in R^D, one per row. D may be zero (an empty condition)."""
    points: np.ndarray

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        if points.ndim == 1:
            points = points[:, np.newaxis]
        if points.ndim != 2:
            raise SampleError(f"sample cloud must be n × D, got shape {points.shape}")
        if not np.all(np.isfinite(points)):
            raise SampleError("sample cloud has non-finite entries")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    @classmethod
    def from_columns(cls, block: np.ndarray) -> "SampleCloud":
        """Time columns of an s × n block become the n samples."""
        return cls(np.asarray(block, dtype=float).T)

    @classmethod
    def empty(cls, n: int) -> "SampleCloud":
        return cls(np.zeros((n, 0)))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class SignificanceResult:
    observed_cmi: float
    shuffle_quantile: float
    n_shuffles: int
    alpha: float
    significant: bool


# ===========================================================================
# PREPARATION
# ===========================================================================

def _standardize(points: np.ndarray) -> np.ndarray:
    # zero mean, unit variance per coordinate; (numerically) constant ones are dropped
    if points.shape[1] == 0:
        return points
    mean = points.mean(axis=0)
    std = points.std(axis=0)
    scale = np.abs(points).max(axis=0)
    keep = std > 1e-12 * scale
    if not np.all(keep):
        logger.debug(f"Dropping {int(np.count_nonzero(~keep))} zero-variance coordinates")
    return (points[:, keep] - mean[keep]) / std[keep]


def _jitter_duplicates(points: np.ndarray, jitter_seed: int) -> np.ndarray:
    # Repeated rows get a tiny perturbation. The RNG is keyed on the cloud's own
    # content so the result never depends on argument position.
    if points.shape[1] == 0 or len(np.unique(points, axis=0)) == points.shape[0]:
        return points
    digest = int.from_bytes(hashlib.sha256(points.tobytes()).digest()[:8], "little")
    rng = np.random.default_rng([jitter_seed, digest])
    return points + JITTER_SCALE * rng.standard_normal(points.shape)


def _prepare(cloud: SampleCloud, jitter_seed: int) -> np.ndarray:
    return _jitter_duplicates(_standardize(cloud.points), jitter_seed)


def _check_clouds(k: int, *clouds: SampleCloud) -> int:
    if isinstance(k, bool) or int(k) != k or k < 1:
        raise ArgumentError(f"k must be a positive integer, got {k}")
    sizes = {cloud.n for cloud in clouds}
    if len(sizes) != 1:
        raise SampleError(f"sample counts differ: {sorted(sizes)}")
    n = sizes.pop()
    if n < 2 * k + 2:
        raise SampleError(f"{n} samples are too few for k={k} (need at least {2 * k + 2})")
    return n


# ===========================================================================
# ESTIMATORS
# ===========================================================================

def _kth_neighbor_radius(points: np.ndarray, k: int) -> np.ndarray:
    distances, _ = cKDTree(points).query(points, k=k + 1, p=np.inf)
    return distances[:, k]


def _count_within(points: np.ndarray, radii: np.ndarray) -> np.ndarray:
    # strictly closer than the radius, self excluded
    tree = cKDTree(points)
    counts = tree.query_ball_point(points, r=np.nextafter(radii, 0), p=np.inf, return_length=True)
    return np.maximum(np.asarray(counts) - 1, 0)


def _ksg(X: np.ndarray, Y: np.ndarray, k: int) -> float:
    n = X.shape[0]
    eps = _kth_neighbor_radius(np.hstack([X, Y]), k)
    nx = _count_within(X, eps)
    ny = _count_within(Y, eps)
    mi = digamma(k) + digamma(n) - np.mean(digamma(nx + 1) + digamma(ny + 1))
    return float(mi)


def _frenzel_pompe(X: np.ndarray, Y: np.ndarray, Z: np.ndarray, k: int) -> float:
    eps = _kth_neighbor_radius(np.hstack([X, Y, Z]), k)
    nxz = _count_within(np.hstack([X, Z]), eps)
    nyz = _count_within(np.hstack([Y, Z]), eps)
    nz = _count_within(Z, eps)
    cmi = digamma(k) - np.mean(digamma(nxz + 1) + digamma(nyz + 1) - digamma(nz + 1))
    return float(cmi)


def _estimate(X: np.ndarray, Y: np.ndarray, Z: np.ndarray, k: int) -> float:
    # unclipped; small negative values are estimator scatter
    if X.shape[1] == 0 or Y.shape[1] == 0:
        # a constant variable carries no information
        return 0.0
    if Z.shape[1] == 0:
        return _ksg(X, Y, k)
    return _frenzel_pompe(X, Y, Z, k)


def mutual_information(
    x: SampleCloud,
    y: SampleCloud,
    k: int = DEFAULT_K,
    jitter_seed: int = 0,
    clip: bool = True,
) -> float:
    """KSG estimate of I(X;Y) in nats; clip=False keeps negative estimates."""
    _check_clouds(k, x, y)
    X, Y = _prepare(x, jitter_seed), _prepare(y, jitter_seed)
    mi = _estimate(X, Y, np.zeros((X.shape[0], 0)), k)
    return max(0.0, mi) if clip else mi


def conditional_mutual_information(
    x: SampleCloud,
    y: SampleCloud,
    z: SampleCloud,
    k: int = DEFAULT_K,
    jitter_seed: int = 0,
    clip: bool = True,
) -> float:
    """
    I(X;Y|Z) in nats; clip=False keeps negative estimates.

    The neighbour radius comes from the joint (X,Y,Z) space; counts are taken
    in the (X,Z), (Y,Z) and Z marginals. With an empty Z this is exactly
    mutual_information(x, y, k).
    """
    _check_clouds(k, x, y, z)
    X, Y, Z = (_prepare(c, jitter_seed) for c in (x, y, z))
    cmi = _estimate(X, Y, Z, k)
    return max(0.0, cmi) if clip else cmi


def transfer_entropy(source, target, k: int = DEFAULT_K, lag: int = 1) -> float:
    """
    Transfer entropy T_{X→Y} = I(Y_{j+lag}; X_j | Y_j) between two series given
    as s × n arrays (or 1-D for scalars). Used as a directed-coupling check on
    generated data; the lag search itself conditions on model predictions.
    """
    X = np.atleast_2d(np.asarray(source, dtype=float))
    Y = np.atleast_2d(np.asarray(target, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise SampleError(f"series lengths differ: {X.shape[1]} vs {Y.shape[1]}")
    if lag < 1 or lag >= X.shape[1]:
        raise ArgumentError(f"lag must lie in [1, {X.shape[1] - 1}], got {lag}")
    return conditional_mutual_information(
        SampleCloud.from_columns(Y[:, lag:]),
        SampleCloud.from_columns(X[:, :-lag]),
        SampleCloud.from_columns(Y[:, :-lag]),
        k,
    )


# ===========================================================================
# SHUFFLE TEST
# ===========================================================================

def shuffle_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for shuffle `index`; serial and parallel runs agree."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def quantile_rank(n_shuffles: int, alpha: float) -> int:
    """1-indexed ascending order statistic used as the (1 - alpha) shuffle quantile."""
    return min(n_shuffles, math.ceil((1.0 - alpha) * (n_shuffles + 1)))


def condition_neighbors(Z: np.ndarray, shuffle_neighbors: int) -> np.ndarray:
    """Indices of each sample's nearest neighbours in Z (itself included), max-norm."""
    width = min(shuffle_neighbors, Z.shape[0])
    _, neighbors = cKDTree(Z).query(Z, k=width, p=np.inf)
    return np.asarray(neighbors).reshape(Z.shape[0], width)


def restricted_permutation(neighbors: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    Row order in which sample i takes the X value of one of neighbors[i].

    Samples are visited in random order and each draws a random neighbour not
    yet taken; when all of its neighbours are taken the last one tried is
    reused, so the result is a permutation up to those few repeats.
    """
    n, width = neighbors.shape
    order = np.empty(n, dtype=int)
    taken = np.zeros(n, dtype=bool)
    for i in rng.permutation(n):
        candidates = neighbors[i, rng.permutation(width)]
        free = candidates[~taken[candidates]]
        pick = free[0] if free.size else candidates[-1]
        order[i] = pick
        taken[pick] = True
    return order


def shuffle_significance(
    x: SampleCloud,
    y: SampleCloud,
    z: SampleCloud,
    k: int = DEFAULT_K,
    n_shuffles: int = DEFAULT_N_SHUFFLES,
    alpha: float = DEFAULT_ALPHA,
    seed: int = 0,
    workers: int = 1,
    shuffle_neighbors: int = 0,
) -> SignificanceResult:
    """
    Compare I(X;Y|Z) with its null distribution under row permutations of X.

    Only x is shuffled: the association between X and (Y,Z) is destroyed
    while every marginal is kept. With shuffle_neighbors > 0 and a non-empty
    condition, X rows are only exchanged between samples that are close in Z,
    which keeps the X↔Z association as well.

    Null values and the comparison are unclipped; observed_cmi is reported
    clipped at zero, shuffle_quantile as estimated.
    """
    if isinstance(n_shuffles, bool) or int(n_shuffles) != n_shuffles or n_shuffles < 20:
        raise ArgumentError(f"n_shuffles must be an integer ≥ 20, got {n_shuffles}")
    if not 0.0 < alpha < 1.0:
        raise ArgumentError(f"alpha must lie in (0, 1), got {alpha}")
    if isinstance(shuffle_neighbors, bool) or int(shuffle_neighbors) != shuffle_neighbors or shuffle_neighbors < 0:
        raise ArgumentError(f"shuffle_neighbors must be a non-negative integer, got {shuffle_neighbors}")
    n = _check_clouds(k, x, y, z)
    X, Y, Z = (_prepare(c, seed) for c in (x, y, z))
    observed = _estimate(X, Y, Z, k)

    neighbors = condition_neighbors(Z, shuffle_neighbors) if shuffle_neighbors and Z.shape[1] else None

    def shuffled(index: int) -> float:
        rng = shuffle_rng(seed, index)
        perm = rng.permutation(n) if neighbors is None else restricted_permutation(neighbors, rng)
        return _estimate(X[perm], Y, Z, k)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            null = list(pool.map(shuffled, range(n_shuffles)))
    else:
        null = [shuffled(i) for i in range(n_shuffles)]

    quantile = float(np.sort(null)[quantile_rank(n_shuffles, alpha) - 1])
    result = SignificanceResult(
        observed_cmi=max(0.0, observed),
        shuffle_quantile=quantile,
        n_shuffles=int(n_shuffles),
        alpha=float(alpha),
        significant=observed > quantile,
    )
    logger.debug(
        f"Shuffle test: observed={observed:.5f} quantile={quantile:.5f} "
        f"significant={result.significant}"
    )
    return result
