"""
core_dmd.py — Lagged DMD models with arbitrary lag sets
=======================================================
Fits one s×s matrix per chosen lag by least squares, runs the fitted model
closed-loop (reconstruction inside the data, forecasting beyond it), and
analyses the spectrum of the block companion matrix the lags induce.

Column j of every TimeSeries is the state y_j at time t0 + j·dt.
"""

import cmath
from dataclasses import dataclass
from typing import Iterable, Literal, Sequence

import numpy as np
import scipy.linalg

from erdmd.config import settings
from erdmd.errors import (
    ArgumentError,
    DataError,
    DegeneratePencilError,
    DimensionError,
    DivergenceError,
    LagUnderflowError,
    SizeGuardError,
    UnderdeterminedError,
)
from erdmd.utils.logging import setup_logger

logger = setup_logger("core_dmd")

DEFAULT_REL_SVD_TOL = 1e-10

SpectrumSource = Literal["full-companion", "reduced-inner", "reduced-outer"]


# ===========================================================================
# DOMAIN TYPES
# ===========================================================================

@dataclass(frozen=True)
class TimeSeries:
    """An s-dimensional state sampled every dt, one column per sample."""
    data: np.ndarray
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.ndim == 1:
            data = data[np.newaxis, :]
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 2:
            raise DimensionError(
                f"time series needs shape s × (N_T + 1) with s ≥ 1 and N_T ≥ 1, got {data.shape}"
            )
        if not np.all(np.isfinite(data)):
            bad = int(np.argwhere(~np.isfinite(data))[0][1])
            raise DataError(f"time series has non-finite entries (first at column {bad})")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ArgumentError(f"dt must be positive and finite, got {self.dt}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "t0", float(self.t0))

    @property
    def state_dim(self) -> int:
        return self.data.shape[0]

    @property
    def n_steps(self) -> int:
        """N_T: the index of the last column."""
        return self.data.shape[1] - 1

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.data.shape[1])

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * self.n_steps

    def index_of(self, t: float) -> int:
        j = int(round((t - self.t0) / self.dt))
        if j < 0 or j > self.n_steps:
            raise ArgumentError(
                f"time {t} lies outside the series [{self.t0}, {self.t_end}]"
            )
        return j

    def window(self, t_start: float, t_end: float) -> "TimeSeries":
        """Columns with t_start ≤ t ≤ t_end (both snapped to the sample grid)."""
        i0, i1 = self.index_of(t_start), self.index_of(t_end)
        if i1 <= i0:
            raise ArgumentError(f"empty window [{t_start}, {t_end}]")
        return TimeSeries(self.data[:, i0:i1 + 1], self.dt, self.t0 + i0 * self.dt)


@dataclass(frozen=True)
class LagSet:
    """Strictly increasing positive lags, always starting at lag 1."""
    lags: tuple[int, ...]

    def __post_init__(self):
        lags = tuple(int(lag) for lag in self.lags)
        if not lags:
            raise ArgumentError("lag set is empty")
        if lags[0] != 1:
            raise ArgumentError(f"lag 1 must always be chosen, got {list(lags)}")
        if any(b <= a for a, b in zip(lags, lags[1:])):
            raise ArgumentError(f"lags must be strictly increasing, got {list(lags)}")
        object.__setattr__(self, "lags", lags)

    @classmethod
    def of(cls, lags: Iterable[int]) -> "LagSet":
        return cls(tuple(sorted(set(int(lag) for lag in lags))))

    @property
    def max_lag(self) -> int:
        return self.lags[-1]

    def __len__(self) -> int:
        return len(self.lags)

    def __iter__(self):
        return iter(self.lags)

    def __contains__(self, lag) -> bool:
        return lag in self.lags

    def with_lag(self, lag: int) -> "LagSet":
        return LagSet.of(self.lags + (lag,))

    def without_lag(self, lag: int) -> "LagSet":
        if lag == 1:
            raise ArgumentError("lag 1 can never be removed")
        return LagSet(tuple(l for l in self.lags if l != lag))

    def check_max(self, d: int) -> None:
        if self.max_lag > d:
            raise ArgumentError(f"lag {self.max_lag} exceeds the maximum lag d={d}")


@dataclass(frozen=True)
class LaggedModel:
    """y_{j+1} = Σ_k K_{l_k} y_{j+1-l_k}; matrices are ordered like the lags."""
    state_dim: int
    lags: LagSet
    matrices: tuple[np.ndarray, ...]

    def __post_init__(self):
        s = int(self.state_dim)
        # scalars and flat lists are accepted for s = 1 and reshaped
        matrices = tuple(
            np.array(K, dtype=float).reshape(s, s) if np.size(K) == s * s else np.array(K, dtype=float)
            for K in self.matrices
        )
        if len(matrices) != len(self.lags):
            raise DimensionError(
                f"{len(matrices)} matrices for {len(self.lags)} lags"
            )
        for lag, K in zip(self.lags, matrices):
            if K.shape != (self.state_dim, self.state_dim):
                raise DimensionError(
                    f"K_{lag} has shape {K.shape}, expected {(self.state_dim, self.state_dim)}"
                )
            if not np.all(np.isfinite(K)):
                raise DataError(f"K_{lag} has non-finite entries")
            K.setflags(write=False)
        object.__setattr__(self, "state_dim", s)
        object.__setattr__(self, "matrices", matrices)

    def matrix(self, lag: int) -> np.ndarray:
        try:
            return self.matrices[self.lags.lags.index(lag)]
        except ValueError:
            raise ArgumentError(f"lag {lag} is not in the model lags {list(self.lags)}")

    def stacked(self) -> np.ndarray:
        """K(l_c) = (K_{l_N} … K_1): highest lag first, matching the regressor blocks."""
        return np.hstack(self.matrices[::-1])


@dataclass(frozen=True)
class RegressionBlocks:
    targets: np.ndarray
    regressors: np.ndarray
    target_start: int

    @property
    def n_samples(self) -> int:
        return self.targets.shape[1]


@dataclass(frozen=True)
class SpectrumResult:
    eigenvalues: np.ndarray
    source: SpectrumSource

    def __len__(self) -> int:
        return len(self.eigenvalues)


# ===========================================================================
# FITTING
# ===========================================================================

def build_regression(ts: TimeSeries, lags: LagSet, target_start: int) -> RegressionBlocks:
    """
    Align the target block Y_{+,m} with the stacked lagged regressors.

    Column j of the targets is y_{m+j}; the k-th s-row block of the regressors
    holds y_{m+j-l} for the k-th largest lag l.
    """
    if ts.data.size == 0:
        raise DimensionError("empty time series")
    m = int(target_start)
    if m < lags.max_lag:
        raise LagUnderflowError(
            f"target_start={m} is below the largest lag {lags.max_lag}"
        )
    if m > ts.n_steps:
        raise LagUnderflowError(f"target_start={m} is past the last sample N_T={ts.n_steps}")

    Y = ts.data
    end = ts.n_steps + 1
    targets = Y[:, m:end]
    regressors = np.vstack([Y[:, m - lag:end - lag] for lag in reversed(lags.lags)])
    return RegressionBlocks(targets=targets, regressors=regressors, target_start=m)


def _truncated_lstsq(targets: np.ndarray, regressors: np.ndarray, rel_svd_tol: float) -> np.ndarray:
    # Minimum-norm solution of K·regressors ≈ targets through the truncated SVD of
    # the regressors; never forms the normal equations
    try:
        U, sv, Vh = scipy.linalg.svd(regressors, full_matrices=False, check_finite=False)
    except np.linalg.LinAlgError:
        U, sv, Vh = scipy.linalg.svd(regressors, full_matrices=False, check_finite=False,
                                     lapack_driver="gesvd")
    if sv.size == 0 or sv[0] == 0.0:
        return np.zeros((targets.shape[0], regressors.shape[0]))
    keep = sv > rel_svd_tol * sv[0]
    dropped = int(np.count_nonzero(~keep))
    if dropped:
        logger.debug(f"Truncated {dropped} of {sv.size} singular values below {rel_svd_tol:g}·σ_max")
    return ((targets @ Vh[keep].T) / sv[keep]) @ U[:, keep].T


def fit(
    ts: TimeSeries,
    lags: LagSet,
    target_start: int,
    rel_svd_tol: float = DEFAULT_REL_SVD_TOL,
    allow_underdetermined: bool = False,
) -> LaggedModel:
    """
    Least-squares lagged DMD fit over targets y_m … y_{N_T}.

    Returns the minimum-Frobenius-norm K(l_c) with singular values of the
    regressor block below rel_svd_tol·σ_max discarded. Raises
    UnderdeterminedError when there are fewer samples than unknowns per row,
    unless allow_underdetermined is set (the all-lags baseline needs that).
    """
    if not rel_svd_tol > 0:
        raise ArgumentError(f"rel_svd_tol must be positive, got {rel_svd_tol}")
    blocks = build_regression(ts, lags, target_start)
    s = ts.state_dim
    n_unknowns = s * len(lags)
    if blocks.n_samples < n_unknowns:
        if not allow_underdetermined:
            raise UnderdeterminedError(
                f"{blocks.n_samples} samples for {n_unknowns} unknowns per row "
                f"(s={s}, lags={list(lags)})"
            )
        logger.warning(
            f"Underdetermined fit: {blocks.n_samples} samples for {n_unknowns} unknowns, "
            f"returning the minimum-norm solution"
        )
    if not (np.all(np.isfinite(blocks.targets)) and np.all(np.isfinite(blocks.regressors))):
        raise DataError("non-finite values in the regression blocks")

    stacked = _truncated_lstsq(blocks.targets, blocks.regressors, rel_svd_tol)
    n = len(lags)
    matrices = tuple(stacked[:, (n - 1 - i) * s:(n - i) * s] for i in range(n))
    return LaggedModel(state_dim=s, lags=lags, matrices=matrices)


def one_step_predictions(model: LaggedModel, ts: TimeSeries, target_start: int) -> np.ndarray:
    """Open-loop predictions K(l_c)·Y_-(l_c): every step sees true history."""
    blocks = build_regression(ts, model.lags, target_start)
    return model.stacked() @ blocks.regressors


def training_residual(model: LaggedModel, ts: TimeSeries, target_start: int) -> float:
    blocks = build_regression(ts, model.lags, target_start)
    return float(np.linalg.norm(blocks.targets - model.stacked() @ blocks.regressors, "fro"))


# ===========================================================================
# ITERATION
# ===========================================================================

def _lagged_sum(model: LaggedModel, column) -> np.ndarray:
    # Σ_k K_{l_k} column(l_k); the single accumulation shared by every iterator
    out = np.zeros(model.state_dim)
    for lag, K in zip(model.lags, model.matrices):
        out += K @ column(lag)
    return out


def predict_one(model: LaggedModel, history) -> np.ndarray:
    """
    One step of the iterator: Σ_k K_{l_k} y_{j+1-l_k}.

    history is an ordered list of s-vectors, oldest first; its last entry is y_j.
    """
    H = np.asarray(history, dtype=float)
    if H.ndim == 1:
        H = H.reshape(-1, model.state_dim) if model.state_dim > 1 else H[:, np.newaxis]
    if H.shape[1] != model.state_dim:
        raise DimensionError(f"history vectors have size {H.shape[1]}, model expects {model.state_dim}")
    if H.shape[0] < model.lags.max_lag:
        raise LagUnderflowError(
            f"history holds {H.shape[0]} states, lag {model.lags.max_lag} needs more"
        )
    return _lagged_sum(model, lambda lag: H[-lag])


def iterate(model: LaggedModel, seed: np.ndarray, n_steps: int) -> np.ndarray:
    """
    Closed-loop iteration: append n_steps model outputs to the seed columns.

    Returns the raw s × (seed + n_steps) array; a diverging model shows up as
    inf/nan entries rather than an error.
    """
    seed = np.asarray(seed, dtype=float)
    n_seed = seed.shape[1]
    if n_seed < model.lags.max_lag:
        raise LagUnderflowError(
            f"seed has {n_seed} columns, lag {model.lags.max_lag} needs more"
        )
    out = np.empty((model.state_dim, n_seed + n_steps))
    out[:, :n_seed] = seed
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(n_seed, n_seed + n_steps):
            out[:, j] = _lagged_sum(model, lambda lag: out[:, j - lag])
    return out


def closed_loop(
    model: LaggedModel,
    ts: TimeSeries,
    seed_end: int,
    horizon_end: int,
    forecast_steps: int = 0,
) -> np.ndarray:
    """
    Checked closed-loop run behind reconstruct.

    Returns the raw s × (horizon_end + 1 + forecast_steps) array, inf/nan
    columns included, for callers that report divergence instead of failing.
    """
    if seed_end < model.lags.max_lag:
        raise LagUnderflowError(
            f"seed_end={seed_end} is below the largest lag {model.lags.max_lag}"
        )
    if seed_end > ts.n_steps + 1:
        raise ArgumentError(f"seed_end={seed_end} is past the data (N_T={ts.n_steps})")
    if horizon_end > ts.n_steps:
        raise ArgumentError(
            f"horizon_end={horizon_end} exceeds N_T={ts.n_steps}; use forecast_steps to go beyond"
        )
    if horizon_end < seed_end - 1:
        raise ArgumentError(f"horizon_end={horizon_end} ends before seed_end={seed_end}")
    if forecast_steps < 0:
        raise ArgumentError(f"forecast_steps must be non-negative, got {forecast_steps}")

    n_steps = horizon_end + 1 - seed_end + forecast_steps
    return iterate(model, ts.data[:, :seed_end], n_steps)


def reconstruct(
    model: LaggedModel,
    ts: TimeSeries,
    seed_end: int,
    horizon_end: int,
    forecast_steps: int = 0,
) -> TimeSeries:
    """
    Reconstruction, optionally continued as a forecast.

    Columns [0, seed_end) are copied from ts; columns seed_end … horizon_end are
    produced closed-loop (reconstruction, horizon_end ≤ N_T) and the iteration
    continues for forecast_steps further columns past horizon_end (forecasting).
    """
    out = closed_loop(model, ts, seed_end, horizon_end, forecast_steps)
    bad = ~np.all(np.isfinite(out), axis=0)
    if np.any(bad):
        step = int(np.argmax(bad))
        raise DivergenceError(f"closed-loop iteration diverged at column {step}", step=step)
    return TimeSeries(out, ts.dt, ts.t0)


# ===========================================================================
# SPECTRUM
# ===========================================================================

def _guard(n: int) -> None:
    if n > settings.MAX_DENSE_DIM:
        raise SizeGuardError(
            f"dense eigensolve of dimension {n} exceeds the guard {settings.MAX_DENSE_DIM}"
        )


def companion_matrix(model: LaggedModel) -> np.ndarray:
    """
    One-step Koopman approximation K_a acting on (y_{j-L+1}, …, y_j).

    Identity blocks on the block superdiagonal; the bottom block row holds K_l
    in block column L - l, so K_1 is rightmost and K_L leftmost.
    """
    s, L = model.state_dim, model.lags.max_lag
    n = s * L
    A = np.zeros((n, n))
    if L > 1:
        A[:n - s, s:] = np.eye(n - s)
    for lag, K in zip(model.lags, model.matrices):
        c = L - lag
        A[n - s:, c * s:(c + 1) * s] = K
    return A


def full_spectrum(model: LaggedModel) -> SpectrumResult:
    n = model.state_dim * model.lags.max_lag
    _guard(n)
    eigenvalues = scipy.linalg.eigvals(companion_matrix(model), check_finite=False)
    logger.debug(f"Companion spectrum: {n} eigenvalues, max |λ| = {np.abs(eigenvalues).max():.6f}")
    return SpectrumResult(eigenvalues=eigenvalues, source="full-companion")


def eval_char_poly(model: LaggedModel, z: complex) -> complex:
    """p_a(z) = det(Σ_k K_{l_k} z^{L - l_k} - z^L I), L the largest lag."""
    z = complex(z)
    L = model.lags.max_lag
    M = -(z ** L) * np.eye(model.state_dim, dtype=complex)
    for lag, K in zip(model.lags, model.matrices):
        M = M + K * z ** (L - lag)
    return complex(scipy.linalg.det(M))


def char_poly_scale(model: LaggedModel, z: complex) -> float:
    """Magnitude scale for relative residuals of eval_char_poly at z."""
    r = abs(complex(z))
    L = model.lags.max_lag
    term = max([r ** L] + [np.linalg.norm(K, 2) * r ** (L - lag)
                           for lag, K in zip(model.lags, model.matrices)])
    return float(term ** model.state_dim)


def matrix_poly_roots(
    coeffs: Sequence[tuple[int, np.ndarray]],
    monic_leading_degree: int | None = None,
    source: SpectrumSource = "reduced-inner",
) -> SpectrumResult:
    """
    All roots of det(Σ A_d z^d [- z^m I]).

    Block-companion linearisation; a standard eigensolve when the leading block
    is well conditioned, the generalized pencil otherwise (infinite
    eigenvalues are dropped). A common factor z^p contributes p·s zero roots.
    """
    if not coeffs:
        raise ArgumentError("matrix polynomial has no coefficients")
    blocks: dict[int, np.ndarray] = {}
    s = None
    for degree, matrix in coeffs:
        degree = int(degree)
        if degree < 0:
            raise ArgumentError(f"negative degree {degree}")
        A = np.atleast_2d(np.asarray(matrix, dtype=float))
        if A.shape[0] != A.shape[1] or (s is not None and A.shape[0] != s):
            raise DimensionError(f"coefficient of degree {degree} has shape {A.shape}")
        s = A.shape[0]
        blocks[degree] = blocks.get(degree, np.zeros((s, s))) + A
    if monic_leading_degree is not None:
        m = int(monic_leading_degree)
        if m < 0:
            raise ArgumentError(f"negative monic degree {m}")
        blocks[m] = blocks.get(m, np.zeros((s, s))) - np.eye(s)
    if len(blocks) < 2:
        raise ArgumentError("matrix polynomial needs at least two distinct degrees")

    low, high = min(blocks), max(blocks)
    D = high - low
    A = [blocks.get(low + i, np.zeros((s, s))) for i in range(D + 1)]
    n = s * D
    _guard(n)

    # A pencil whose determinant vanishes identically has no finite spectrum
    norms = [np.linalg.norm(Ai, 2) for Ai in A]
    sample_points = (0.7 + 0.3j, -0.4 + 1.1j, 1.3 - 0.6j)
    dets = []
    for z in sample_points:
        P = sum(Ai * z ** i for i, Ai in enumerate(A))
        scale = max(nm * abs(z) ** i for i, nm in enumerate(norms)) ** s
        dets.append(abs(scipy.linalg.det(P)) / scale if scale > 0 else 0.0)
    if max(dets) < 1e-13:
        raise DegeneratePencilError("matrix polynomial determinant vanishes identically")

    C = np.zeros((n, n))
    if D > 1:
        C[:n - s, s:] = np.eye(n - s)
    bottom = -np.hstack(A[:-1])
    lead = A[-1]
    if np.linalg.cond(lead) < 1e12:
        C[n - s:, :] = np.linalg.solve(lead, bottom)
        roots = scipy.linalg.eigvals(C, check_finite=False)
    else:
        C[n - s:, :] = bottom
        B = np.eye(n)
        B[n - s:, n - s:] = lead
        roots = scipy.linalg.eigvals(C, B, check_finite=False)
        finite = np.isfinite(roots)
        logger.debug(f"Singular leading block: dropped {int(np.count_nonzero(~finite))} infinite eigenvalues")
        roots = roots[finite]

    if low > 0:
        roots = np.concatenate([roots, np.zeros(low * s, dtype=complex)])
    return SpectrumResult(eigenvalues=roots.astype(complex), source=source)


def nth_roots(z: complex, n: int) -> np.ndarray:
    """All n complex n-th roots of z, principal root first."""
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise ArgumentError(f"n must be a positive integer, got {n}")
    n = int(n)
    z = complex(z)
    r = abs(z) ** (1.0 / n)
    theta = cmath.phase(z) / n
    return r * np.exp(1j * (theta + 2.0 * np.pi * np.arange(n) / n))


def reduced_roots(
    model: LaggedModel,
    terms: Sequence[tuple[int, int]],
    substitution: int = 1,
    monic_degree: int | None = None,
    source: SpectrumSource = "reduced-inner",
) -> SpectrumResult:
    """
    Roots of a reduced characteristic polynomial det(Σ K_lag z̃^degree [- z̃^m I]),
    mapped back through z̃ = z^substitution (every branch is kept).
    """
    coeffs = [(degree, model.matrix(lag)) for lag, degree in terms]
    base = matrix_poly_roots(coeffs, monic_leading_degree=monic_degree, source=source)
    if substitution == 1:
        return base
    roots = np.concatenate([nth_roots(z, substitution) for z in base.eigenvalues])
    return SpectrumResult(eigenvalues=roots, source=source)


def top_pair_inner_roots(model: LaggedModel) -> SpectrumResult:
    """
    Leading-order inner roots from the two largest lags l_a > l_b: the pencil
    K_{l_a} + K_{l_b} z̃ with z̃ = z^{l_a - l_b}.
    """
    if len(model.lags) < 2:
        raise ArgumentError("inner approximation needs at least two lags")
    la, lb = model.lags.lags[-1], model.lags.lags[-2]
    return reduced_roots(model, [(la, 0), (lb, 1)], substitution=la - lb, source="reduced-inner")


def lag_matrix_norms(model: LaggedModel) -> list[tuple[int, float]]:
    return [(lag, float(np.linalg.norm(K, "fro"))) for lag, K in zip(model.lags, model.matrices)]
