"""
systems.py — data generators
============================
Lorenz-63 and Rössler trajectories (classical RK4), the Kuramoto–Sivashinsky
field (Fourier pseudo-spectral + ETDRK4), POD reduction of the field, and
ground-truth lagged linear recurrences.
"""

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from erdmd.core_dmd import LaggedModel, LagSet, TimeSeries, iterate
from erdmd.errors import ArgumentError, DimensionError, DivergenceError, RankError
from erdmd.models import KSSpec, ODESpec
from erdmd.utils.logging import setup_logger

logger = setup_logger("systems")

RHS = Callable[[float, np.ndarray], np.ndarray]


# ===========================================================================
# ODES
# ===========================================================================

def lorenz63_rhs(sigma: float, rho: float, beta: float) -> RHS:
    def rhs(t, y):
        x, v, z = y
        return np.array([sigma * (v - x), x * (rho - z) - v, x * v - beta * z])
    return rhs


def rossler_rhs(a: float, b: float, c: float) -> RHS:
    def rhs(t, y):
        x, v, z = y
        return np.array([-v - z, x + a * v, b + z * (x - c)])
    return rhs


_RHS_FACTORIES = {"lorenz63": lorenz63_rhs, "rossler": rossler_rhs}


def rk4_trajectory(rhs: RHS, y0: Sequence[float], dt: float, n_steps: int, t0: float = 0.0) -> TimeSeries:
    """Classical fixed-step RK4; returns n_steps + 1 samples starting at y0."""
    if not dt > 0:
        raise ArgumentError(f"dt must be positive, got {dt}")
    if n_steps < 1:
        raise ArgumentError(f"n_steps must be at least 1, got {n_steps}")
    y = np.array(y0, dtype=float)
    out = np.empty((y.size, n_steps + 1))
    out[:, 0] = y
    t = t0
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(1, n_steps + 1):
            k1 = rhs(t, y)
            k2 = rhs(t + dt / 2, y + dt / 2 * k1)
            k3 = rhs(t + dt / 2, y + dt / 2 * k2)
            k4 = rhs(t + dt, y + dt * k3)
            y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(y)):
                raise DivergenceError(f"RK4 state became non-finite at step {j}", step=j)
            out[:, j] = y
            t = t0 + j * dt
    return TimeSeries(out, dt, t0)


def integrate_rk4(spec: ODESpec) -> TimeSeries:
    params = spec.resolved_params()
    rhs = _RHS_FACTORIES[spec.kind](**params)
    logger.info(
        f"🌀 Integrating {spec.kind} {params} on t ∈ [{spec.t_span[0]}, {spec.t_span[1]}] "
        f"with dt={spec.dt} ({spec.n_steps} steps)"
    )
    return rk4_trajectory(rhs, spec.resolved_y0(), spec.dt, spec.n_steps, spec.t_span[0])


# ===========================================================================
# KURAMOTO–SIVASHINSKY
# ===========================================================================

def ks_grid(n_modes: int) -> np.ndarray:
    """Collocation points on [0, 2π)."""
    return 2.0 * np.pi * np.arange(n_modes) / n_modes


def ks_linear_symbol(n_modes: int, nu: float) -> np.ndarray:
    """k² − νk⁴ for the rfft wavenumbers 0 … K/2."""
    k = np.arange(n_modes // 2 + 1, dtype=float)
    return k ** 2 - nu * k ** 4


def etdrk4_coefficients(lin: np.ndarray, dt: float, n_points: int = 32):
    """
    ETDRK4 weights (Q, f1, f2, f3) for a diagonal linear operator.

    The φ-functions are averaged over n_points on a unit circle around each
    dt·λ, which avoids the cancellation of the closed forms near λ = 0.
    """
    r = np.exp(2j * np.pi * (np.arange(n_points) + 0.5) / n_points)
    lr = dt * lin[:, None] + r[None, :]
    elr = np.exp(lr)
    q = dt * np.mean((np.exp(lr / 2) - 1) / lr, axis=1).real
    f1 = dt * np.mean((-4 - lr + elr * (4 - 3 * lr + lr ** 2)) / lr ** 3, axis=1).real
    f2 = dt * np.mean((2 + lr + elr * (lr - 2)) / lr ** 3, axis=1).real
    f3 = dt * np.mean((-4 - 3 * lr - lr ** 2 + elr * (4 - lr)) / lr ** 3, axis=1).real
    return q, f1, f2, f3


def ks_initial_field(spec: KSSpec) -> np.ndarray:
    if spec.u0 is not None:
        return np.array(spec.u0, dtype=float)
    # small seeded noise with the mean removed
    rng = np.random.default_rng(spec.seed)
    u0 = spec.noise_amplitude * rng.standard_normal(spec.n_modes)
    return u0 - u0.mean()


def integrate_ks_etdrk4(spec: KSSpec) -> TimeSeries:
    """
    u_t + u_xx + ν u_xxxx + u u_x = 0 on [0, 2π), ν = (π/L)².

    Returns the K × n field sampled every dt after the burn-in, first column at
    t = t_burn. Each snapshot interval is covered by `substeps` ETDRK4 steps.
    """
    K, dt, substeps = spec.n_modes, spec.dt, spec.substeps
    h = dt / substeps
    lin = ks_linear_symbol(K, spec.nu)
    E, E2 = np.exp(h * lin), np.exp(h * lin / 2)
    q, f1, f2, f3 = etdrk4_coefficients(lin, h, spec.contour_points)

    k = np.arange(K // 2 + 1, dtype=float)
    g = -0.5j * k
    g[-1] = 0.0                          # Nyquist mode of an odd derivative
    dealias = k <= K / 3.0               # 2/3 rule

    def nonlinear(v):
        if not spec.nonlinear:
            return np.zeros_like(v)
        u = np.fft.irfft(v, n=K)
        return g * np.fft.rfft(u * u) * dealias

    n_burn = int(round(spec.t_burn / dt))
    n_keep = int(round(spec.resolved_t_final / dt))
    n_steps = (n_burn + n_keep) * substeps
    out = np.empty((K, n_keep + 1))

    v = np.fft.rfft(ks_initial_field(spec))
    logger.info(
        f"🌊 Integrating KS: L={spec.L}, K={K}, dt={dt} in {substeps} substeps, "
        f"burn-in {n_burn} snapshots, {n_keep + 1} kept"
    )
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(n_steps + 1):
            snapshot, offset = divmod(step, substeps)
            if offset == 0 and snapshot >= n_burn:
                out[:, snapshot - n_burn] = np.fft.irfft(v, n=K)
            if step == n_steps:
                break
            Nv = nonlinear(v)
            a = E2 * v + q * Nv
            Na = nonlinear(a)
            b = E2 * v + q * Na
            Nb = nonlinear(b)
            c = E2 * a + q * (2 * Nb - Nv)
            Nc = nonlinear(c)
            v = E * v + Nv * f1 + 2 * (Na + Nb) * f2 + Nc * f3
            if not np.all(np.isfinite(v)):
                raise DivergenceError(f"KS field became non-finite at step {step + 1}", step=step + 1)
    return TimeSeries(out, dt, n_burn * dt)


# ===========================================================================
# POD
# ===========================================================================

@dataclass(frozen=True)
class PODBasis:
    modes: np.ndarray            # K × N_s, orthonormal columns
    singular_values: np.ndarray  # every singular value of the centred snapshots
    energy_fraction: float
    mean_field: np.ndarray

    @property
    def n_modes(self) -> int:
        return self.modes.shape[1]


def pod_reduce(field: TimeSeries, n_modes: int) -> tuple[PODBasis, TimeSeries]:
    """Temporal mean removed, then the leading n_modes left singular vectors."""
    K, n = field.data.shape
    if n_modes < 1 or n_modes > min(K, n):
        raise ArgumentError(f"n_modes must lie in [1, {min(K, n)}], got {n_modes}")
    mean_field = field.data.mean(axis=1)
    centred = field.data - mean_field[:, None]
    U, sv, _ = scipy.linalg.svd(centred, full_matrices=False)
    rank = int(np.count_nonzero(sv > 1e-12 * sv[0])) if sv[0] > 0 else 0
    if rank < n_modes:
        raise RankError(f"snapshot matrix has numerical rank {rank} < {n_modes} requested modes")

    modes = U[:, :n_modes].copy()
    # fix the SVD sign ambiguity: largest entry of each mode is positive
    pivots = np.argmax(np.abs(modes), axis=0)
    modes *= np.sign(modes[pivots, np.arange(n_modes)])
    energy = sv ** 2
    basis = PODBasis(
        modes=modes,
        singular_values=sv,
        energy_fraction=float(energy[:n_modes].sum() / energy.sum()),
        mean_field=mean_field,
    )
    coeffs = TimeSeries(modes.T @ centred, field.dt, field.t0)
    logger.info(f"🧩 POD: {n_modes} modes capture {basis.energy_fraction:.2%} of the energy")
    return basis, coeffs


def pod_reconstruct(basis: PODBasis, coeffs: TimeSeries) -> TimeSeries:
    if coeffs.state_dim != basis.n_modes:
        raise DimensionError(
            f"coefficients have dimension {coeffs.state_dim}, basis has {basis.n_modes} modes"
        )
    field = basis.mean_field[:, None] + basis.modes @ coeffs.data
    return TimeSeries(field, coeffs.dt, coeffs.t0)


# ===========================================================================
# LAGGED LINEAR GROUND TRUTH
# ===========================================================================

def generate_lagged_linear(
    lags: Sequence[int],
    matrices: Sequence,
    n_steps: int,
    seed: int = 0,
    history_scale: float = 1.0,
    dt: float = 1.0,
) -> TimeSeries:
    """
    Data from y_{j+1} = Σ K_l y_{j+1-l}, started from a seeded uniform history
    of max(lags) states in [-history_scale, history_scale]. The series holds the
    history followed by n_steps generated states.
    """
    lag_set = LagSet(tuple(lags))
    first = np.atleast_2d(np.asarray(matrices[0], dtype=float))
    model = LaggedModel(state_dim=first.shape[0], lags=lag_set, matrices=tuple(matrices))
    rng = np.random.default_rng(seed)
    history = rng.uniform(-history_scale, history_scale, size=(model.state_dim, lag_set.max_lag))
    data = iterate(model, history, n_steps)
    bad = ~np.all(np.isfinite(data), axis=0)
    if np.any(bad):
        step = int(np.argmax(bad))
        raise DivergenceError(f"lagged recurrence became non-finite at column {step}", step=step)
    return TimeSeries(data, dt)
