import math
from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from erdmd.config import settings
from erdmd.core_dmd import DEFAULT_REL_SVD_TOL, LagSet, TimeSeries
from erdmd.errors import ConfigError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ---------------------------------------------------------------------------
# Selection loop
# ---------------------------------------------------------------------------

class ERConfig(_Strict):
    d: int = Field(ge=2)                       # maximum lag
    k_neighbors: int = Field(default=5, ge=1)
    n_shuffles: int = Field(default=100, ge=20)
    shuffle_neighbors: int = Field(default=0, ge=0)  # 0: global permutation
    alpha: float = Field(default=0.05, gt=0.0, lt=1.0)
    rel_svd_tol: float = Field(default=DEFAULT_REL_SVD_TOL, gt=0.0)
    max_lag_count: int | None = Field(default=None, ge=1)
    seed: int = Field(default=0, ge=0)
    eval_window_start: int | None = None       # defaults to d
    workers: int = Field(default_factory=lambda: settings.WORKERS, ge=1)

    @model_validator(mode="after")
    def _window_after_d(self):
        if self.eval_window_start is not None and self.eval_window_start < self.d:
            raise ValueError(f"eval_window_start={self.eval_window_start} must be ≥ d={self.d}")
        return self

    @property
    def window_start(self) -> int:
        return self.d if self.eval_window_start is None else self.eval_window_start

    def check_series(self, ts: TimeSeries) -> None:
        if 3 * self.d > ts.n_steps:
            raise ConfigError(f"d={self.d} needs N_T ≥ 3·d, the series has N_T={ts.n_steps}")
        if self.window_start > ts.n_steps:
            raise ConfigError(
                f"eval_window_start={self.window_start} is past the last sample N_T={ts.n_steps}"
            )


class ERDecision(_Strict):
    phase: Literal["build", "prune"]
    candidate: int
    cmi: float          # nats
    quantile: float     # nats
    accepted: bool      # build: lag added; prune: lag removed
    lags_after: list[int]


class ERTrace(_Strict):
    events: list[ERDecision] = []

    def replay(self) -> LagSet:
        """Apply the accepted events to {1}."""
        lags = LagSet((1,))
        for event in self.events:
            if not event.accepted:
                continue
            lags = lags.with_lag(event.candidate) if event.phase == "build" else lags.without_lag(event.candidate)
        return lags


# ---------------------------------------------------------------------------
# Systems
# ---------------------------------------------------------------------------

ODE_DEFAULTS = {
    "lorenz63": {"params": {"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0}, "y0": [1.0, 1.0, 1.0]},
    "rossler": {"params": {"a": 0.1, "b": 0.1, "c": 14.0}, "y0": [1.0, 1.0, 0.0]},
}


class ODESpec(_Strict):
    kind: Literal["lorenz63", "rossler"]
    params: dict[str, float] = {}
    y0: list[float] | None = None
    dt: float = Field(default=0.01, gt=0.0)
    t_span: tuple[float, float] = (0.0, 22.0)

    @property
    def name(self) -> str:
        return self.kind

    @field_validator("t_span")
    @classmethod
    def _ordered(cls, v):
        if not v[1] > v[0]:
            raise ValueError(f"t_end must exceed t_start, got {v}")
        return v

    @model_validator(mode="after")
    def _known_params(self):
        unknown = set(self.params) - set(ODE_DEFAULTS[self.kind]["params"])
        if unknown:
            raise ValueError(f"unknown {self.kind} parameters: {sorted(unknown)}")
        if self.y0 is not None and len(self.y0) != 3:
            raise ValueError(f"y0 must have 3 entries, got {len(self.y0)}")
        return self

    def resolved_params(self) -> dict[str, float]:
        return {**ODE_DEFAULTS[self.kind]["params"], **self.params}

    def resolved_y0(self) -> list[float]:
        return list(self.y0) if self.y0 is not None else list(ODE_DEFAULTS[self.kind]["y0"])

    @property
    def n_steps(self) -> int:
        return int(round((self.t_span[1] - self.t_span[0]) / self.dt))


class KSSpec(_Strict):
    kind: Literal["ks"] = "ks"
    L: float = Field(default=11.0, gt=0.0)
    n_modes: int = 128
    dt: float = Field(default=0.25, gt=0.0)      # snapshot spacing
    substeps: int = Field(default=8, ge=1)       # ETDRK4 steps per snapshot
    t_burn: float = Field(default=10.0, ge=0.0)
    t_final: float | None = None               # defaults to (L/π)^4
    u0: list[float] | None = None
    seed: int = Field(default=0, ge=0)
    noise_amplitude: float = Field(default=0.01, gt=0.0)
    nonlinear: bool = True
    contour_points: int = Field(default=32, ge=4)

    @field_validator("n_modes")
    @classmethod
    def _power_of_two(cls, v):
        if v < 4 or v & (v - 1):
            raise ValueError(f"n_modes must be a power of two ≥ 4, got {v}")
        return v

    @model_validator(mode="after")
    def _u0_on_grid(self):
        if self.u0 is not None and len(self.u0) != self.n_modes:
            raise ValueError(f"u0 has {len(self.u0)} points, the grid has {self.n_modes}")
        return self

    @property
    def nu(self) -> float:
        return (math.pi / self.L) ** 2

    @property
    def resolved_t_final(self) -> float:
        return self.t_final if self.t_final is not None else (self.L / math.pi) ** 4


class LaggedLinearSpec(_Strict):
    kind: Literal["lagged_linear"] = "lagged_linear"
    lags: list[int]
    matrices: list[list[list[float]]]
    n_steps: int = Field(default=500, ge=1)
    seed: int = Field(default=0, ge=0)
    history_scale: float = Field(default=1.0, gt=0.0)
    dt: float = Field(default=1.0, gt=0.0)


class ExternalSpec(_Strict):
    kind: Literal["external"] = "external"
    path: str


SystemSpec = Annotated[
    Union[ODESpec, KSSpec, LaggedLinearSpec, ExternalSpec],
    Field(discriminator="kind"),
]


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

class SpectrumRecipe(_Strict):
    kind: Literal["top_pair", "explicit"] = "explicit"
    source: Literal["reduced-inner", "reduced-outer"] = "reduced-inner"
    terms: list[tuple[int, int]] = []          # (lag, degree)
    substitution: int = Field(default=1, ge=1)
    monic_degree: int | None = Field(default=None, ge=0)

    @model_validator(mode="after")
    def _terms_for_explicit(self):
        if self.kind == "explicit" and not self.terms:
            raise ValueError("explicit recipes need at least one (lag, degree) term")
        return self


class SpectrumConfig(_Strict):
    recipes: list[SpectrumRecipe] = [SpectrumRecipe(kind="top_pair")]


class ExperimentConfig(_Strict):
    name: str
    system: SystemSpec
    fit_window: tuple[float, float] | None = None
    reconstruction_window: tuple[float, float] | None = None
    forecast_steps: int = Field(default=0, ge=0)
    er: ERConfig
    baseline: bool = False
    pod_modes: int = Field(default=12, ge=1)
    spectrum: SpectrumConfig = SpectrumConfig()
    formats: Literal["csv", "json"] = "csv"
    plots: bool = True


# ---------------------------------------------------------------------------
# Run summary
# ---------------------------------------------------------------------------

class LagNorm(_Strict):
    lag: int
    norm: float


class ErrorSeries(_Strict):
    seed_end_time: float
    horizon_end_time: float
    times: list[float]
    abs_error: list[list[float | None]]        # one list per state dimension
    max_reconstruction_error: float | None
    max_forecast_error: float | None


class EigenSummary(_Strict):
    source: str
    count: int
    max_modulus: float | None
    n_outside_unit_circle: int
    values: list[tuple[float, float]]


class RunSummary(_Strict):
    name: str | None
    seed: int | None
    lags: list[int]
    norms: dict[str, list[LagNorm]]
    trace: list[ERDecision]
    errors: dict[str, ErrorSeries]
    baseline_better_fraction: float | None = None
    eigenvalues: list[EigenSummary]
    pod_energy_fraction: float | None = None
    wall_clock: dict[str, float] | None = None
    config: dict | None
    warnings: list[str] = []
