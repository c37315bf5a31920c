"""
erdmd.py — entropic-regression lag selection
============================================
INITIALIZE → BUILD → PRUNE. Starting from lag 1, BUILD adds the candidate lag
whose model prediction carries the most information about the future beyond
what the current model already predicts, as long as that information passes a
shuffle test. PRUNE then drops chosen lags whose contribution is no longer
distinguishable from zero.

Every fit and every information estimate uses the same targets
y_m … y_{N_T} with m = eval_window_start (default d).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from erdmd.core_dmd import (
    LaggedModel,
    LagSet,
    TimeSeries,
    build_regression,
    fit,
    one_step_predictions,
)
from erdmd.infotheory import (
    SampleCloud,
    SignificanceResult,
    conditional_mutual_information,
    shuffle_significance,
)
from erdmd.models import ERConfig, ERDecision, ERTrace
from erdmd.utils.logging import setup_logger

logger = setup_logger("erdmd")

_PHASE_IDS = {"build": 1, "prune": 2}
COINCIDENCE_TOL = 1e-10


# -------------------------
# State
# -------------------------

@dataclass(frozen=True)
class ERState:
    chosen: LagSet
    remaining: frozenset
    model: LaggedModel
    round_index: int = 0


@dataclass(frozen=True)
class ERResult:
    model: LaggedModel
    lags: LagSet
    trace: ERTrace


def round_seed(cfg: ERConfig, phase: str, round_index: int) -> int:
    """Shuffle seed for one BUILD/PRUNE round, derived from (seed, phase, round)."""
    seq = np.random.SeedSequence([cfg.seed, _PHASE_IDS[phase], round_index])
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def _map(fn, items: list, workers: int) -> list:
    # results come back in input order whatever the pool width
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _cloud(block: np.ndarray) -> SampleCloud:
    return SampleCloud.from_columns(block)


def _coincide(x: np.ndarray, z: np.ndarray) -> bool:
    return np.linalg.norm(x - z) <= COINCIDENCE_TOL * max(np.linalg.norm(z), np.finfo(float).tiny)


def _information(x: np.ndarray, y: np.ndarray, z: np.ndarray, k: int) -> float:
    # predictions that coincide with the conditioning ones add nothing
    if _coincide(x, z):
        return 0.0
    return conditional_mutual_information(_cloud(x), _cloud(y), _cloud(z), k)


def _significance(x, y, z, cfg: ERConfig, phase: str, round_index: int) -> SignificanceResult:
    if _coincide(x, z):
        return SignificanceResult(0.0, 0.0, cfg.n_shuffles, cfg.alpha, False)
    return shuffle_significance(
        _cloud(x), _cloud(y), _cloud(z),
        k=cfg.k_neighbors,
        n_shuffles=cfg.n_shuffles,
        alpha=cfg.alpha,
        seed=round_seed(cfg, phase, round_index),
        workers=cfg.workers,
        shuffle_neighbors=cfg.shuffle_neighbors,
    )


# -------------------------
# Initialize
# -------------------------

def initialize(ts: TimeSeries, cfg: ERConfig) -> ERState:
    cfg.check_series(ts)
    chosen = LagSet((1,))
    model = fit(ts, chosen, cfg.window_start, cfg.rel_svd_tol)
    remaining = frozenset(range(2, cfg.d + 1))
    logger.info(
        f"🚀 ERDMD start: s={ts.state_dim}, N_T={ts.n_steps}, d={cfg.d}, "
        f"window starts at m={cfg.window_start}, {len(remaining)} candidate lags"
    )
    return ERState(chosen=chosen, remaining=remaining, model=model)


# -------------------------
# Build
# -------------------------

def build_step(ts: TimeSeries, cfg: ERConfig, state: ERState) -> tuple[ERState, ERDecision | None, bool]:
    """
    One BUILD round. Returns (state', event, done); event is None when nothing
    was tested (no candidates left or the lag-count cap reached).
    """
    if not state.remaining:
        return state, None, True
    if cfg.max_lag_count is not None and len(state.chosen) >= cfg.max_lag_count:
        logger.info(f"⏹️ BUILD stopped at the lag-count cap {cfg.max_lag_count}")
        return state, None, True

    m = cfg.window_start
    target = build_regression(ts, state.chosen, m).targets
    current = one_step_predictions(state.model, ts, m)

    def score(lag: int):
        model = fit(ts, state.chosen.with_lag(lag), m, cfg.rel_svd_tol)
        prediction = one_step_predictions(model, ts, m)
        cmi = _information(prediction, target, current, cfg.k_neighbors)
        logger.debug(f"BUILD candidate {lag}: CMI={cmi:.5f}")
        return model, prediction, cmi

    candidates = sorted(state.remaining)
    scored = _map(score, candidates, cfg.workers)
    # ties go to the smallest lag
    best = int(np.argmax([cmi for _, _, cmi in scored]))
    lag, (model, prediction, _) = candidates[best], scored[best]

    result = _significance(prediction, target, current, cfg, "build", state.round_index)

    if not result.significant:
        logger.info(
            f"⏹️ BUILD stops: best lag {lag} CMI={result.observed_cmi:.5f} "
            f"≤ shuffle quantile {result.shuffle_quantile:.5f}"
        )
        event = ERDecision(
            phase="build", candidate=lag, cmi=result.observed_cmi,
            quantile=result.shuffle_quantile, accepted=False, lags_after=list(state.chosen),
        )
        return replace(state, round_index=state.round_index + 1), event, True

    chosen = state.chosen.with_lag(lag)
    logger.info(
        f"✅ BUILD accepts lag {lag}: CMI={result.observed_cmi:.5f} "
        f"> {result.shuffle_quantile:.5f} → lags {list(chosen)}"
    )
    event = ERDecision(
        phase="build", candidate=lag, cmi=result.observed_cmi,
        quantile=result.shuffle_quantile, accepted=True, lags_after=list(chosen),
    )
    new_state = ERState(
        chosen=chosen,
        remaining=state.remaining - {lag},
        model=model,
        round_index=state.round_index + 1,
    )
    return new_state, event, not new_state.remaining


# -------------------------
# Prune
# -------------------------

def prune_step(ts: TimeSeries, cfg: ERConfig, state: ERState) -> tuple[ERState, ERDecision | None, bool]:
    """One PRUNE round; lag 1 is never a candidate."""
    if len(state.chosen) < 2:
        return state, None, True

    m = cfg.window_start
    target = build_regression(ts, state.chosen, m).targets
    full = one_step_predictions(state.model, ts, m)

    def score(lag: int):
        model = fit(ts, state.chosen.without_lag(lag), m, cfg.rel_svd_tol)
        reduced = one_step_predictions(model, ts, m)
        cmi = _information(full, target, reduced, cfg.k_neighbors)
        logger.debug(f"PRUNE candidate {lag}: CMI={cmi:.5f}")
        return model, reduced, cmi

    candidates = list(state.chosen)[1:]
    scored = _map(score, candidates, cfg.workers)
    weakest = int(np.argmin([cmi for _, _, cmi in scored]))
    lag, (model, reduced, _) = candidates[weakest], scored[weakest]

    result = _significance(full, target, reduced, cfg, "prune", state.round_index)

    if result.significant:
        logger.info(
            f"⏹️ PRUNE stops: weakest lag {lag} still informative "
            f"(CMI={result.observed_cmi:.5f} > {result.shuffle_quantile:.5f})"
        )
        event = ERDecision(
            phase="prune", candidate=lag, cmi=result.observed_cmi,
            quantile=result.shuffle_quantile, accepted=False, lags_after=list(state.chosen),
        )
        return replace(state, round_index=state.round_index + 1), event, True

    chosen = state.chosen.without_lag(lag)
    logger.info(
        f"✂️ PRUNE removes lag {lag}: CMI={result.observed_cmi:.5f} "
        f"≤ {result.shuffle_quantile:.5f} → lags {list(chosen)}"
    )
    event = ERDecision(
        phase="prune", candidate=lag, cmi=result.observed_cmi,
        quantile=result.shuffle_quantile, accepted=True, lags_after=list(chosen),
    )
    new_state = ERState(
        chosen=chosen,
        remaining=state.remaining | {lag},
        model=model,
        round_index=state.round_index + 1,
    )
    return new_state, event, len(chosen) < 2


# -------------------------
# Full run
# -------------------------

def run(ts: TimeSeries, cfg: ERConfig) -> ERResult:
    state = initialize(ts, cfg)
    events: list[ERDecision] = []

    for step in (build_step, prune_step):
        done = False
        while not done:
            state, event, done = step(ts, cfg, state)
            if event is not None:
                events.append(event)

    model = fit(ts, state.chosen, cfg.window_start, cfg.rel_svd_tol)
    trace = ERTrace(events=events)
    logger.info(f"🏁 ERDMD finished: lags {list(state.chosen)} after {len(events)} decisions")
    return ERResult(model=model, lags=state.chosen, trace=trace)


def fit_baseline(ts: TimeSeries, cfg: ERConfig) -> LaggedModel:
    """All-lags HODMD model on {1..d}, fitted over the same targets as ERDMD."""
    cfg.check_series(ts)
    lags = LagSet(tuple(range(1, cfg.d + 1)))
    logger.info(f"📐 Fitting the all-lags baseline with {cfg.d} lags")
    return fit(ts, lags, cfg.window_start, cfg.rel_svd_tol, allow_underdetermined=True)
