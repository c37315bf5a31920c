"""
cli.py — experiment runner
==========================
    python -m erdmd simulate    --config lorenz_d150 --out runs/lorenz
    python -m erdmd fit         --config lorenz_d150 --out runs/lorenz --baseline
    python -m erdmd reconstruct --config lorenz_d150 --out runs/lorenz
    python -m erdmd spectrum    --config lorenz_d150 --out runs/lorenz
    python -m erdmd report      --out runs/lorenz

Every subcommand writes into the run directory; fit, reconstruct and spectrum
simulate the data first when the directory has no series yet. Errors are
printed to stderr as {"error": code, "detail": message}.
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from erdmd import io
from erdmd.config import settings
from erdmd.core_dmd import (
    TimeSeries,
    closed_loop,
    full_spectrum,
    lag_matrix_norms,
    reduced_roots,
    top_pair_inner_roots,
    training_residual,
)
from erdmd.erdmd import fit_baseline, run
from erdmd.errors import ArgumentError, ConfigError, DegeneratePencilError, ErdmdError
from erdmd.models import (
    EigenSummary,
    ErrorSeries,
    ExperimentConfig,
    ExternalSpec,
    KSSpec,
    LaggedLinearSpec,
    LagNorm,
    ODESpec,
    RunSummary,
)
from erdmd.plots import render_errors, render_norms, render_spectrum
from erdmd.systems import generate_lagged_linear, integrate_ks_etdrk4, integrate_rk4, pod_reduce
from erdmd.utils.logging import setup_logger

logger = setup_logger("cli")

MODEL_NAMES = ("erdmd", "baseline")
MODEL_FILES = {"erdmd": "model.json", "baseline": "baseline_model.json"}


# -------------------------
# Config and data
# -------------------------

def apply_overrides(
    cfg: ExperimentConfig,
    seed: int | None = None,
    baseline: bool = False,
    fmt: str | None = None,
) -> ExperimentConfig:
    update = {}
    if seed is not None:
        if seed < 0 or seed >= 2 ** 64:
            raise ArgumentError(f"seed must be an unsigned 64-bit integer, got {seed}")
        update["er"] = cfg.er.model_copy(update={"seed": seed})
        if isinstance(cfg.system, (KSSpec, LaggedLinearSpec)):
            update["system"] = cfg.system.model_copy(update={"seed": seed})
    if baseline:
        update["baseline"] = True
    if fmt is not None:
        update["formats"] = fmt
    return cfg.model_copy(update=update)


def simulate_system(cfg: ExperimentConfig) -> dict:
    """Generate (or load) the series the experiment analyses."""
    system = cfg.system
    if isinstance(system, ODESpec):
        return {"series": integrate_rk4(system)}
    if isinstance(system, KSSpec):
        field = integrate_ks_etdrk4(system)
        basis, coeffs = pod_reduce(field, cfg.pod_modes)
        return {"series": coeffs, "field": field, "pod": basis}
    if isinstance(system, LaggedLinearSpec):
        series = generate_lagged_linear(
            system.lags, system.matrices, system.n_steps,
            seed=system.seed, history_scale=system.history_scale, dt=system.dt,
        )
        return {"series": series}
    if isinstance(system, ExternalSpec):
        return {"series": io.read_series(Path(system.path))}
    raise ConfigError(f"unsupported system kind {system.kind}")


def _write_config(cfg: ExperimentConfig, out: Path) -> None:
    io.write_json(out / "config.json", cfg.model_dump(mode="json"))


def _series(cfg: ExperimentConfig, out: Path) -> TimeSeries:
    path = io.find_series(out)
    if path is None:
        cmd_simulate(cfg, out)
        path = io.find_series(out)
    return io.read_series(path)


def _fit_series(cfg: ExperimentConfig, series: TimeSeries) -> TimeSeries:
    if cfg.fit_window is None:
        return series
    try:
        return series.window(*cfg.fit_window)
    except ArgumentError as e:
        raise ConfigError(f"fit_window {list(cfg.fit_window)} does not fit the series: {e.detail}")


def _record_timing(out: Path, key: str, seconds: float) -> None:
    if not settings.RECORD_TIMINGS:
        return
    path = out / "timings.json"
    timings = io.read_json(path) if path.exists() else {}
    timings[key] = seconds
    io.write_json(path, timings)


# -------------------------
# simulate
# -------------------------

def cmd_simulate(cfg: ExperimentConfig, out: Path) -> dict[str, Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_config(cfg, out)
    suffix = f".{cfg.formats}"
    started = time.perf_counter()
    data = simulate_system(cfg)
    written = {"series": io.write_series(data["series"], out / f"series{suffix}")}
    if "field" in data:
        written["field"] = io.write_series(data["field"], out / f"field{suffix}", prefix="u")
        basis = data["pod"]
        written["pod"] = io.write_json(out / "pod.json", {
            "n_modes": basis.n_modes,
            "energy_fraction": basis.energy_fraction,
            "singular_values": basis.singular_values.tolist(),
            "mean_field": basis.mean_field.tolist(),
            "modes": basis.modes.tolist(),
        })
    _record_timing(out, "simulate", time.perf_counter() - started)
    series = data["series"]
    logger.info(f"✅ Simulated {cfg.name}: {series.state_dim} × {series.n_steps + 1} samples")
    return written


# -------------------------
# fit
# -------------------------

def _norms(model) -> list[dict]:
    return [{"lag": lag, "norm": norm} for lag, norm in lag_matrix_norms(model)]


def cmd_fit(cfg: ExperimentConfig, out: Path) -> dict:
    out = Path(out)
    series = _series(cfg, out)
    _write_config(cfg, out)
    fit_ts = _fit_series(cfg, series)
    meta = {"dt": fit_ts.dt, "t0": fit_ts.t0, "target_start": cfg.er.window_start}

    started = time.perf_counter()
    result = run(fit_ts, cfg.er)
    _record_timing(out, "fit", time.perf_counter() - started)
    io.write_model(result.model, out / MODEL_FILES["erdmd"], kind="erdmd", **meta)

    norms = {"erdmd": _norms(result.model)}
    residuals = {"erdmd": training_residual(result.model, fit_ts, cfg.er.window_start)}
    if cfg.baseline:
        started = time.perf_counter()
        baseline = fit_baseline(fit_ts, cfg.er)
        _record_timing(out, "baseline", time.perf_counter() - started)
        io.write_model(baseline, out / MODEL_FILES["baseline"], kind="baseline", **meta)
        norms["baseline"] = _norms(baseline)
        residuals["baseline"] = training_residual(baseline, fit_ts, cfg.er.window_start)

    payload = {
        "name": cfg.name,
        "seed": cfg.er.seed,
        "lags": list(result.lags),
        "norms": norms,
        "training_residual": residuals,
        "trace": [event.model_dump(mode="json") for event in result.trace.events],
    }
    io.write_json(out / "fit.json", payload)
    logger.info(f"✅ Fitted {cfg.name}: lags {list(result.lags)}")
    return payload


# -------------------------
# reconstruct
# -------------------------

def _reconstruction_path(out: Path, fmt: str) -> Path:
    return out / f"reconstruction.{fmt}"


def cmd_reconstruct(cfg: ExperimentConfig, out: Path, model_path: Path | None = None) -> dict:
    """
    Closed-loop runs of every available model over the reconstruction window,
    continued forecast_steps past it, with per-dimension absolute errors
    against the data wherever the data reaches.
    """
    out = Path(out)
    series = _series(cfg, out)
    fit_ts = _fit_series(cfg, series)
    offset = series.index_of(fit_ts.t0)

    if model_path is not None:
        models = {"erdmd": io.read_model(model_path)[0]}
    else:
        models = {
            name: io.read_model(out / MODEL_FILES[name])[0]
            for name in MODEL_NAMES
            if (out / MODEL_FILES[name]).exists()
        }
        if "erdmd" not in models:
            raise ConfigError(f"no fitted model in {out}; run `fit` first")

    if cfg.reconstruction_window is not None:
        try:
            seed_end = fit_ts.index_of(cfg.reconstruction_window[0])
            horizon_end = fit_ts.index_of(cfg.reconstruction_window[1])
        except ArgumentError as e:
            raise ConfigError(f"reconstruction_window does not fit the data: {e.detail}")
    else:
        seed_end, horizon_end = cfg.er.window_start, fit_ts.n_steps
    if horizon_end < seed_end:
        raise ConfigError(f"empty reconstruction window: seed_end={seed_end}, horizon_end={horizon_end}")

    n_out = horizon_end + 1 - seed_end + cfg.forecast_steps
    index = np.arange(seed_end, seed_end + n_out)
    times = fit_ts.t0 + fit_ts.dt * index
    forecast = (index > horizon_end).astype(int)
    truth = np.full((series.state_dim, n_out), np.nan)
    known = offset + index <= series.n_steps
    truth[:, known] = series.data[:, offset + index[known]]

    columns = {"t": times, "forecast": forecast}
    for i in range(series.state_dim):
        columns[f"true_y{i}"] = truth[i]
    summary = {}
    for name, model in models.items():
        predicted = closed_loop(model, fit_ts, seed_end, horizon_end, cfg.forecast_steps)[:, seed_end:]
        if not np.all(np.isfinite(predicted)):
            step = int(np.argmax(~np.all(np.isfinite(predicted), axis=0)))
            logger.warning(f"⚠️ {name} closed-loop run diverged at t={times[step]:.6g}")
        with np.errstate(invalid="ignore"):
            error = np.abs(predicted - truth)
        for i in range(series.state_dim):
            columns[f"{name}_y{i}"] = predicted[i]
        for i in range(series.state_dim):
            columns[f"{name}_err_y{i}"] = error[i]
        recon = error[:, forecast == 0]
        ahead = error[:, (forecast == 1) & known]
        summary[name] = {
            "max_reconstruction_error": float(np.max(recon)) if recon.size else None,
            "max_forecast_error": float(np.max(ahead)) if ahead.size else None,
        }

    path = _reconstruction_path(out, cfg.formats)
    if cfg.formats == "json":
        io.write_json(path, {"seed_end": seed_end, "horizon_end": horizon_end,
                             "columns": {k: v.tolist() for k, v in columns.items()}})
    else:
        io.write_rows(path, list(columns), zip(*(v.tolist() for v in columns.values())))
    _write_config(cfg, out)
    logger.info(
        f"✅ Reconstructed {len(models)} model(s) over t ∈ [{times[0]:.6g}, {fit_ts.t0 + fit_ts.dt * horizon_end:.6g}]"
        f" + {cfg.forecast_steps} forecast steps"
    )
    return summary


def read_reconstruction(out: Path) -> dict[str, np.ndarray] | None:
    out = Path(out)
    json_path, csv_path = _reconstruction_path(out, "json"), _reconstruction_path(out, "csv")
    if json_path.exists():
        payload = io.read_json(json_path)
        return {k: np.array(v, dtype=float) for k, v in payload["columns"].items()}
    if csv_path.exists():
        header, rows = io.read_rows(csv_path)
        table = np.array(rows, dtype=float).reshape(len(rows), len(header))
        return {name: table[:, i] for i, name in enumerate(header)}
    return None


# -------------------------
# spectrum
# -------------------------

def cmd_spectrum(cfg: ExperimentConfig, out: Path, model_path: Path | None = None) -> dict:
    out = Path(out)
    model, _ = io.read_model(model_path or out / MODEL_FILES["erdmd"])
    results = [full_spectrum(model)]
    skipped = []
    for recipe in cfg.spectrum.recipes:
        try:
            if recipe.kind == "top_pair":
                results.append(top_pair_inner_roots(model))
            else:
                results.append(reduced_roots(
                    model, recipe.terms,
                    substitution=recipe.substitution,
                    monic_degree=recipe.monic_degree,
                    source=recipe.source,
                ))
        except (ArgumentError, DegeneratePencilError) as e:
            logger.warning(f"⚠️ Skipping {recipe.kind} {recipe.source} recipe: {e.detail}")
            skipped.append(f"{recipe.kind} {recipe.source}: {e.detail}")

    rows = [
        (float(z.real), float(z.imag), result.source)
        for result in results
        for z in result.eigenvalues
    ]
    io.write_rows(out / "spectrum.csv", ["re", "im", "source"], rows)

    counts, max_modulus = {}, {}
    for result in results:
        counts[result.source] = counts.get(result.source, 0) + len(result)
        if len(result):
            top = float(np.abs(result.eigenvalues).max())
            max_modulus[result.source] = max(top, max_modulus.get(result.source, 0.0))
    meta = {
        "lags": list(model.lags),
        "state_dim": model.state_dim,
        "unit_circle": {"center": [0.0, 0.0], "radius": 1.0},
        "counts": counts,
        "max_modulus": max_modulus,
        "skipped": skipped,
    }
    io.write_json(out / "spectrum.json", meta)
    logger.info(f"✅ Spectrum: {counts}")
    return meta


# -------------------------
# report
# -------------------------

def _error_series(columns: dict[str, np.ndarray], name: str) -> ErrorSeries | None:
    keys = sorted((k for k in columns if k.startswith(f"{name}_err_y")), key=lambda k: int(k.rsplit("y", 1)[1]))
    if not keys:
        return None
    t, forecast = columns["t"], columns["forecast"].astype(int)
    err = np.vstack([columns[k] for k in keys])
    recon = err[:, forecast == 0]
    ahead = err[:, forecast == 1]
    # forecast samples past the end of the data have no truth
    ahead = ahead[~np.isnan(ahead)]
    horizon = t[forecast == 0][-1] if np.any(forecast == 0) else t[0]
    return ErrorSeries(
        seed_end_time=float(t[0]),
        horizon_end_time=float(horizon),
        times=t.tolist(),
        abs_error=[[None if not np.isfinite(v) else float(v) for v in row] for row in err],
        max_reconstruction_error=float(np.max(recon)) if recon.size else None,
        max_forecast_error=float(np.max(ahead)) if ahead.size else None,
    )


def _baseline_better_fraction(columns: dict[str, np.ndarray]) -> float | None:
    def sup(name):
        keys = [k for k in columns if k.startswith(f"{name}_err_y")]
        with np.errstate(invalid="ignore"):
            return np.max(np.vstack([columns[k] for k in keys]), axis=0) if keys else None

    ours, theirs = sup("erdmd"), sup("baseline")
    if ours is None or theirs is None:
        return None
    window = columns["forecast"] == 0
    if not np.any(window):
        return None
    return float(np.mean(theirs[window] < ours[window]))


def cmd_report(out: Path) -> RunSummary:
    """Aggregate a run directory into summary.json (+ SVG quick looks)."""
    out = Path(out)
    if not out.is_dir():
        raise ConfigError(f"run directory {out} does not exist")
    warnings = []

    config = io.read_json(out / "config.json") if (out / "config.json").exists() else None
    if config is None:
        warnings.append("config.json missing: summary has no config echo")

    fit = io.read_json(out / "fit.json") if (out / "fit.json").exists() else None
    if fit is None:
        warnings.append("fit.json missing: no lags, norms or trace")
        fit = {"name": None, "seed": None, "lags": [], "norms": {}, "trace": []}

    errors = {}
    better = None
    columns = read_reconstruction(out)
    if columns is None:
        warnings.append("reconstruction file missing: no error series")
    else:
        for name in MODEL_NAMES:
            series = _error_series(columns, name)
            if series is not None:
                errors[name] = series
        better = _baseline_better_fraction(columns)

    eigenvalues = []
    if (out / "spectrum.csv").exists():
        _, rows = io.read_rows(out / "spectrum.csv")
        by_source: dict[str, list[tuple[float, float]]] = {}
        for re, im, source in rows:
            by_source.setdefault(source, []).append((float(re), float(im)))
        for source, values in by_source.items():
            moduli = np.abs(np.array([complex(*v) for v in values]))
            eigenvalues.append(EigenSummary(
                source=source,
                count=len(values),
                max_modulus=float(moduli.max()) if len(values) else None,
                n_outside_unit_circle=int(np.count_nonzero(moduli > 1.0)),
                values=values,
            ))
    else:
        warnings.append("spectrum.csv missing: partial summary without eigenvalues")

    pod = io.read_json(out / "pod.json") if (out / "pod.json").exists() else None
    wall_clock = None
    if settings.RECORD_TIMINGS and (out / "timings.json").exists():
        wall_clock = io.read_json(out / "timings.json")

    summary = RunSummary(
        name=fit["name"] or (config or {}).get("name"),
        seed=fit["seed"],
        lags=fit["lags"],
        norms={name: [LagNorm(**n) for n in ns] for name, ns in fit["norms"].items()},
        trace=fit["trace"],
        errors=errors,
        baseline_better_fraction=better,
        eigenvalues=eigenvalues,
        pod_energy_fraction=pod["energy_fraction"] if pod else None,
        wall_clock=wall_clock,
        config=config,
        warnings=warnings,
    )
    io.write_json(out / "summary.json", summary.model_dump(mode="json"))
    for warning in warnings:
        logger.warning(f"⚠️ {warning}")

    if config is None or config.get("plots", True):
        if errors:
            render_errors(errors, out / "errors.svg")
        if eigenvalues:
            render_spectrum(eigenvalues, out / "spectrum.svg")
        if summary.norms:
            render_norms(summary.norms, out / "norms.svg")
    return summary


# -------------------------
# Entry point
# -------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors take the same JSON path as every other failure
        raise ArgumentError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="erdmd", description="Entropic-regression lagged DMD experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "generate the experiment's time series"),
        ("fit", "select lags and fit the ERDMD model"),
        ("reconstruct", "closed-loop reconstruction and forecast errors"),
        ("spectrum", "companion spectrum and reduced polynomial roots"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="config file (JSON/YAML) or preset name")
        p.add_argument("--out", type=Path, default=None, help="run directory (default runs/<name>)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--baseline", action="store_true", help="also fit the all-lags HODMD model")
        p.add_argument("--format", choices=("csv", "json"), default=None)
        if name in ("reconstruct", "spectrum"):
            p.add_argument("--model", type=Path, default=None, help="model file (default <out>/model.json)")
    report = sub.add_parser("report", help="aggregate a run directory into summary.json")
    report.add_argument("--out", type=Path, required=True)
    return parser


def dispatch(args: argparse.Namespace):
    if args.command == "report":
        return cmd_report(args.out)
    cfg = apply_overrides(io.load_config(args.config), args.seed, args.baseline, args.format)
    out = args.out or Path("runs") / cfg.name
    if args.command == "simulate":
        return cmd_simulate(cfg, out)
    if args.command == "fit":
        return cmd_fit(cfg, out)
    if args.command == "reconstruct":
        return cmd_reconstruct(cfg, out, args.model)
    return cmd_spectrum(cfg, out, args.model)


def main(argv: list[str] | None = None) -> int:
    command = "erdmd"
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        dispatch(args)
    except ErdmdError as e:
        logger.error(f"❌ {command} failed: {e.detail}")
        print(json.dumps(e.to_dict()), file=sys.stderr)
        return 2
    except Exception as e:
        logger.exception(f"❌ {command} crashed")
        print(json.dumps({"error": "internal", "detail": str(e)}), file=sys.stderr)
        return 1
    return 0
