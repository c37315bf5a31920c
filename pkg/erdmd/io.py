"""
File formats for run directories.

Time series and error curves are CSV with a one-line header (time first) or
JSON; models, summaries and metadata are JSON with matrices as row-major
nested arrays. Floats are written with repr(), so values survive a write/read
cycle unchanged.
"""

import csv
import json
import math
from pathlib import Path

import numpy as np
import yaml
from pydantic import ValidationError

from erdmd.core_dmd import LaggedModel, LagSet, TimeSeries
from erdmd.errors import ArtifactError, ConfigError
from erdmd.models import ExperimentConfig
from erdmd.utils.logging import setup_logger

logger = setup_logger("io")

PRESET_DIR = Path(__file__).parent / "presets"
SERIES_SUFFIXES = (".csv", ".json")
DT_SEARCH_ULPS = 256


def _num(x: float) -> str:
    return repr(float(x))


def _clean(value):
    # JSON has no NaN/inf
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def _snap_dt(dt: float) -> float:
    return float(f"{dt:.12g}")


def _infer_dt(t: np.ndarray) -> float:
    """
    Spacing that regenerates the time column exactly as t0 + dt·j, which is how
    write_series produced it. The 12-digit decimal is tried first, then the
    floats nearest the mean spacing; a column no spacing reproduces (edited by
    hand, say) gets the rounded mean.
    """
    steps = np.arange(len(t))
    mean = (t[-1] - t[0]) / (len(t) - 1)
    candidates = [_snap_dt(mean), mean]
    below = above = mean
    for _ in range(DT_SEARCH_ULPS):
        below, above = np.nextafter(below, -np.inf), np.nextafter(above, np.inf)
        candidates += [below, above]
    for dt in candidates:
        if dt > 0 and np.array_equal(t[0] + dt * steps, t):
            return float(dt)
    return _snap_dt(mean)


# -------------------------
# JSON
# -------------------------

def write_json(path: Path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_clean(payload), indent=2, sort_keys=True, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    logger.info(f"💾 Wrote {path}")
    return path


def read_json(path: Path):
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing file {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ArtifactError(f"{path} is not valid JSON: {e}")


# -------------------------
# Tables
# -------------------------

def write_rows(path: Path, header: list[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])
    logger.info(f"💾 Wrote {path}")
    return path


def read_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing file {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ArtifactError(f"{path} is empty")
        return header, [row for row in reader if row]


# -------------------------
# Time series
# -------------------------

def write_series(ts: TimeSeries, path: Path, prefix: str = "y") -> Path:
    path = Path(path)
    if path.suffix == ".json":
        return write_json(path, {"t0": ts.t0, "dt": ts.dt, "data": ts.data.tolist()})
    header = ["t"] + [f"{prefix}{i}" for i in range(ts.state_dim)]
    rows = ([t, *col] for t, col in zip(ts.times, ts.data.T))
    return write_rows(path, header, rows)


def read_series(path: Path) -> TimeSeries:
    path = Path(path)
    if path.suffix == ".json":
        payload = read_json(path)
        try:
            return TimeSeries(np.array(payload["data"], dtype=float), payload["dt"], payload.get("t0", 0.0))
        except KeyError as e:
            raise ArtifactError(f"{path} lacks the {e} field")
    header, rows = read_rows(path)
    if len(header) < 2 or header[0] != "t":
        raise ArtifactError(f"{path} must start with a 't' column, got {header[:3]}")
    try:
        table = np.array(rows, dtype=float)
    except ValueError as e:
        raise ArtifactError(f"{path} has non-numeric entries: {e}")
    if table.ndim != 2 or table.shape[0] < 2:
        raise ArtifactError(f"{path} needs at least two samples")
    t = table[:, 0]
    dt = _infer_dt(t)
    return TimeSeries(table[:, 1:].T, dt, t[0])


def find_series(run_dir: Path, stem: str = "series") -> Path | None:
    for suffix in SERIES_SUFFIXES:
        candidate = Path(run_dir) / f"{stem}{suffix}"
        if candidate.exists():
            return candidate
    return None


# -------------------------
# Models
# -------------------------

def model_payload(model: LaggedModel, **meta) -> dict:
    return {
        **meta,
        "state_dim": model.state_dim,
        "lags": list(model.lags),
        "matrices": [K.tolist() for K in model.matrices],
    }


def write_model(model: LaggedModel, path: Path, **meta) -> Path:
    return write_json(path, model_payload(model, **meta))


def read_model(path: Path) -> tuple[LaggedModel, dict]:
    payload = read_json(path)
    try:
        model = LaggedModel(
            state_dim=payload["state_dim"],
            lags=LagSet(tuple(payload["lags"])),
            matrices=tuple(np.array(K, dtype=float) for K in payload["matrices"]),
        )
    except KeyError as e:
        raise ArtifactError(f"{path} lacks the {e} field")
    meta = {k: v for k, v in payload.items() if k not in ("state_dim", "lags", "matrices")}
    return model, meta


# -------------------------
# Experiment configs
# -------------------------

def preset_names() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.json"))


def load_config(ref: str) -> ExperimentConfig:
    """A JSON/YAML file path, or the name of a checked-in preset."""
    path = Path(ref)
    if not path.exists():
        preset = PRESET_DIR / f"{ref}.json"
        if not preset.exists():
            raise ConfigError(
                f"no config file or preset named '{ref}' (presets: {', '.join(preset_names())})"
            )
        path = preset
    text = path.read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text) if path.suffix in (".yaml", ".yml") else json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot parse {path}: {e}")
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"invalid config {path}: {problems}")
