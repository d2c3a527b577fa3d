"""Verification metrics for ensemble forecasts: NRMSE, R^2 and calibration error."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import WindowedDataset
from .models import GeneratorModel

MIN_CALIBRATION_MEMBERS = 20
ALPHA_GRID_SIZE = 100
DEFAULT_M_EVAL = 200
EVAL_CHUNK = 512


def alpha_grid(n: int = ALPHA_GRID_SIZE) -> np.ndarray:
    """n equally spaced credible levels strictly inside (0, 1): (i + 1/2) / n."""
    return (np.arange(n) + 0.5) / n


def _as_2d(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"{name} must have shape (N, d), got {a.shape}")
    return a


def _pair(forecasts, verifications) -> tuple[np.ndarray, np.ndarray]:
    f = _as_2d(forecasts, "point forecasts")
    y = _as_2d(verifications, "verifications")
    if f.shape != y.shape:
        raise ValueError(f"forecast shape {f.shape} does not match verification shape {y.shape}")
    if y.shape[0] < 2:
        raise ValueError("need at least 2 forecast cases")
    return f, y


def nrmse_per_component(point_forecasts, verifications) -> np.ndarray:
    f, y = _pair(point_forecasts, verifications)
    span = y.max(axis=0) - y.min(axis=0)
    if np.any(span <= 0):
        raise ValueError(f"verification range is zero for component {int(np.flatnonzero(span <= 0)[0])}")
    return np.sqrt(np.mean((f - y) ** 2, axis=0)) / span


def nrmse(point_forecasts, verifications) -> float:
    return float(np.mean(nrmse_per_component(point_forecasts, verifications)))


def r_squared_per_component(point_forecasts, verifications) -> np.ndarray:
    f, y = _pair(point_forecasts, verifications)
    ss_tot = np.sum((y - y.mean(axis=0)) ** 2, axis=0)
    if np.any(ss_tot <= 0):
        raise ValueError(f"verification variance is zero for component {int(np.flatnonzero(ss_tot <= 0)[0])}")
    return 1.0 - np.sum((y - f) ** 2, axis=0) / ss_tot


def r_squared(point_forecasts, verifications) -> float:
    return float(np.mean(r_squared_per_component(point_forecasts, verifications)))


@dataclass
class CalibrationCurve:
    alphas: np.ndarray
    coverage: np.ndarray  # (n_alpha, d)

    def errors(self) -> np.ndarray:
        """Per-component median over the grid of |coverage - alpha|."""
        return np.median(np.abs(self.coverage - self.alphas[:, None]), axis=0)


def _ensembles(ensembles, verifications) -> tuple[np.ndarray, np.ndarray]:
    e = np.asarray(ensembles, dtype=np.float64)
    y = _as_2d(verifications, "verifications")
    if e.ndim == 2:
        e = e[:, :, None]
    if e.ndim != 3 or e.shape[0] != y.shape[0] or e.shape[2] != y.shape[1]:
        raise ValueError(f"ensembles must have shape (N, m, d) matching verifications {y.shape}, got {e.shape}")
    return e, y


def coverage_curve(ensembles, verifications, alphas=None) -> CalibrationCurve:
    """Fraction of cases whose verification lies in each central empirical-quantile interval."""
    e, y = _ensembles(ensembles, verifications)
    alphas = alpha_grid() if alphas is None else np.asarray(alphas, dtype=np.float64)
    levels = np.concatenate([(1.0 - alphas) / 2.0, (1.0 + alphas) / 2.0])
    q = np.quantile(e, levels, axis=1)  # (2*n_alpha, N, d)
    n = alphas.size
    lo, hi = q[:n], q[n:]
    inside = (y[None] >= lo) & (y[None] <= hi)
    return CalibrationCurve(alphas, inside.mean(axis=1))


def calibration_error(ensembles, verifications, min_members: int = MIN_CALIBRATION_MEMBERS):
    """Component-averaged median |empirical coverage - nominal level|; returns (error, curve)."""
    e, y = _ensembles(ensembles, verifications)
    if e.shape[1] < min_members:
        raise ValueError(f"calibration error needs at least {min_members} ensemble members, got {e.shape[1]}")
    curve = coverage_curve(e, y)
    return float(np.mean(curve.errors())), curve


def ensemble_stats(ensembles, level: float = 0.99):
    """Per-case mean, median and central ``level`` interval bounds (linear-interpolated quantiles).

    Returns (mean (N, d), median (N, d), bounds (N, d, 2)).
    """
    e = np.asarray(ensembles, dtype=np.float64)
    if e.ndim == 2:
        e = e[:, :, None]
    if e.shape[1] < 1:
        raise ValueError("ensemble needs at least one member")
    lo, hi = np.quantile(e, [(1.0 - level) / 2.0, (1.0 + level) / 2.0], axis=1)
    return e.mean(axis=1), np.median(e, axis=1), np.stack([lo, hi], axis=-1)


@dataclass
class EvaluationReport:
    calibration_error: float
    nrmse: float
    r_squared: float
    per_component: dict = field(default_factory=dict)
    m_eval: int = DEFAULT_M_EVAL
    alpha_grid: str = f"{ALPHA_GRID_SIZE} central levels (i + 0.5) / {ALPHA_GRID_SIZE}"
    method: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def csv_row(self) -> str:
        return f"{self.method},{self.calibration_error:.6f},{self.nrmse:.6f},{self.r_squared:.6f}"


CSV_HEADER = "method,cal_error,nrmse,r2"


def report_from_ensembles(ensembles, verifications, method: str = "") -> EvaluationReport:
    e, y = _ensembles(ensembles, verifications)
    point = e.mean(axis=1)
    cal, curve = calibration_error(e, y)
    nr = nrmse_per_component(point, y)
    r2 = r_squared_per_component(point, y)
    return EvaluationReport(
        calibration_error=cal,
        nrmse=float(nr.mean()),
        r_squared=float(r2.mean()),
        per_component={
            "calibration_error": curve.errors().tolist(),
            "nrmse": nr.tolist(),
            "r_squared": r2.tolist(),
        },
        m_eval=e.shape[1],
        method=method,
    )


def forecast_ensembles(gen: GeneratorModel, data: WindowedDataset, m_eval: int, seed: int = 0) -> np.ndarray:
    """Sample (N, m_eval, d) ensembles in physical units for standardised windows."""
    rng = np.random.default_rng(seed)
    windows = data.flat_windows()
    out = np.empty((len(data), m_eval, data.dim))
    for start in range(0, len(data), EVAL_CHUNK):
        sl = slice(start, start + EVAL_CHUNK)
        z = rng.standard_normal((windows[sl].shape[0], m_eval, gen.latent_dim))
        out[sl] = gen.ensemble_batch(windows[sl], z).value
    return gen.normalizer.invert(out)


def evaluate_model(
    gen: GeneratorModel,
    data: WindowedDataset,
    m_eval: int = DEFAULT_M_EVAL,
    seed: int = 0,
    method: str = "",
    return_ensembles: bool = False,
):
    """Evaluate on ``data`` (standardised with the generator's normaliser); metrics are in physical units."""
    if len(data) == 0:
        raise ValueError("empty test dataset")
    ens = forecast_ensembles(gen, data, m_eval, seed)
    truth = gen.normalizer.invert(data.targets)
    rep = report_from_ensembles(ens, truth, method)
    return (rep, ens, truth) if return_ensembles else rep
