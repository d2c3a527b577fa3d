"""Lorenz63 and two-scale Lorenz96 ground-truth generators."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np

from .dataset import TimeSeries


class SimulationError(RuntimeError):
    """Integration produced a non-finite state."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite state at integration step {step}")


def _check_grid(dt: float, record_every: float, burn_in: float, duration: float) -> None:
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    ratio = record_every / dt
    if round(ratio) < 1 or abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
        raise ValueError(f"record_every={record_every} is not an integer multiple of dt={dt}")
    if not (duration > burn_in >= 0):
        raise ValueError(f"need duration > burn_in >= 0, got duration={duration}, burn_in={burn_in}")


@dataclass(frozen=True)
class Lorenz63Params:
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 2.667
    dt: float = 0.01
    record_every: float = 0.3
    burn_in: float = 10.0
    duration: float = 9000.0
    init: tuple = (0.0, 1.0, 1.05)

    def __post_init__(self):
        _check_grid(self.dt, self.record_every, self.burn_in, self.duration)
        if len(self.init) != 3:
            raise ValueError("Lorenz63 initial state must have 3 components")


@dataclass(frozen=True)
class Lorenz96Params:
    K: int = 8
    J: int = 32
    h: float = 1.0
    b: float = 10.0
    c: float = 10.0
    F: float = 20.0
    dt: float = 0.001
    record_every: float = 0.2
    burn_in: float = 2.0
    duration: float = 4000.0
    init: tuple | None = field(default=None)

    def __post_init__(self):
        _check_grid(self.dt, self.record_every, self.burn_in, self.duration)
        if self.K < 4:
            raise ValueError(f"Lorenz96 needs K >= 4, got {self.K}")
        if self.J < 1:
            raise ValueError(f"Lorenz96 needs J >= 1, got {self.J}")
        if self.init is not None and len(self.init) != self.K + self.K * self.J:
            raise ValueError(
                f"Lorenz96 initial state must have K + K*J = {self.K + self.K * self.J} entries, "
                f"got {len(self.init)}"
            )

    def initial_state(self) -> np.ndarray:
        if self.init is not None:
            return np.asarray(self.init, dtype=np.float64)
        s = np.zeros(self.K + self.K * self.J)
        s[0] = 1.0
        s[self.K] = 1.0
        return s


# ---------------------------------------------------------------- drifts

@numba.njit(cache=True)
def _l63_drift(s, sigma, rho, beta, out):
    x, y, z = s[0], s[1], s[2]
    out[0] = sigma * (y - x)
    out[1] = x * (rho - z) - y
    out[2] = x * y - beta * z


@numba.njit(cache=True)
def _l96_drift(s, K, J, h, b, c, F, out):
    n_fast = K * J
    hcb = h * c / b
    cb = c * b
    for k in range(K):
        coupling = 0.0
        for j in range(k * J, (k + 1) * J):
            coupling += s[K + j]
        out[k] = (
            -s[(k - 1) % K] * (s[(k - 2) % K] - s[(k + 1) % K]) - s[k] + F - hcb * coupling
        )
    for j in range(n_fast):
        y_next = s[K + (j + 1) % n_fast]
        y_next2 = s[K + (j + 2) % n_fast]
        y_prev = s[K + (j - 1) % n_fast]
        out[K + j] = -cb * y_next * (y_next2 - y_prev) - c * s[K + j] + hcb * s[j // J]


def lorenz63_drift(state, params: Lorenz63Params) -> np.ndarray:
    s = np.asarray(state, dtype=np.float64)
    if s.shape != (3,):
        raise ValueError(f"Lorenz63 state must have shape (3,), got {s.shape}")
    out = np.empty(3)
    _l63_drift(s, params.sigma, params.rho, params.beta, out)
    return out


def lorenz96_drift(state, params: Lorenz96Params) -> np.ndarray:
    s = np.asarray(state, dtype=np.float64)
    n = params.K + params.K * params.J
    if s.shape != (n,):
        raise ValueError(f"Lorenz96 state must have length K + K*J = {n}, got shape {s.shape}")
    out = np.empty(n)
    _l96_drift(s, params.K, params.J, params.h, params.b, params.c, params.F, out)
    return out


# ---------------------------------------------------------------- generic one-step schemes

def euler_step(state, drift_fn: Callable[[np.ndarray], np.ndarray], dt: float) -> np.ndarray:
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    s = np.asarray(state, dtype=np.float64)
    f = np.asarray(drift_fn(s), dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise FloatingPointError("drift returned a non-finite value")
    return s + dt * f


def rk4_step(state, drift_fn: Callable[[np.ndarray], np.ndarray], dt: float) -> np.ndarray:
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    s = np.asarray(state, dtype=np.float64)
    k1 = np.asarray(drift_fn(s), dtype=np.float64)
    k2 = np.asarray(drift_fn(s + 0.5 * dt * k1), dtype=np.float64)
    k3 = np.asarray(drift_fn(s + 0.5 * dt * k2), dtype=np.float64)
    k4 = np.asarray(drift_fn(s + dt * k3), dtype=np.float64)
    if not all(np.all(np.isfinite(k)) for k in (k1, k2, k3, k4)):
        raise FloatingPointError("drift returned a non-finite value")
    return s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# ---------------------------------------------------------------- trajectory loops

@numba.njit(cache=True)
def _integrate(system, pars, scheme, s0, dt, n_steps, first_record, stride, n_rows, select):
    """Returns (records, failed_step); failed_step is -1 on success."""
    n = s0.shape[0]
    s = s0.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    rec = np.empty((n_rows, select.shape[0]))
    row = 0
    for step in range(n_steps + 1):
        if step >= first_record and (step - first_record) % stride == 0 and row < n_rows:
            for i in range(select.shape[0]):
                rec[row, i] = s[select[i]]
            row += 1
        if step == n_steps:
            break
        # system 0: Lorenz63 (sigma, rho, beta); system 1: Lorenz96 (K, J, h, b, c, F)
        if scheme == 0:
            if system == 0:
                _l63_drift(s, pars[0], pars[1], pars[2], k1)
            else:
                _l96_drift(s, int(pars[0]), int(pars[1]), pars[2], pars[3], pars[4], pars[5], k1)
            for i in range(n):
                s[i] = s[i] + dt * k1[i]
        else:
            if system == 0:
                _l63_drift(s, pars[0], pars[1], pars[2], k1)
            else:
                _l96_drift(s, int(pars[0]), int(pars[1]), pars[2], pars[3], pars[4], pars[5], k1)
            for i in range(n):
                tmp[i] = s[i] + 0.5 * dt * k1[i]
            if system == 0:
                _l63_drift(tmp, pars[0], pars[1], pars[2], k2)
            else:
                _l96_drift(tmp, int(pars[0]), int(pars[1]), pars[2], pars[3], pars[4], pars[5], k2)
            for i in range(n):
                tmp[i] = s[i] + 0.5 * dt * k2[i]
            if system == 0:
                _l63_drift(tmp, pars[0], pars[1], pars[2], k3)
            else:
                _l96_drift(tmp, int(pars[0]), int(pars[1]), pars[2], pars[3], pars[4], pars[5], k3)
            for i in range(n):
                tmp[i] = s[i] + dt * k3[i]
            if system == 0:
                _l63_drift(tmp, pars[0], pars[1], pars[2], k4)
            else:
                _l96_drift(tmp, int(pars[0]), int(pars[1]), pars[2], pars[3], pars[4], pars[5], k4)
            for i in range(n):
                s[i] = s[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        for i in range(n):
            if not np.isfinite(s[i]):
                return rec[:row], step + 1
    return rec, -1


def recording_grid(dt: float, record_every: float, burn_in: float, duration: float) -> tuple[int, int, int]:
    """Integer (first_record_step, stride, n_rows) for a recording schedule.

    Records sit on the ``record_every`` grid anchored at t=0; the first one is
    the earliest grid point at or after ``burn_in``, and
    ``floor((duration - burn_in) / record_every)`` rows are kept.
    """
    stride = int(round(record_every / dt))
    burn_steps = int(math.ceil(burn_in / dt - 1e-9))
    first = -(-burn_steps // stride) * stride
    n_rows = int(math.floor((duration - burn_in) / record_every + 1e-9))
    return first, stride, n_rows


def simulate(params, scheme: str | None = None, select: Sequence[int] | None = None, origin: str | None = None) -> TimeSeries:
    """Integrate a Lorenz system and record the selected state components.

    ``scheme`` defaults to Euler for Lorenz63 and RK4 for Lorenz96; ``select``
    defaults to ``y`` only for Lorenz63 and the K slow variables for Lorenz96.
    """
    if isinstance(params, Lorenz63Params):
        system = 0
        pars = np.array([params.sigma, params.rho, params.beta])
        s0 = np.asarray(params.init, dtype=np.float64)
        scheme = scheme or "euler"
        select = [1] if select is None else select
        label = origin or "lorenz63"
    elif isinstance(params, Lorenz96Params):
        system = 1
        pars = np.array([params.K, params.J, params.h, params.b, params.c, params.F], dtype=np.float64)
        s0 = params.initial_state()
        scheme = scheme or "rk4"
        select = list(range(params.K)) if select is None else select
        label = origin or "lorenz96"
    else:
        raise TypeError(f"unsupported simulator parameters {type(params).__name__}")
    if scheme not in ("euler", "rk4"):
        raise ValueError(f"unknown integration scheme {scheme!r}")
    sel = np.asarray(select, dtype=np.int64)
    if sel.size == 0 or sel.min() < 0 or sel.max() >= s0.shape[0]:
        raise ValueError(f"component selection {list(select)} out of range for state size {s0.shape[0]}")
    first, stride, n_rows = recording_grid(params.dt, params.record_every, params.burn_in, params.duration)
    n_steps = first + (n_rows - 1) * stride
    rec, failed = _integrate(
        system, pars, 0 if scheme == "euler" else 1, s0, float(params.dt),
        n_steps, first, stride, n_rows, sel,
    )
    if failed >= 0:
        raise SimulationError(failed)
    return TimeSeries(rec, dt_record=params.record_every, origin=label)


PRESETS = {
    "lorenz63-paper": Lorenz63Params(),
    "lorenz96-paper": Lorenz96Params(),
    # reduced-length variant of the Lorenz96 protocol for desk-scale runs
    "lorenz96-reduced": Lorenz96Params(duration=1000.0),
}


def simulate_preset(name: str, **overrides) -> TimeSeries:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown simulator preset {name!r}; choose from {sorted(PRESETS)}") from None
    params = type(base)(**{**base.__dict__, **overrides}) if overrides else base
    return simulate(params, origin=name)
