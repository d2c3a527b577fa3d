"""Differentiable ensemble estimators of multivariate proper scoring rules.

All estimators accept an ensemble of shape ``(..., m, d)`` and an observation
of shape ``(..., d)`` and return one estimate per leading index, i.e. shape
``(...)``. For a single forecast case that is a scalar node.

Conventions follow the statistical-inference literature: the Energy and
Kernel scores here are twice the values used by some forecast-verification
packages.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.spatial.distance import pdist

from . import autodiff as ad
from .autodiff import Node

# direct pairwise subtraction up to this dimension; expanded-norm trick above it
EXPANDED_NORM_MIN_DIM = 64
BANDWIDTH_MAX_POINTS = 5000
GRID_MAX_CELLS = 8192


@dataclass(frozen=True)
class Energy:
    beta: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.beta < 2.0:
            raise ValueError(f"energy score needs 0 < beta < 2, got {self.beta}")


@dataclass(frozen=True)
class KernelGaussian:
    gamma: float

    def __post_init__(self):
        if not self.gamma > 0.0:
            raise ValueError(f"Gaussian kernel bandwidth must be > 0, got {self.gamma}")


VARIOGRAM_ESTIMATORS = ("unbiased", "plugin")


@dataclass(frozen=True)
class Variogram:
    """Variogram score of order ``p``.

    ``estimator="plugin"`` averages the per-member squared residual; its
    expectation exceeds the score by sum_ij w_ij Var|X_i - X_j|^p, so it
    rewards under-dispersed ensembles. ``"unbiased"`` (the default) replaces
    the square of the ensemble mean by a U-statistic over member pairs.
    """

    weights: np.ndarray = field(compare=False)
    p: float = 1.0
    estimator: str = "unbiased"

    def __post_init__(self):
        if self.estimator not in VARIOGRAM_ESTIMATORS:
            raise ValueError(f"variogram estimator must be one of {VARIOGRAM_ESTIMATORS}, got {self.estimator!r}")
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"variogram weights must be a square matrix, got shape {w.shape}")
        if np.any(w < 0):
            raise ValueError("variogram weights must be nonnegative")
        if not np.allclose(w, w.T, rtol=0, atol=1e-12):
            raise ValueError("variogram weights must be symmetric")
        if not self.p > 0:
            raise ValueError(f"variogram order p must be > 0, got {self.p}")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class WeightedSum:
    terms: tuple

    def __post_init__(self):
        terms = tuple((float(w), s) for w, s in self.terms)
        if not terms:
            raise ValueError("weighted sum of scoring rules needs at least one term")
        for w, s in terms:
            if not w > 0:
                raise ValueError(f"weighted-sum weights must be strictly positive, got {w}")
            if not isinstance(s, (Energy, KernelGaussian, Variogram, WeightedSum)):
                raise TypeError(f"not a scoring rule: {s!r}")
        object.__setattr__(self, "terms", terms)


ScoringRuleSpec = Union[Energy, KernelGaussian, Variogram, WeightedSum]


def _check(ens: Node, y: Node, min_members: int) -> tuple[int, int]:
    if ens.ndim < 2:
        raise ValueError(f"ensemble must have shape (..., m, d), got {ens.shape}")
    m, d = ens.shape[-2:]
    if y.shape != ens.shape[:-2] + (d,):
        raise ValueError(f"observation shape {y.shape} does not match ensemble shape {ens.shape}")
    if m < min_members:
        raise ValueError(
            f"ensemble has m={m} members; the U-statistic estimator 1/(m(m-1)) needs m >= 2"
        )
    return m, d


def _pairwise_sq_dist(ens: Node) -> Node:
    """Squared distances between all ordered pairs of members, shape (..., m, m)."""
    d = ens.shape[-1]
    if d > EXPANDED_NORM_MIN_DIM:
        sq = ad.sum(ens * ens, axis=-1)
        gram = ad.matmul(ens, ad.swapaxes(ens, -1, -2))
        out = ad.expand_dims(sq, -1) + ad.expand_dims(sq, -2) - 2.0 * gram
        # rounding can push the diagonal slightly negative
        return ad.leaky_relu(out, slope=0.0)
    diff = ad.expand_dims(ens, -2) - ad.expand_dims(ens, -3)
    return ad.sum(diff * diff, axis=-1)


def _pairwise_dist(ens: Node) -> Node:
    d = ens.shape[-1]
    if d > EXPANDED_NORM_MIN_DIM:
        return ad.power(_pairwise_sq_dist(ens), 0.5)
    diff = ad.expand_dims(ens, -2) - ad.expand_dims(ens, -3)
    return ad.norm(diff, axis=-1)


def energy_score_estimate(ens, y, beta: float = 1.0) -> Node:
    Energy(beta)
    ens, y = ad.constant(ens), ad.constant(y)
    m, _ = _check(ens, y, 2)
    to_obs = ad.norm(ens - ad.expand_dims(y, -2), axis=-1)
    if beta != 1.0:
        to_obs = ad.power(to_obs, beta)
    pair = _pairwise_dist(ens)
    if beta != 1.0:
        pair = ad.power(pair, beta)
    first = ad.sum(to_obs, axis=-1) * (2.0 / m)
    second = ad.sum(ad.sum(pair, axis=-1), axis=-1) * (1.0 / (m * (m - 1)))
    return first - second


def gaussian_kernel(x, y, gamma: float) -> Node:
    x, y = ad.constant(x), ad.constant(y)
    diff = x - y
    return ad.exp(ad.sum(diff * diff, axis=-1) * (-1.0 / (2.0 * gamma * gamma)))


def kernel_score_estimate(ens, y, gamma: float) -> Node:
    KernelGaussian(gamma)
    ens, y = ad.constant(ens), ad.constant(y)
    m, _ = _check(ens, y, 2)
    scale = -1.0 / (2.0 * gamma * gamma)
    k_pair = ad.exp(_pairwise_sq_dist(ens) * scale)
    # the m diagonal entries are exactly exp(0) = 1
    pair_sum = ad.sum(ad.sum(k_pair, axis=-1), axis=-1) - float(m)
    k_obs = gaussian_kernel(ens, ad.expand_dims(y, -2), gamma)
    return pair_sum * (1.0 / (m * (m - 1))) - ad.sum(k_obs, axis=-1) * (2.0 / m)


def _abs_diffs(v: Node, p: float) -> Node:
    """|v_i - v_j|^p over all ordered component pairs, shape (..., d, d)."""
    a = ad.absolute(ad.expand_dims(v, -1) - ad.expand_dims(v, -2))
    return a if p == 1.0 else ad.power(a, p)


def _variogram_weights(weights, d: int, p: float) -> np.ndarray:
    w = np.ones((d, d)) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (d, d):
        raise ValueError(f"variogram weight matrix has shape {w.shape}, expected {(d, d)}")
    Variogram(w, p)
    return w


def variogram_score_estimate(ens, y, p: float = 1.0, weights=None) -> Node:
    """Plug-in estimate (1/m) sum_k sum_ij w_ij (|y_i - y_j|^p - |x_ki - x_kj|^p)^2; valid at m = 1."""
    ens, y = ad.constant(ens), ad.constant(y)
    m, d = _check(ens, y, 1)
    w = _variogram_weights(weights, d, p)
    vy = ad.expand_dims(_abs_diffs(y, p), -3)
    vx = _abs_diffs(ens, p)
    r = vy - vx
    per_member = ad.sum(ad.sum(r * r * w, axis=-1), axis=-1)
    return ad.mean(per_member, axis=-1)


def variogram_score_unbiased(ens, y, p: float = 1.0, weights=None) -> Node:
    """Unbiased estimate: sum_ij w_ij (a_ij^2 - 2 a_ij mean_k v_kij + mean_{j!=k} v_jij v_kij)."""
    ens, y = ad.constant(ens), ad.constant(y)
    m, d = _check(ens, y, 2)
    w = _variogram_weights(weights, d, p)
    a = _abs_diffs(y, p)
    v = _abs_diffs(ens, p)
    s1 = ad.sum(v, axis=-3)
    s2 = ad.sum(v * v, axis=-3)
    cross = (s1 * s1 - s2) * (1.0 / (m * (m - 1)))
    per_pair = a * a - a * s1 * (2.0 / m) + cross
    return ad.sum(ad.sum(per_pair * w, axis=-1), axis=-1)


def weighted_sum_estimate(ens, y, spec: WeightedSum) -> Node:
    if not isinstance(spec, WeightedSum):
        raise TypeError("weighted_sum_estimate needs a WeightedSum spec")
    total = None
    for w, sub in spec.terms:
        part = estimate(sub, ens, y) * w
        total = part if total is None else total + part
    return total


def estimate(spec: ScoringRuleSpec, ens, y) -> Node:
    """Dispatch to the estimator matching ``spec``."""
    if isinstance(spec, Energy):
        return energy_score_estimate(ens, y, spec.beta)
    if isinstance(spec, KernelGaussian):
        return kernel_score_estimate(ens, y, spec.gamma)
    if isinstance(spec, Variogram):
        fn = variogram_score_unbiased if spec.estimator == "unbiased" else variogram_score_estimate
        return fn(ens, y, spec.p, spec.weights)
    if isinstance(spec, WeightedSum):
        return weighted_sum_estimate(ens, y, spec)
    raise TypeError(f"unknown scoring rule spec {spec!r}")


def min_ensemble_size(spec: ScoringRuleSpec) -> int:
    if isinstance(spec, Variogram):
        return 1 if spec.estimator == "plugin" else 2
    if isinstance(spec, WeightedSum):
        return max(min_ensemble_size(s) for _, s in spec.terms)
    return 2


# ---------------------------------------------------------------- tuning helpers

def tune_gaussian_bandwidth(targets, seed: int = 0, max_points: int = BANDWIDTH_MAX_POINTS) -> float:
    """Median pairwise Euclidean distance between targets.

    Sets above ``max_points`` are subsampled uniformly without replacement.
    """
    y = np.asarray(targets, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] < 2:
        raise ValueError("bandwidth tuning needs at least 2 target vectors")
    if y.shape[0] > max_points:
        idx = np.random.default_rng(seed).choice(y.shape[0], size=max_points, replace=False)
        y = y[np.sort(idx)]
    gamma = float(np.median(pdist(y)))
    if gamma <= 0.0:
        raise ValueError("median pairwise distance is 0; cannot use it as a kernel bandwidth")
    return gamma


def balance_sum_weights(rules, reference, targets) -> tuple[float, ...]:
    """Weights giving each rule unit range between ``reference`` ensembles and a perfect forecast.

    ``reference`` is (N, m, d), typically climatological draws, and ``targets``
    is (N, d). The range of a rule is its mean score on the reference minus
    its score for an ensemble sitting exactly on the target.
    """
    ref = np.asarray(reference, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    perfect = np.repeat(y[:, None, :], ref.shape[1], axis=1)
    weights = []
    for rule in rules:
        spread = float(np.mean(estimate(rule, ref, y).value - estimate(rule, perfect, y).value))
        if not spread > 0:
            raise ValueError(f"cannot balance {rule!r}: reference scores no worse than a perfect forecast")
        weights.append(1.0 / spread)
    return tuple(weights)


def build_cyclic_weight_matrix(d: int) -> np.ndarray:
    """w_ij = 1 / (distance between i and j around a ring of d nodes); zero diagonal."""
    if d < 2:
        raise ValueError(f"cyclic weight matrix needs d >= 2, got {d}")
    i = np.arange(d)
    gap = np.abs(i[:, None] - i[None, :])
    dist = np.minimum(gap, d - gap).astype(np.float64)
    w = np.zeros((d, d))
    np.divide(1.0, dist, out=w, where=dist > 0)
    return w


def build_grid_weight_matrix(n_lat: int, n_lon: int, max_cells: int = GRID_MAX_CELLS) -> np.ndarray:
    """Inverse Euclidean grid distance with periodic longitude; zero diagonal.

    Component ``i`` sits at latitude ``i // n_lon`` and longitude ``i % n_lon``.
    """
    if n_lat < 1 or n_lon < 2:
        raise ValueError(f"grid needs n_lat >= 1 and n_lon >= 2, got ({n_lat}, {n_lon})")
    cells = n_lat * n_lon
    if cells > max_cells:
        raise ValueError(
            f"grid of {cells} cells gives a {cells}x{cells} matrix, above the cap of {max_cells} cells"
        )
    lat, lon = np.divmod(np.arange(cells), n_lon)
    dlat = np.abs(lat[:, None] - lat[None, :]).astype(np.float64)
    dlon = np.abs(lon[:, None] - lon[None, :])
    dlon = np.minimum(dlon, n_lon - dlon).astype(np.float64)
    dist = np.sqrt(dlat**2 + dlon**2)
    w = np.zeros((cells, cells))
    np.divide(1.0, dist, out=w, where=dist > 0)
    return w


# ---------------------------------------------------------------- (de)serialisation

def spec_to_dict(spec: ScoringRuleSpec) -> dict:
    if isinstance(spec, Energy):
        return {"kind": "energy", "beta": spec.beta}
    if isinstance(spec, KernelGaussian):
        return {"kind": "kernel", "gamma": spec.gamma}
    if isinstance(spec, Variogram):
        return {"kind": "variogram", "p": spec.p, "estimator": spec.estimator, "weights": spec.weights.tolist()}
    if isinstance(spec, WeightedSum):
        return {
            "kind": "sum",
            "terms": [{"weight": w, "rule": spec_to_dict(s)} for w, s in spec.terms],
        }
    raise TypeError(f"unknown scoring rule spec {spec!r}")


def spec_from_dict(data: dict) -> ScoringRuleSpec:
    kind = data.get("kind")
    if kind == "energy":
        return Energy(float(data.get("beta", 1.0)))
    if kind == "kernel":
        return KernelGaussian(float(data["gamma"]))
    if kind == "variogram":
        return Variogram(
            np.asarray(data["weights"], dtype=np.float64),
            float(data.get("p", 1.0)),
            data.get("estimator", "unbiased"),
        )
    if kind == "sum":
        return WeightedSum(tuple((t["weight"], spec_from_dict(t["rule"])) for t in data["terms"]))
    raise ValueError(f"unknown scoring rule kind {kind!r}")
