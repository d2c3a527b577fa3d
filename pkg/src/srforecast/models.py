"""Fully connected conditional generator and GAN discriminator."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .dataset import Normalizer

DISC_EPS = 1e-7
LEAKY_SLOPE = 0.01
ACTIVATIONS = ("leaky_relu",)


class LatentSampler:
    """I.i.d. standard normal latent draws from a seeded generator."""

    def __init__(self, latent_dim: int, seed: int | None = 0):
        if latent_dim < 0:
            raise ValueError(f"latent_dim must be >= 0, got {latent_dim}")
        self.latent_dim = latent_dim
        self.rng = np.random.default_rng(seed)

    def sample(self, *lead_shape: int) -> np.ndarray:
        return self.rng.standard_normal(lead_shape + (self.latent_dim,))


class MLP:
    """Dense network with leaky-rectifier hidden layers and a linear output layer."""

    def __init__(self, widths, seed: int | None = 0, activation: str = "leaky_relu"):
        widths = [int(w) for w in widths]
        if len(widths) < 3:
            raise ValueError(f"need input, >= 1 hidden and output widths, got {widths}")
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.widths = widths
        self.activation = activation
        rng = np.random.default_rng(seed)
        self.params: list[Node] = []
        for i, (w_in, w_out) in enumerate(zip(widths[:-1], widths[1:])):
            bound = np.sqrt(6.0 / w_in)
            self.params.append(ad.parameter(rng.uniform(-bound, bound, (w_in, w_out)), f"W{i}"))
            self.params.append(ad.parameter(np.zeros(w_out), f"b{i}"))

    @property
    def n_params(self) -> int:
        return sum(p.value.size for p in self.params)

    def __call__(self, x) -> Node:
        h = ad.constant(x)
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            h = ad.matmul(h, self.params[2 * i]) + self.params[2 * i + 1]
            if i < n_layers - 1:
                h = ad.leaky_relu(h, LEAKY_SLOPE)
        return h

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.value.ravel() for p in self.params])

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {flat.size}")
        pos = 0
        for p in self.params:
            n = p.value.size
            p.value = flat[pos : pos + n].reshape(p.value.shape).copy()
            pos += n

    def snapshot(self) -> list[np.ndarray]:
        return [p.value for p in self.params]

    def restore(self, values) -> None:
        for p, v in zip(self.params, values):
            p.value = v


def default_hidden(d: int) -> list[int]:
    return [128] * 5 if d > 1 else [50] * 5


@dataclass
class GeneratorModel:
    k: int
    d: int
    latent_dim: int
    hidden: list = field(default_factory=lambda: [50] * 5)
    seed: int | None = 0
    activation: str = "leaky_relu"
    normalizer: Normalizer | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.k < 1 or self.d < 1 or self.latent_dim < 0:
            raise ValueError(f"invalid generator shape k={self.k}, d={self.d}, latent_dim={self.latent_dim}")
        self.net = MLP([self.k * self.d + self.latent_dim, *self.hidden, self.d], self.seed, self.activation)
        if self.normalizer is None:
            self.normalizer = Normalizer.identity(self.d)

    @property
    def params(self) -> list[Node]:
        return self.net.params

    @property
    def widths(self) -> list[int]:
        return self.net.widths

    def forward_batch(self, windows_flat, z) -> Node:
        """Generate one sample per row: windows (n, k*d), latents (n, latent_dim) -> (n, d)."""
        w = ad.constant(windows_flat)
        z = ad.constant(z)
        if w.ndim != 2 or w.shape[1] != self.k * self.d:
            raise ValueError(f"windows must have shape (n, {self.k * self.d}), got {w.shape}")
        if z.shape != (w.shape[0], self.latent_dim):
            raise ValueError(f"latents must have shape ({w.shape[0]}, {self.latent_dim}), got {z.shape}")
        return self.net(ad.concatenate([w, z], axis=1) if self.latent_dim else w)

    def ensemble_batch(self, windows_flat, z) -> Node:
        """windows (B, k*d), latents (B, m, latent_dim) -> ensembles (B, m, d)."""
        w = np.asarray(windows_flat, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        B, m = z.shape[0], z.shape[1]
        rep = np.repeat(w, m, axis=0)
        out = self.forward_batch(rep, z.reshape(B * m, self.latent_dim))
        return ad.reshape(out, (B, m, self.d))


def generator_forward(gen: GeneratorModel, window, z) -> Node:
    window = np.asarray(window, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if window.shape != (gen.k, gen.d):
        raise ValueError(f"window must have shape {(gen.k, gen.d)}, got {window.shape}")
    if z.shape != (gen.latent_dim,):
        raise ValueError(f"latent must have shape ({gen.latent_dim},), got {z.shape}")
    out = gen.forward_batch(window.reshape(1, -1), z.reshape(1, -1))
    return ad.reshape(out, (gen.d,))


def sample_ensemble(gen: GeneratorModel, window, m: int, sampler: LatentSampler) -> Node:
    """m generator draws for one window, shape (m, d), in draw order."""
    if m < 1:
        raise ValueError(f"ensemble size m must be >= 1, got {m}")
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (gen.k, gen.d):
        raise ValueError(f"window must have shape {(gen.k, gen.d)}, got {window.shape}")
    z = sampler.sample(m)
    return gen.forward_batch(np.repeat(window.reshape(1, -1), m, axis=0), z)


@dataclass
class DiscriminatorModel:
    k: int
    d: int
    hidden: list = field(default_factory=lambda: [50] * 3)
    seed: int | None = 0
    activation: str = "leaky_relu"

    def __post_init__(self):
        self.net = MLP([self.k * self.d + self.d, *self.hidden, 1], self.seed, self.activation)

    @property
    def params(self) -> list[Node]:
        return self.net.params

    def forward_batch(self, windows_flat, candidates) -> Node:
        """windows (n, k*d), candidates (n, d) -> probabilities (n,) clamped away from 0 and 1."""
        w = ad.constant(windows_flat)
        c = ad.constant(candidates)
        if w.ndim != 2 or w.shape[1] != self.k * self.d or c.shape != (w.shape[0], self.d):
            raise ValueError(
                f"discriminator inputs must be (n, {self.k * self.d}) and (n, {self.d}), "
                f"got {w.shape} and {c.shape}"
            )
        logit = ad.reshape(self.net(ad.concatenate([w, c], axis=1)), (w.shape[0],))
        return ad.clip(ad.sigmoid(logit), DISC_EPS, 1.0 - DISC_EPS)


def discriminator_forward(disc: DiscriminatorModel, window, candidate) -> Node:
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (disc.k, disc.d):
        raise ValueError(f"window must have shape {(disc.k, disc.d)}, got {window.shape}")
    cand = ad.constant(candidate)
    out = disc.forward_batch(window.reshape(1, -1), ad.reshape(cand, (1, disc.d)))
    return ad.reshape(out, ())


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = "srforecast-checkpoint 1"


def _fmt(values) -> str:
    return " ".join(f"{float(v):.17g}" for v in np.ravel(values))


def save_checkpoint(gen: GeneratorModel, path, disc: DiscriminatorModel | None = None) -> None:
    lines = [
        CHECKPOINT_MAGIC,
        f"widths {' '.join(str(w) for w in gen.widths)}",
        f"latent_dim {gen.latent_dim}",
        f"k {gen.k}",
        f"d {gen.d}",
        f"activation {gen.activation}",
        f"normalizer_mean {_fmt(gen.normalizer.mean)}",
        f"normalizer_std {_fmt(gen.normalizer.std)}",
        f"meta {json.dumps(gen.meta, sort_keys=True)}",
    ]
    flat = gen.net.get_flat()
    lines.append(f"params {flat.size}")
    lines.extend(f"{v:.17g}" for v in flat)
    if disc is not None:
        lines.append(f"disc_widths {' '.join(str(w) for w in disc.net.widths)}")
        dflat = disc.net.get_flat()
        lines.append(f"disc_params {dflat.size}")
        lines.extend(f"{v:.17g}" for v in dflat)
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> GeneratorModel:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    header: dict[str, str] = {}
    i = 1
    while i < len(lines):
        key, _, rest = lines[i].partition(" ")
        header[key] = rest
        i += 1
        if key == "params":
            break
    n = int(header["params"])
    flat = np.array([float(v) for v in lines[i : i + n]])
    widths = [int(w) for w in header["widths"].split()]
    gen = GeneratorModel(
        k=int(header["k"]),
        d=int(header["d"]),
        latent_dim=int(header["latent_dim"]),
        hidden=widths[1:-1],
        seed=None,
        activation=header["activation"],
        normalizer=Normalizer(
            np.array(header["normalizer_mean"].split(), dtype=np.float64),
            np.array(header["normalizer_std"].split(), dtype=np.float64),
        ),
        meta=json.loads(header.get("meta", "{}")),
    )
    if gen.widths != widths:
        raise ValueError(f"{path}: layer widths {widths} inconsistent with k, d, latent_dim")
    gen.net.set_flat(flat)
    return gen
