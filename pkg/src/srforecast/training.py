"""Scoring-rule and conditional-GAN training loops with early stopping."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import scoring
from .dataset import WindowedDataset
from .models import DiscriminatorModel, GeneratorModel

log = logging.getLogger(__name__)

DEFAULT_LR_GRID = (1e-2, 3e-3, 1e-3, 3e-4, 1e-4)
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
# validation ensembles are scored in chunks of this many windows to bound memory
VAL_CHUNK = 256


class TrainingDivergence(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    method: str = "sr"  # "sr" or "gan"
    spec: scoring.ScoringRuleSpec | None = None
    m: int = 10
    batch_size: int = 1000
    epochs: int = 1000
    lr: float = 1e-3
    lr_disc: float = 1e-3
    optimizer: str = "adam"
    patience: int = 20
    seed: int = 0
    lr_grid: tuple = DEFAULT_LR_GRID
    lr_disc_grid: tuple = DEFAULT_LR_GRID
    disc_updates: int = 1
    val_m: int | None = None
    gan_val_m: int = 100

    def __post_init__(self):
        if self.method not in ("sr", "gan"):
            raise ValueError(f"method must be 'sr' or 'gan', got {self.method!r}")
        if self.method == "sr":
            if self.spec is None:
                raise ValueError("scoring-rule training needs a scoring rule spec")
            if self.m < max(2, scoring.min_ensemble_size(self.spec)):
                raise ValueError(f"scoring-rule training needs m >= 2 (U-statistics), got m={self.m}")
        elif self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.lr < 0 or self.lr_disc < 0:
            raise ValueError("learning rates must be >= 0")
        if self.disc_updates < 1:
            raise ValueError(f"disc_updates must be >= 1, got {self.disc_updates}")


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_score: list = field(default_factory=list)
    best_epoch: int = 0  # 1-based
    lr: float = 0.0
    lr_disc: float | None = None
    wall_time: float = 0.0
    stopped_early: bool = False
    warnings: list = field(default_factory=list)
    disc_loss: list = field(default_factory=list)
    params: list | None = field(default=None, repr=False)

    @property
    def best_score(self) -> float:
        return self.val_score[self.best_epoch - 1]

    def to_dict(self, include_time: bool = True) -> dict:
        out = asdict(self)
        out.pop("params")
        out["best_score"] = self.best_score if self.val_score else None
        if not include_time:
            out.pop("wall_time")
        return out

    def to_json(self, include_time: bool = True) -> str:
        return json.dumps(self.to_dict(include_time), indent=2, sort_keys=True)


# ---------------------------------------------------------------- optimisers

class SGD:
    def __init__(self, params, lr: float):
        self.params = list(params)
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            g = _grad(p)
            p.value = p.value - self.lr * g


class Adam:
    def __init__(self, params, lr: float, betas=ADAM_BETAS, eps: float = ADAM_EPS):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m1 = [np.zeros_like(p.value) for p in self.params]
        self.m2 = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        grads = [_grad(p) for p in self.params]
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.m1[i] = self.b1 * self.m1[i] + (1.0 - self.b1) * g
            self.m2[i] = self.b2 * self.m2[i] + (1.0 - self.b2) * g * g
            step = self.lr * (self.m1[i] / c1) / (np.sqrt(self.m2[i] / c2) + self.eps)
            p.value = p.value - step


def _grad(p) -> np.ndarray:
    g = np.zeros_like(p.value) if p.grad is None else p.grad
    if not np.all(np.isfinite(g)):
        raise TrainingDivergence(f"non-finite gradient for parameter {p.name or p!r}")
    return g


def make_optimizer(name: str, params, lr: float):
    if name == "adam":
        return Adam(params, lr)
    if name == "sgd":
        return SGD(params, lr)
    raise ValueError(f"unknown optimizer {name!r}")


def optimizer_step(optimizer) -> None:
    optimizer.step()


def _param_norm(params) -> float:
    return float(math.sqrt(sum(float(np.sum(p.value**2)) for p in params)))


# ---------------------------------------------------------------- scoring-rule training

def batch_loss(gen: GeneratorModel, spec, windows_flat, targets, z) -> ad.Node:
    """Batch-averaged scoring-rule estimate; ``z`` has shape (B, m, latent_dim)."""
    ens = gen.ensemble_batch(windows_flat, z)
    return ad.mean(scoring.estimate(spec, ens, targets))


def train_sr_epoch(gen: GeneratorModel, data: WindowedDataset, cfg: TrainConfig, optimizer, rng) -> float:
    """One pass over shuffled batches; returns the mean batch loss."""
    if len(data) == 0:
        raise ValueError("empty training dataset")
    windows = data.flat_windows()
    order = rng.permutation(len(data))
    losses = []
    for b, start in enumerate(range(0, len(data), cfg.batch_size)):
        idx = order[start : start + cfg.batch_size]
        z = rng.standard_normal((idx.size, cfg.m, gen.latent_dim))
        ad.zero_grad(gen.params)
        loss = batch_loss(gen, cfg.spec, windows[idx], data.targets[idx], z)
        if not np.isfinite(loss.item()):
            raise TrainingDivergence(
                f"non-finite loss at batch {b}; parameter norm {_param_norm(gen.params):.6g}"
            )
        loss.backward()
        optimizer.step()
        losses.append(loss.item())
    return float(np.mean(losses))


def validation_score(gen: GeneratorModel, data: WindowedDataset, spec, m: int, seed: int) -> float:
    """Mean prequential score estimate on ``data`` with latents fixed by ``seed``."""
    rng = np.random.default_rng(seed)
    windows = data.flat_windows()
    total = 0.0
    for start in range(0, len(data), VAL_CHUNK):
        sl = slice(start, start + VAL_CHUNK)
        w = windows[sl]
        z = rng.standard_normal((w.shape[0], m, gen.latent_dim))
        ens = gen.ensemble_batch(w, z)
        total += float(np.sum(scoring.estimate(spec, ens, data.targets[sl]).value))
    return total / len(data)


# ---------------------------------------------------------------- conditional GAN

def train_gan_epoch(
    gen: GeneratorModel,
    disc: DiscriminatorModel,
    data: WindowedDataset,
    cfg: TrainConfig,
    opt_gen,
    opt_disc,
    rng,
) -> tuple[float, float]:
    """One epoch of adversarial training; returns mean (discriminator, generator) losses.

    The discriminator loss is -[log D(real) + log(1 - D(fake))]; the generator
    minimises log(1 - D(fake)).
    """
    if len(data) == 0:
        raise ValueError("empty training dataset")
    windows = data.flat_windows()
    order = rng.permutation(len(data))
    d_losses, g_losses = [], []
    for b, start in enumerate(range(0, len(data), cfg.batch_size)):
        idx = order[start : start + cfg.batch_size]
        w, y = windows[idx], data.targets[idx]
        for _ in range(cfg.disc_updates):
            z = rng.standard_normal((idx.size, gen.latent_dim))
            fake = gen.forward_batch(w, z).value
            ad.zero_grad(disc.params)
            d_real = disc.forward_batch(w, y)
            d_fake = disc.forward_batch(w, fake)
            d_loss = -(ad.mean(ad.log(d_real)) + ad.mean(ad.log(1.0 - d_fake)))
            if not np.isfinite(d_loss.item()):
                raise TrainingDivergence(f"non-finite discriminator loss at batch {b}")
            d_loss.backward()
            opt_disc.step()
        z = rng.standard_normal((idx.size, gen.latent_dim))
        ad.zero_grad(gen.params)
        ad.zero_grad(disc.params)
        g_loss = ad.mean(ad.log(1.0 - disc.forward_batch(w, gen.forward_batch(w, z))))
        if not np.isfinite(g_loss.item()):
            raise TrainingDivergence(
                f"non-finite generator loss at batch {b}; parameter norm {_param_norm(gen.params):.6g}"
            )
        g_loss.backward()
        opt_gen.step()
        ad.zero_grad(disc.params)
        d_losses.append(d_loss.item())
        g_losses.append(g_loss.item())
    return float(np.mean(d_losses)), float(np.mean(g_losses))


# ---------------------------------------------------------------- fitting

class EarlyStopping:
    """Tracks the best validation score; ties do not reset the patience counter."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, score: float) -> tuple[bool, bool]:
        """Returns (improved, should_stop)."""
        if score < self.best:
            self.best, self.best_epoch, self.bad_epochs = score, epoch, 0
            return True, False
        self.bad_epochs += 1
        return False, self.bad_epochs >= self.patience


def fit(
    gen: GeneratorModel,
    train: WindowedDataset,
    val: WindowedDataset,
    cfg: TrainConfig,
    disc: DiscriminatorModel | None = None,
    progress: Callable[[int, float, float], None] | None = None,
) -> TrainReport:
    """Train until the validation score has not improved for ``cfg.patience`` epochs.

    GAN runs are validated with the energy score (beta = 1) using
    ``cfg.gan_val_m`` members. Best-epoch parameters are restored on return.
    """
    if len(train) == 0 or len(val) == 0:
        raise ValueError("both training and validation splits need at least one window pair")
    t0 = time.perf_counter()
    ss = np.random.SeedSequence(cfg.seed)
    train_seed, val_seed = ss.spawn(2)
    rng = np.random.default_rng(train_seed)
    val_seed_int = int(val_seed.generate_state(1)[0])

    if cfg.method == "gan":
        if disc is None:
            raise ValueError("GAN training needs a discriminator")
        val_spec = scoring.Energy(1.0)
        val_m = cfg.gan_val_m
        opt_g = make_optimizer(cfg.optimizer, gen.params, cfg.lr)
        opt_d = make_optimizer(cfg.optimizer, disc.params, cfg.lr_disc)
    else:
        val_spec = cfg.spec
        val_m = cfg.val_m or cfg.m
        opt_g = make_optimizer(cfg.optimizer, gen.params, cfg.lr)

    report = TrainReport(lr=cfg.lr, lr_disc=cfg.lr_disc if cfg.method == "gan" else None)
    stopper = EarlyStopping(cfg.patience)
    best_params = gen.net.snapshot()
    saturated = 0
    for epoch in range(1, cfg.epochs + 1):
        if cfg.method == "gan":
            d_loss, g_loss = train_gan_epoch(gen, disc, train, cfg, opt_g, opt_d, rng)
            report.disc_loss.append(d_loss)
            report.train_loss.append(g_loss)
            if d_loss < 1e-6:
                saturated += 1
                report.warnings.append(f"discriminator saturated in epoch {epoch} (loss {d_loss:.3g})")
        else:
            report.train_loss.append(train_sr_epoch(gen, train, cfg, opt_g, rng))
        score = validation_score(gen, val, val_spec, val_m, val_seed_int)
        if not np.isfinite(score):
            raise TrainingDivergence(f"non-finite validation score in epoch {epoch}")
        report.val_score.append(score)
        improved, stop = stopper.update(epoch, score)
        if improved:
            best_params = gen.net.snapshot()
        if progress is not None:
            progress(epoch, report.train_loss[-1], score)
        log.debug("epoch %d train %.6g val %.6g", epoch, report.train_loss[-1], score)
        if stop:
            report.stopped_early = True
            break
    gen.net.restore(best_params)
    report.best_epoch = stopper.best_epoch
    report.params = best_params
    report.wall_time = time.perf_counter() - t0
    return report


@dataclass
class SweepResult:
    best: TrainReport
    best_index: int
    candidates: list  # (lr, lr_disc or None, best score or None, error or None)


def lr_sweep(fit_closure: Callable[..., TrainReport], candidates: Sequence) -> SweepResult:
    """Run ``fit_closure(candidate)`` for each candidate and keep the best validation score.

    Candidates that diverge are recorded and skipped; if all diverge the error
    lists each failure.
    """
    if not candidates:
        raise ValueError("learning-rate sweep needs at least one candidate")
    best, best_i, rows = None, -1, []
    for i, cand in enumerate(candidates):
        try:
            rep = fit_closure(cand)
        except (TrainingDivergence, FloatingPointError) as exc:
            rows.append((cand, None, str(exc)))
            continue
        rows.append((cand, rep.best_score, None))
        if best is None or rep.best_score < best.best_score:
            best, best_i = rep, i
    if best is None:
        detail = "; ".join(f"{c}: {e}" for c, _, e in rows)
        raise TrainingDivergence(f"all sweep candidates diverged ({detail})")
    return SweepResult(best, best_i, rows)


def sweep_grid(cfg: TrainConfig) -> list:
    """Learning-rate candidates: a list of lr for SR, (lr, lr_disc) pairs for GAN."""
    if cfg.method == "gan":
        return [(a, b) for a in cfg.lr_grid for b in cfg.lr_disc_grid]
    return list(cfg.lr_grid)
