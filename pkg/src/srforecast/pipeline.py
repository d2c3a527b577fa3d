"""End-to-end orchestration shared by the command-line entry points."""
from __future__ import annotations

import copy
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import scoring
from .dataset import (
    Normalizer,
    TimeSeries,
    WindowedDataset,
    build_windows,
    fit_normalizer,
    read_series,
    split_series,
)
from .evaluation import CSV_HEADER, EvaluationReport, ensemble_stats, evaluate_model
from .models import DiscriminatorModel, GeneratorModel, default_hidden
from .simulators import simulate_preset
from .training import SweepResult, TrainConfig, TrainReport, fit, lr_sweep, sweep_grid



@dataclass
class Prepared:
    series: TimeSeries
    normalizer: Normalizer
    train: WindowedDataset
    val: WindowedDataset
    test: WindowedDataset
    test_offset: int


def load_series(cfg: dict) -> TimeSeries:
    data = cfg["data"]
    if data["input"]:
        return read_series(data["input"])
    overrides = {"duration": float(data["duration"])} if data["duration"] else {}
    return simulate_preset(data["preset"], **overrides)


def split(cfg: dict, ts: TimeSeries) -> tuple[TimeSeries, TimeSeries, TimeSeries]:
    return split_series(ts, cfg["data"]["split"], min_length=cfg["data"]["k"] + cfg["data"]["lead"])


def prepare(cfg: dict, ts: TimeSeries) -> Prepared:
    k, lead = cfg["data"]["k"], cfg["data"]["lead"]
    train, val, test = split(cfg, ts)
    nz = fit_normalizer(train) if cfg["data"]["normalize"] else Normalizer.identity(ts.dim)
    win = [build_windows(nz.apply_series(s), k, lead) for s in (train, val, test)]
    return Prepared(ts, nz, *win, test_offset=len(train) + len(val))


def target_rows(data: WindowedDataset, offset: int) -> np.ndarray:
    """Row of the full series holding each window's verification."""
    return data.index_map + offset + data.l


def build_spec(cfg: dict, prep: Prepared):
    """Scoring rule for ``method.name``; None for the GAN."""
    method = cfg["method"]
    name = method["name"]
    d = prep.series.dim
    if name == "gan":
        return None

    def kernel():
        gamma = method["gamma"]
        if gamma == "auto":
            gamma = scoring.tune_gaussian_bandwidth(prep.val.targets, seed=cfg["seed"])
        return scoring.KernelGaussian(float(gamma))

    def variogram():
        if d < 2:
            raise ValueError("the variogram score needs a multivariate series (d >= 2)")
        w = scoring.build_cyclic_weight_matrix(d) if method["variogram_weights"] == "cyclic" else np.ones((d, d))
        return scoring.Variogram(w, float(method["p"]), method["variogram_estimator"])

    if name == "energy":
        return scoring.Energy(float(method["beta"]))
    if name == "kernel":
        return kernel()
    if name == "variogram":
        return variogram()
    rules = (scoring.Energy(float(method["beta"])) if name == "energy-variogram" else kernel(), variogram())
    if method["sum_weights"] == "balanced":
        weights = scoring.balance_sum_weights(rules, *climatology(prep, cfg["seed"]))
    else:
        weights = tuple(float(w) for w in method["sum_weights"])
    return scoring.WeightedSum(tuple(zip(weights, rules)))


CLIMATOLOGY_MEMBERS = 20


def climatology(prep: Prepared, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Reference ensembles of random training targets for each validation target."""
    rng = np.random.default_rng([seed, 1])
    idx = rng.integers(0, len(prep.train), size=(len(prep.val), CLIMATOLOGY_MEMBERS))
    return prep.train.targets[idx], prep.val.targets


def train_config(cfg: dict, spec, lr=None, lr_disc=None, seed=None) -> TrainConfig:
    t = cfg["train"]
    gan = cfg["method"]["name"] == "gan"
    return TrainConfig(
        method="gan" if gan else "sr",
        spec=spec,
        m=t["m"],
        batch_size=t["batch_size"],
        epochs=t["epochs"],
        lr=float(t["lr"] if lr is None else lr),
        lr_disc=float(t["lr_disc"] if lr_disc is None else lr_disc),
        optimizer=t["optimizer"],
        patience=t["patience"],
        seed=cfg["seed"] if seed is None else seed,
        lr_grid=tuple(float(x) for x in t["lr_grid"]),
        lr_disc_grid=tuple(float(x) for x in t["lr_disc_grid"]),
        disc_updates=t["disc_updates"],
        gan_val_m=t["gan_val_m"],
    )


def build_models(cfg: dict, d: int, normalizer: Normalizer, seed: int):
    model = cfg["model"]
    k = cfg["data"]["k"]
    hidden = list(model["hidden"]) or default_hidden(d)
    latent = d if model["latent_dim"] == "auto" else int(model["latent_dim"])
    init_seed, disc_seed = np.random.SeedSequence(seed).spawn(2)
    meta = {
        "method": cfg["method"]["name"],
        "k": k,
        "lead": cfg["data"]["lead"],
    }
    gen = GeneratorModel(
        k, d, latent, hidden, seed=int(init_seed.generate_state(1)[0]), normalizer=normalizer, meta=meta
    )
    disc = None
    if cfg["method"]["name"] == "gan":
        dh = list(model["disc_hidden"]) or [hidden[0]] * 3
        disc = DiscriminatorModel(k, d, dh, seed=int(disc_seed.generate_state(1)[0]))
    return gen, disc


def candidate_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


@dataclass
class TrainOutcome:
    gen: GeneratorModel
    disc: DiscriminatorModel | None
    report: TrainReport
    sweep: SweepResult | None
    spec: object


def _fit_one(args):
    cfg, prep, spec, lr, lr_disc, seed = args
    gen, disc = build_models(cfg, prep.series.dim, prep.normalizer, seed)
    tcfg = train_config(cfg, spec, lr=lr, lr_disc=lr_disc, seed=seed)
    rep = fit(gen, prep.train, prep.val, tcfg, disc=disc)
    return gen, disc, rep


def run_training(cfg: dict, prep: Prepared) -> TrainOutcome:
    spec = build_spec(cfg, prep)
    if not cfg["train"]["sweep"]:
        gen, disc, rep = _fit_one((cfg, prep, spec, None, None, cfg["seed"]))
        return TrainOutcome(gen, disc, rep, None, spec)

    grid = sweep_grid(train_config(cfg, spec))
    jobs = []
    for i, cand in enumerate(grid):
        lr, lr_disc = cand if isinstance(cand, tuple) else (cand, None)
        jobs.append((cfg, prep, spec, lr, lr_disc, candidate_seed(cfg["seed"], i)))

    n_jobs = min(cfg["train"]["jobs"], len(jobs))
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(_fit_one, j) for j in jobs]
            results = []
            for f in futures:
                try:
                    results.append(f.result())
                except FloatingPointError as exc:
                    results.append(exc)
    else:
        results = []
        for j in jobs:
            try:
                results.append(_fit_one(j))
            except FloatingPointError as exc:
                results.append(exc)

    by_index = dict(enumerate(results))

    def closure(i):
        res = by_index[i]
        if isinstance(res, Exception):
            raise res
        return res[2]

    sweep = lr_sweep(closure, list(range(len(jobs))))
    # report the actual rates rather than candidate indices
    sweep.candidates = [(grid[i], score, err) for i, score, err in sweep.candidates]
    gen, disc, rep = by_index[sweep.best_index]
    return TrainOutcome(gen, disc, rep, sweep, spec)


# ---------------------------------------------------------------- output writers

def train_log_json(outcome: TrainOutcome) -> str:
    log = outcome.report.to_dict(include_time=False)
    log["scoring_rule"] = scoring.spec_to_dict(outcome.spec) if outcome.spec is not None else {"kind": "gan"}
    return json.dumps(log, indent=2, sort_keys=True) + "\n"


def val_curve_csv(rep: TrainReport) -> str:
    buf = io.StringIO()
    buf.write("epoch,train_loss,val_score\n")
    for i, (a, b) in enumerate(zip(rep.train_loss, rep.val_score), start=1):
        buf.write(f"{i},{a:.17g},{b:.17g}\n")
    return buf.getvalue()


def sweep_csv(sweep: SweepResult) -> str:
    buf = io.StringIO()
    buf.write("lr,lr_disc,best_val_score,error\n")
    for cand, score, err in sweep.candidates:
        lr, lr_disc = cand if isinstance(cand, tuple) else (cand, None)
        cells = [repr(lr), "" if lr_disc is None else repr(lr_disc), "" if score is None else f"{score:.17g}"]
        buf.write(",".join(cells) + "," + (err or "").replace(",", ";") + "\n")
    return buf.getvalue()


def forecasts_csv(ens: np.ndarray, truth: np.ndarray, index: np.ndarray, level: float) -> str:
    mean, median, bounds = ensemble_stats(ens, level)
    d = truth.shape[1]
    cols = ["row"]
    for i in range(d):
        cols += [f"obs_{i}", f"mean_{i}", f"median_{i}", f"lo_{i}", f"hi_{i}"]
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    for n in range(truth.shape[0]):
        row = [str(int(index[n]))]
        for i in range(d):
            row += [
                f"{truth[n, i]:.10g}",
                f"{mean[n, i]:.10g}",
                f"{median[n, i]:.10g}",
                f"{bounds[n, i, 0]:.10g}",
                f"{bounds[n, i, 1]:.10g}",
            ]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def evaluate(cfg: dict, gen: GeneratorModel, data: WindowedDataset, method: str):
    rep, ens, truth = evaluate_model(
        gen, data, cfg["eval"]["m_eval"], seed=cfg["seed"], method=method, return_ensembles=True
    )
    return rep, ens, truth


def write_evaluation(out: Path, rep: EvaluationReport, ens, truth, index, level: float) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(rep.to_json() + "\n")
    (out / "table_row.csv").write_text(CSV_HEADER + "\n" + rep.csv_row() + "\n")
    (out / "forecasts.csv").write_text(forecasts_csv(ens, truth, index, level))


# ---------------------------------------------------------------- table reproduction

PAPER_TABLES = {
    "lorenz63": {
        "energy": (0.0370, 0.0293, 0.9692),
        "kernel": (0.1220, 0.0155, 0.9913),
        "gan": (0.4930, 0.0880, 0.7212),
    },
    "lorenz96": {
        "energy": (0.1091, 0.0175, 0.9925),
        "kernel": (0.1334, 0.0172, 0.9929),
        "energy-variogram": (0.1427, 0.0174, 0.9927),
        "kernel-variogram": (0.1291, 0.0149, 0.9946),
        "gan": (0.4872, 0.0873, 0.8151),
    },
}

# per-method bounds: (max calibration error, max NRMSE, min R^2); None = not checked
TOLERANCES = {
    "lorenz63": {
        "energy": (0.15, 0.06, 0.90),
        "kernel": (None, None, 0.95),
    },
    "lorenz96": {
        "energy": (0.25, None, 0.90),
        "kernel-variogram": (0.25, None, 0.90),
    },
}

BUDGETS = {
    # paper scale: full-length series and learning-rate sweeps
    "full": {"lorenz63": {}, "lorenz96": {"data": {"preset": "lorenz96-paper"}}, "train": {"sweep": True}},
    # desk scale: single learning rate, Lorenz96 shortened to 1000 time units
    "desk": {"lorenz63": {}, "lorenz96": {"data": {"preset": "lorenz96-reduced"}}, "train": {}},
    # smoke scale for pipeline checks; not expected to meet any tolerance
    "quick": {
        "lorenz63": {"data": {"duration": 600.0}},
        "lorenz96": {"data": {"preset": "lorenz96-reduced", "duration": 100.0}},
        "train": {"epochs": 10, "patience": 5, "batch_size": 500},
        "eval": {"m_eval": 40},
    },
}


def reproduce_config(base: dict, table: str, method: str, budget: str) -> dict:
    cfg = copy.deepcopy(base)
    b = BUDGETS[budget]
    cfg["data"]["preset"] = "lorenz63-paper" if table == "lorenz63" else "lorenz96-paper"
    cfg["data"]["input"] = ""
    cfg["data"]["k"], cfg["data"]["lead"] = 10, 1
    cfg["model"]["latent_dim"] = "auto"
    for key, value in b[table].get("data", {}).items():
        cfg["data"][key] = value
    for section in ("train", "eval"):
        cfg[section].update(b.get(section, {}))
    cfg["method"]["name"] = method
    return cfg


def check_tolerances(table: str, rows: dict) -> list:
    """Returns (check, passed) pairs for the reproduction criteria of ``table``."""
    checks = []
    for method, (cal_max, nrmse_max, r2_min) in TOLERANCES[table].items():
        rep = rows.get(method)
        if rep is None:
            checks.append((f"{method}: run completed", False))
            continue
        if cal_max is not None:
            checks.append((f"{method}: cal_error <= {cal_max}", rep.calibration_error <= cal_max))
        if nrmse_max is not None:
            checks.append((f"{method}: nrmse <= {nrmse_max}", rep.nrmse <= nrmse_max))
        if r2_min is not None:
            checks.append((f"{method}: r2 >= {r2_min}", rep.r_squared >= r2_min))
    gan = rows.get("gan")
    for method in PAPER_TABLES[table]:
        if method == "gan" or method not in rows:
            continue
        ok = gan is not None and rows[method].calibration_error < gan.calibration_error
        checks.append((f"{method}: cal_error below GAN", ok))
    return checks


def comparison_csv(table: str, rows: dict, failures: dict) -> str:
    buf = io.StringIO()
    buf.write("method,cal_error,nrmse,r2,paper_cal_error,paper_nrmse,paper_r2,status\n")
    for method, paper in PAPER_TABLES[table].items():
        p = ",".join(f"{v:.4f}" for v in paper)
        if method in rows:
            r = rows[method]
            buf.write(f"{method},{r.calibration_error:.6f},{r.nrmse:.6f},{r.r_squared:.6f},{p},ok\n")
        else:
            reason = failures.get(method, "not run").replace(",", ";")
            buf.write(f"{method},,,,{p},failed: {reason}\n")
    return buf.getvalue()


def reproduce(base: dict, table: str, budget: str, out: Path, methods=None, progress=print):
    """Simulate, train and evaluate every method of ``table``; write the comparison files.

    Returns (comparison CSV text, [(check, passed)], {method: EvaluationReport}).
    """
    if table not in PAPER_TABLES:
        raise ValueError(f"unknown table {table!r}")
    if budget not in BUDGETS:
        raise ValueError(f"unknown budget {budget!r}")
    methods = list(methods or PAPER_TABLES[table])
    out.mkdir(parents=True, exist_ok=True)
    rows: dict = {}
    failures: dict = {}
    cache: dict = {}
    for method in methods:
        cfg = reproduce_config(base, table, method, budget)
        try:
            key = (cfg["data"]["preset"], cfg["data"]["duration"])
            if key not in cache:
                cache[key] = prepare(cfg, load_series(cfg))
            prep = cache[key]
            outcome = run_training(cfg, prep)
            rep, ens, truth = evaluate(cfg, outcome.gen, prep.test, method)
        except (FloatingPointError, ValueError, RuntimeError) as exc:
            failures[method] = f"{type(exc).__name__}: {exc}"
            progress(f"{table}/{method}: FAILED {failures[method]}")
            continue
        rows[method] = rep
        mdir = out / method
        write_evaluation(
            mdir, rep, ens, truth, target_rows(prep.test, prep.test_offset), cfg["eval"]["interval"]
        )
        (mdir / "train_log.json").write_text(train_log_json(outcome))
        progress(
            f"{table}/{method}: cal_error {rep.calibration_error:.4f}  nrmse {rep.nrmse:.4f}  "
            f"r2 {rep.r_squared:.4f}  (best epoch {outcome.report.best_epoch}, lr {outcome.report.lr:g})"
        )
    checks = check_tolerances(table, rows) if rows else [("any method completed", False)]
    text = comparison_csv(table, rows, failures)
    (out / "comparison.csv").write_text(text)
    summary = {
        "table": table,
        "budget": budget,
        "checks": [{"check": c, "passed": bool(ok)} for c, ok in checks],
        "failures": failures,
    }
    (out / "comparison.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return text, checks, rows
