"""Trial runner for the portfolio, classification and convergence studies.

Every random stream is keyed by (trial seed, purpose, setting) so a single
trial can be re-run alone, and trials can run in any order or in parallel
without changing a byte of the output.
"""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..losses import LossTag, loss_from_name
from ..predictors import TrainConfig, init_predictor, predict, train
from ..regions import FeasibleRegion
from ..synthdata import (
    GenParams,
    conditional_mean,
    gen_classification,
    gen_portfolio,
    gen_weight_matrix,
    gen_weight_vector,
)
from .config import Arm, ExperimentConfig
from .metrics import (
    ANCHOR_N,
    MetricsRecord,
    excess_spo_risk_known_mean,
    mean_spo_loss,
    normalized_excess_risk,
    normalized_spo_loss,
    write_records,
)

log = logging.getLogger(__name__)

# stream purposes
_WEIGHTS, _TEST, _TRAIN, _SHUFFLE, _INIT = range(5)


def sub_seed(*keys: int) -> int:
    """A 63-bit seed derived from integer keys."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & (2 ** 63 - 1)


def trial_seed(master_seed: int, trial: int) -> int:
    return sub_seed(master_seed, trial)


def _noise_key(noise: float) -> int:
    return int(round(noise * 1_000_000))


@dataclass
class TrialOutput:
    trial: int
    seed: int
    records: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    error: Optional[str] = None


@dataclass
class ExperimentResult:
    records: list
    timings: list
    failures: list

    @property
    def ok(self) -> bool:
        return not self.failures


def _arms(config: ExperimentConfig) -> list[Arm]:
    if config.problem == "convergence":
        return list(config.arms)
    if config.problem == "classification":
        return [Arm("unit_simplex", "classification", config.region)]
    return [Arm(config.region.kind.value, "portfolio", config.region)]


def _generate(data: str, n, d, p, deg, noise, seed, weights):
    params = GenParams(n=n, d=d, p=p, deg=deg, noise_halfwidth=noise, seed=seed)
    if data == "portfolio":
        return gen_portfolio(params, weights)
    return gen_classification(params, weights)


def _fit_and_score(config, arm, loss_name, li, train_set, test_set, test_mean, keys):
    region: FeasibleRegion = arm.region
    loss = loss_from_name(loss_name, region)
    d = train_set.costs.shape[1]
    bias = None
    if loss.tag is LossTag.SPO:
        # SPO gradients vanish at a constant-in-direction prediction; start from the mean cost
        bias = train_set.costs.mean(axis=0)
    model = init_predictor(config.model, config.p, d, seed=sub_seed(*keys, _INIT, li), bias=bias)
    tc = TrainConfig(**{**config.train.__dict__, "seed": sub_seed(*keys, _SHUFFLE, li)})
    fitted = train(model, train_set.features, train_set.costs, loss, tc).model
    pred = predict(fitted, test_set.features)
    out = {"spo": mean_spo_loss(region, pred, test_set.costs),
           "excess_risk": excess_spo_risk_known_mean(region, pred, test_mean)}
    nspo = normalized_spo_loss(region, pred, test_set.costs)
    if nspo is not None:
        out["normalized_spo"] = nspo
    return out


def run_trial(config: ExperimentConfig, trial: int) -> TrialOutput:
    seed = trial_seed(config.master_seed, trial)
    out = TrialOutput(trial, seed)
    try:
        for ai, arm in enumerate(_arms(config)):
            d = arm.region.dim
            wseed = sub_seed(seed, _WEIGHTS, ai)
            weights = (gen_weight_matrix(d, config.p, wseed) if arm.data == "portfolio"
                       else gen_weight_vector(config.p, wseed))
            for deg in config.degs:
                for noise in config.noises:
                    nk = _noise_key(noise)
                    test = _generate(arm.data, config.n_test, d, config.p, deg, noise,
                                     sub_seed(seed, _TEST, ai, deg, nk), weights)
                    test_mean = conditional_mean(test)
                    for n in config.n_train:
                        keys = (seed, ai, deg, nk, n)
                        tr = _generate(arm.data, n, d, config.p, deg, noise,
                                       sub_seed(seed, _TRAIN, ai, deg, nk, n), weights)
                        for li, loss_name in enumerate(config.losses):
                            t0 = time.perf_counter()
                            scores = _fit_and_score(config, arm, loss_name, li, tr, test, test_mean, keys)
                            out.timings.append((trial, arm.name, loss_name, n, deg, noise,
                                                time.perf_counter() - t0))
                            for metric in ("normalized_spo", "spo", "excess_risk"):
                                if metric in scores:
                                    out.records.append(MetricsRecord(trial, seed, arm.name, loss_name, n, deg,
                                                                     float(noise), metric, scores[metric]))
    except Exception as exc:  # a failed trial is reported, not fatal
        out.error = f"trial {trial} (seed {seed}) failed: {exc!r}"
        out.records, out.timings = [], []
        log.error(out.error)
    return out


def _run_trial_args(args):
    return run_trial(*args)


def _convergence_rows(config: ExperimentConfig, records: list) -> list:
    """Trial-averaged excess risk and its normalization at the anchor sample size."""
    groups: dict = {}
    for r in records:
        if r.metric_name == "excess_risk":
            groups.setdefault((r.region, r.loss, r.deg, r.noise), {}).setdefault(r.n_train, []).append(r.value)
    rows = []
    for (region, loss, deg, noise), by_n in groups.items():
        curve = {n: float(np.mean(v)) for n, v in sorted(by_n.items())}
        if ANCHOR_N not in curve:
            continue
        norm = normalized_excess_risk(curve)
        for n in curve:
            rows.append(MetricsRecord(-1, config.master_seed, region, loss, n, deg, noise, "excess_risk", curve[n]))
            rows.append(MetricsRecord(-1, config.master_seed, region, loss, n, deg, noise,
                                      "normalized_excess_risk", norm[n]))
    return rows


def run_experiment(config: ExperimentConfig, workers: Optional[int] = None) -> ExperimentResult:
    workers = workers or config.workers
    jobs = [(config, t) for t in range(config.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_run_trial_args, jobs))
    else:
        outputs = [run_trial(*j) for j in jobs]
    outputs.sort(key=lambda o: o.trial)
    records = [r for o in outputs for r in o.records]
    if config.problem == "convergence":
        records += _convergence_rows(config, records)
    return ExperimentResult(records, [t for o in outputs for t in o.timings],
                            [o.error for o in outputs if o.error])


TIMING_FIELDS = ("trial", "region", "loss", "n_train", "deg", "noise", "wall_seconds")


def write_outputs(result: ExperimentResult, path) -> tuple[Path, Path]:
    """Records go to ``path``; wall-clock timings to a ``.timings.csv`` sidecar."""
    path = write_records(path, result.records)
    tpath = path.with_suffix(".timings.csv")
    with tpath.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIMING_FIELDS)
        for row in result.timings:
            w.writerow(row[:-1] + (f"{row[-1]:.4f}",))
    return path, tpath


def median_metric(records, metric: str, **match) -> dict:
    """Median over trials of ``metric`` for each loss, filtered by record fields."""
    vals: dict = {}
    for r in records:
        if r.trial < 0 or r.metric_name != metric:
            continue
        if all(getattr(r, k) == v for k, v in match.items()):
            vals.setdefault(r.loss, []).append(r.value)
    return {k: float(np.median(v)) for k, v in vals.items()}


def plot_records(records, problem: str, path) -> Path:
    """Render an SVG summary of a results CSV (needs matplotlib)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 4))
    if problem == "convergence":
        curves: dict = {}
        for r in records:
            if r.trial == -1 and r.metric_name == "normalized_excess_risk":
                curves.setdefault(f"{r.region} / {r.loss}", []).append((r.n_train, r.value))
        for label, pts in sorted(curves.items()):
            pts.sort()
            ax.loglog([p[0] for p in pts], [p[1] for p in pts], marker="o", label=label)
        ax.set_xlabel("training set size")
        ax.set_ylabel("normalized excess risk")
        ax.legend(fontsize=7)
    else:
        metric = "normalized_spo" if any(r.metric_name == "normalized_spo" for r in records) else "spo"
        by: dict = {}
        for r in records:
            if r.trial >= 0 and r.metric_name == metric:
                by.setdefault((r.deg, r.noise, r.loss), []).append(r.value)
        keys = sorted(by)
        ax.boxplot([by[k] for k in keys])
        ax.set_xticks(range(1, len(keys) + 1))
        ax.set_xticklabels([f"deg {k[0]}\nnoise {k[1]:g}\n{k[2]}" for k in keys], fontsize=6)
        ax.set_ylabel(metric.replace("_", " "))
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
