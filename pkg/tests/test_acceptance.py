"""Acceptance suite: one test per criterion, run at full stated tolerances.

Each test records a PASS/FAIL line that is printed in the terminal summary
(and immediately, when run with ``-s``). The experiment criteria take
several minutes each on one core.
"""

import math
import warnings

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from spoplus.caliblab import (
    ConditionalDistribution,
    LemmaBound,
    example31_sweep,
    spoplus_identity_check,
    verify_lemma_level_set,
    verify_theorem31,
    verify_theorem_strong,
)
from spoplus.harness.cli import check_example31
from spoplus.harness.config import ExperimentConfig, default_config
from spoplus.harness.experiments import median_metric, run_experiment, write_outputs
from spoplus.harness.metrics import loglog_slope
from spoplus.losses import (
    loss_from_name,
    spo_gradient_via_jacobian,
    spoplus_loss,
    spoplus_subgradient,
)
from spoplus.predictors import empirical_risk, init_predictor, loss_param_gradient
from spoplus.regions import (
    FeasibleRegion,
    dual_optimal_value,
    entropy_valid_range,
    kkt_residual,
    oracle_solve,
    primal_reference_solve,
    solve_batch,
    vertices,
)
from spoplus.synthdata import rng_for

pytestmark = pytest.mark.acceptance


def verdict(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{number}] {'PASS' if ok else 'FAIL'} {title}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    assert ok, line


def _regions_for(d: int, rng) -> list:
    lo, hi = entropy_valid_range(d)
    lo_box = -rng.uniform(0.5, 2.0, d)
    out = [FeasibleRegion.unit_simplex(d), FeasibleRegion.l1_ball(d, 1.5),
           FeasibleRegion.box(lo_box, lo_box + rng.uniform(0.5, 3.0, d)),
           FeasibleRegion.entropy_simplex(d, 0.5 * (lo + hi)),
           FeasibleRegion.log_barrier_simplex(d)]
    if d > 2:
        # a loose threshold whose set reaches the simplex boundary
        out.append(FeasibleRegion.entropy_simplex(d, 0.5 * -math.log(d)))
    return out


def test_oracles_are_correct():
    rng = rng_for(101)
    failures, checked, worst_res, worst_gap = [], 0, 0.0, 0.0
    for d in (2, 3, 5, 10, 50):
        for region in _regions_for(d, rng):
            C = rng.standard_normal((1000, d)) * np.exp(rng.uniform(-2.0, 2.0, (1000, 1)))
            sol = solve_batch(region, C)
            z = np.einsum("ij,ij->i", C, sol.w)
            tag = f"{region.kind.value}(d={d})"
            if not all(region.contains(w, tol=1e-9) for w in sol.w):
                failures.append(f"{tag} infeasible output")
            if region.is_level_set:
                worst_res = max(worst_res, float(sol.residual.max()))
                for c, w in zip(C, sol.w):
                    one = oracle_solve(region, c)
                    if np.all(w >= np.finfo(float).tiny):
                        worst_res = max(worst_res, kkt_residual(region, c, one))
                if worst_res > 1e-9:
                    failures.append(f"{tag} residual {worst_res:.2e}")
            if d <= 5:
                if region.is_level_set:
                    ref = np.array([dual_optimal_value(region, c) for c in C])
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore", RuntimeWarning)
                        nlp = np.array([C[i] @ primal_reference_solve(region, C[i]) for i in range(50)])
                    gap = max(float(np.abs(ref - z).max()), float(np.abs(nlp - z[:50]).max()))
                else:
                    gap = float(np.abs((C @ vertices(region).T).min(axis=1) - z).max())
                worst_gap = max(worst_gap, gap)
                if gap > 1e-6:
                    failures.append(f"{tag} brute-force gap {gap:.2e}")
            checked += len(C)
    verdict(1, "oracle correctness", not failures,
            f"{checked} costs, worst residual {worst_res:.1e}, worst brute-force gap {worst_gap:.1e}"
            + (f"; {failures[:3]}" if failures else ""))


def _central_difference(fn, x, h):
    return np.array([(fn(x + h * e) - fn(x - h * e)) / (2 * h) for e in np.eye(len(x))])


def test_gradients_match_finite_differences():
    rng = rng_for(202)
    region = FeasibleRegion.entropy_simplex(5, -1.2)
    worst = {"spo_plus": 0.0, "spo": 0.0, "params": 0.0}
    for _ in range(500):
        c_hat, c = rng.standard_normal(5), rng.standard_normal(5)
        g = spoplus_subgradient(region, c_hat, c)
        fd = _central_difference(lambda v: spoplus_loss(region, v, c), c_hat, 1e-5)
        worst["spo_plus"] = max(worst["spo_plus"], float(np.abs(fd - g).max() / max(np.abs(g).max(), 1e-3)))
        g = spo_gradient_via_jacobian(region, c_hat, c)
        fd = _central_difference(lambda v: c @ oracle_solve(region, v).w, c_hat, 1e-5)
        worst["spo"] = max(worst["spo"], float(np.abs(fd - g).max() / max(np.abs(g).max(), 1e-3)))
    for kind in ("affine", "mlp256"):
        for name in ("spo_plus", "spo", "least_squares", "absolute"):
            loss = loss_from_name(name, region)
            for _ in range(5):
                model = init_predictor(kind, 3, 5)
                model = model.with_params(0.5 * rng.standard_normal(model.params.size))
                X, C = rng.standard_normal((8, 3)), rng.standard_normal((8, 5))
                g = loss_param_gradient(model, loss, X, C)
                for k in rng.choice(model.params.size, size=10, replace=False):
                    e = np.zeros(model.params.size)
                    e[k] = 1e-6
                    fd = (empirical_risk(model.with_params(model.params + e), loss, X, C)
                          - empirical_risk(model.with_params(model.params - e), loss, X, C)) / 2e-6
                    worst["params"] = max(worst["params"], abs(fd - g[k]) / max(abs(g[k]), 1.0))
    ok = worst["spo_plus"] <= 1e-5 and worst["spo"] <= 1e-5 and worst["params"] <= 1e-4
    verdict(2, "gradients vs finite differences", ok,
            f"relative errors: SPO+ {worst['spo_plus']:.1e}, SPO {worst['spo']:.1e} (500 points each), "
            f"model parameters {worst['params']:.1e}")


def test_level_set_inequalities():
    region = FeasibleRegion.entropy_simplex(3, -1.05)
    parts, ok = [], True
    for i, which in enumerate(LemmaBound):
        rep = verify_lemma_level_set(region, which, 10_000, 300 + i)
        bad = verify_lemma_level_set(region, which, 10_000, 300 + i, mu_scale=10.0)
        ok &= rep.ok and rep.samples_checked == 10_000 and bad.violations > 0
        parts.append(f"{which.value} {rep.violations}/{rep.samples_checked} (corrupted: {bad.violations} caught)")
    barrier = FeasibleRegion.log_barrier_simplex(3)
    extra = [verify_lemma_level_set(barrier, which, 10_000, 400 + i) for i, which in enumerate(LemmaBound)]
    ok &= all(r.ok for r in extra)
    parts.append(f"log-barrier d=3: {sum(r.violations for r in extra)} violations")
    verdict(3, "level-set inequalities", ok, "; ".join(parts))


def test_excess_risk_identity():
    rng = rng_for(404)
    cases, ok = [], True
    for region in (FeasibleRegion.unit_simplex(3), FeasibleRegion.l1_ball(3, 1.0),
                   FeasibleRegion.entropy_simplex(3, -0.9)):
        for j in range(3):
            dist = ConditionalDistribution.gaussian(rng.standard_normal(3), float(rng.uniform(0.5, 1.5)))
            c_hat = dist.mean + rng.standard_normal(3)
            chk = spoplus_identity_check(region, dist, c_hat, 100_000, 500 + 10 * j + len(cases))
            ok &= chk.agree and chk.nonnegative
            z = chk.difference.estimate / chk.difference.stderr if chk.difference.stderr > 0 else 0.0
            cases.append(f"{region.kind.value}#{j} diff/se {z:+.2f}")
    verdict(4, "SPO+ excess-risk identity", ok, ", ".join(cases))


def test_mixture_counterexample_sweep():
    eps = 0.1
    rows = example31_sweep(eps, [eps * f for f in (1.0, 1e-1, 1e-2, 1e-3)], 1_000_000, 606)
    problems = check_example31(rows, eps)
    detail = ", ".join(f"sigma {r.sigma:g}: {r.excess_spoplus:.2e}" for r in rows)
    verdict(5, "mixture counterexample sweep", not problems,
            f"excess SPO {rows[0].excess_spo!r}; excess SPO+ {detail}" + (f"; {problems}" if problems else ""))


def test_calibration_bounds_hold():
    grid = [0.01, 0.02, 0.05]
    poly = verify_theorem31(FeasibleRegion.l1_ball(2, 1.0), grid, trials=200, mc_samples=2000, seed=707)
    strong = verify_theorem_strong(FeasibleRegion.entropy_simplex(3, -1.05), 0.5, grid, trials=200,
                                   mc_samples=2000, seed=708)
    per_eps = all(sum(1 for r in rep.rows if r["epsilon"] == e) >= 200 for rep in (poly, strong) for e in grid)
    verdict(6, "calibration lower bounds", poly.ok and strong.ok and per_eps,
            f"polyhedral {poly.violations}/{poly.samples_checked} violations (worst margin {poly.worst_margin:.2e}); "
            f"level-set {strong.violations}/{strong.samples_checked} (worst margin {strong.worst_margin:.2e})")


def test_portfolio_ordering():
    config = ExperimentConfig("portfolio", losses=("spo", "spo_plus", "least_squares", "absolute"),
                              degs=(6,), noises=(0.5,), n_train=(1000,), n_test=2000, trials=10)
    result = run_experiment(config)
    med = median_metric(result.records, "normalized_spo")
    ok = result.ok and med["spo_plus"] < med["least_squares"]
    verdict(7, "portfolio deg 6 ordering", ok,
            "median normalized SPO " + ", ".join(f"{k} {v:.4f}" for k, v in sorted(med.items())))


@pytest.fixture(scope="module")
def convergence_run(tmp_path_factory):
    config = default_config("convergence")
    path, _ = write_outputs(run_experiment(config), tmp_path_factory.mktemp("conv") / "convergence.csv")
    return config, path


def test_convergence_slopes(convergence_run):
    from spoplus.harness.metrics import read_records

    config, path = convergence_run
    records = read_records(path)
    slopes = {}
    for arm in config.arms:
        pts = sorted((r.n_train, r.value) for r in records
                     if r.trial == -1 and r.region == arm.name and r.metric_name == "normalized_excess_risk")
        slopes[arm.name] = loglog_slope([p[0] for p in pts], [p[1] for p in pts])
    ok = slopes["entropy_simplex"] < slopes["unit_simplex"]
    verdict(8, "convergence slopes", ok,
            f"{config.trials} trials: entropy {slopes['entropy_simplex']:.3f}, "
            f"unit simplex {slopes['unit_simplex']:.3f}")


def test_experiments_are_byte_reproducible(convergence_run, tmp_path):
    config, first = convergence_run
    again, _ = write_outputs(run_experiment(config), tmp_path / "again.csv")
    same_rerun = first.read_bytes() == again.read_bytes()
    small = ExperimentConfig("portfolio", losses=("spo", "spo_plus", "least_squares"), degs=(2,), noises=(0.5,),
                             n_train=(100,), n_test=200, trials=4)
    serial, _ = write_outputs(run_experiment(small, workers=1), tmp_path / "serial.csv")
    parallel, _ = write_outputs(run_experiment(small, workers=2), tmp_path / "parallel.csv")
    same_workers = serial.read_bytes() == parallel.read_bytes()
    verdict(9, "byte-identical reruns", same_rerun and same_workers,
            f"convergence rerun identical: {same_rerun}; workers 2 vs 1 identical: {same_workers}")
