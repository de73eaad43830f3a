"""Numerical checks of SPO+ calibration: excess-risk estimators, inequality
checkers for strongly convex level sets, calibration lower bounds, and the
risk-transfer inverse.

Monte-Carlo estimators share their draws between the two sides of every
paired difference (common random numbers) and report a standard error from
the sample variance of the paired quantity.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import chi2

from .losses import spoplus_loss_batch
from .regions import (
    FeasibleRegion,
    GeometryConstants,
    RegionError,
    geometry_constants,
    project_orthogonal,
    solve_batch,
)
from .synthdata import rng_for

MC_CHUNK = 100_000
LEMMA_TOL = 1e-8


# distributions ----------------------------------------------------------------------

class DistKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    MIXTURE2 = "mixture2"


@dataclass(frozen=True)
class ConditionalDistribution:
    """Isotropic Gaussian, or an equal-weight mixture of two with a shared sigma."""

    kind: DistKind
    means: tuple
    sigma: float

    def __post_init__(self):
        object.__setattr__(self, "kind", DistKind(self.kind))
        means = tuple(np.asarray(m, dtype=float) for m in self.means)
        want = 1 if self.kind is DistKind.GAUSSIAN else 2
        if len(means) != want or len({m.shape for m in means}) != 1 or means[0].ndim != 1:
            raise ValueError(f"{self.kind.value} needs {want} mean vector(s) of equal length")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "means", means)

    @classmethod
    def gaussian(cls, mean, sigma: float) -> "ConditionalDistribution":
        return cls(DistKind.GAUSSIAN, (mean,), sigma)

    @classmethod
    def mixture2(cls, mean1, mean2, sigma: float) -> "ConditionalDistribution":
        return cls(DistKind.MIXTURE2, (mean1, mean2), sigma)

    @property
    def dim(self) -> int:
        return self.means[0].size

    @property
    def mean(self) -> np.ndarray:
        return self.means[0] if len(self.means) == 1 else 0.5 * (self.means[0] + self.means[1])

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        Z = rng.standard_normal((n, self.dim))
        if self.kind is DistKind.GAUSSIAN:
            return self.means[0] + self.sigma * Z
        pick = rng.integers(0, 2, size=n)
        centers = np.where(pick[:, None] == 0, self.means[0], self.means[1])
        return centers + self.sigma * Z


# excess risks -----------------------------------------------------------------------

def excess_spo_risk(region: FeasibleRegion, c_bar, c_hat) -> float:
    """c_bar^T (w*(c_hat) - w*(c_bar)), clamped at 0."""
    c_bar = np.asarray(c_bar, dtype=float)
    c_hat = np.asarray(c_hat, dtype=float)
    if c_bar.shape != c_hat.shape:
        raise ValueError("dimension mismatch")
    W = solve_batch(region, np.stack([c_hat, c_bar])).w
    return max(float(c_bar @ (W[0] - W[1])), 0.0)


@dataclass(frozen=True)
class MCEstimate:
    estimate: float
    stderr: float
    n: int


class _Accumulator:
    """Running sum and sum of squares for several paired quantities."""

    def __init__(self, k: int):
        self.s = np.zeros(k)
        self.ss = np.zeros(k)
        self.n = 0

    def add(self, *cols):
        A = np.stack(cols, axis=1)
        self.s += A.sum(axis=0)
        self.ss += (A * A).sum(axis=0)
        self.n += len(A)

    def result(self, i: int) -> MCEstimate:
        mean = self.s[i] / self.n
        var = max(self.ss[i] / self.n - mean * mean, 0.0) * self.n / max(self.n - 1, 1)
        return MCEstimate(float(mean), math.sqrt(var / self.n), self.n)


def _integrand(region, C, delta):
    """(c + 2 delta)^T (w*(c) - w*(c + 2 delta)) for each row c of C."""
    Q = C + 2.0 * delta
    Wc = solve_batch(region, C).w
    Wq = solve_batch(region, Q).w
    return np.einsum("ij,ij->i", Q, Wc - Wq), Wc


def _chunks(n, size=MC_CHUNK):
    for start in range(0, n, size):
        yield min(size, n - start)


def excess_spoplus_risk_mc(region: FeasibleRegion, dist: ConditionalDistribution, c_hat,
                           n_samples: int, seed: int) -> tuple[float, float]:
    """Estimate E[(c + 2D)^T (w*(c) - w*(c + 2D))] with D = c_hat - E[c].

    For centrally symmetric ``dist`` this equals the excess conditional SPO+
    risk of ``c_hat``. Returns (estimate, stderr).
    """
    delta = np.asarray(c_hat, dtype=float) - dist.mean
    if not np.any(delta):
        return 0.0, 0.0
    rng = rng_for(seed)
    acc = _Accumulator(1)
    for m in _chunks(n_samples):
        vals, _ = _integrand(region, dist.sample(rng, m), delta)
        acc.add(vals)
    r = acc.result(0)
    return r.estimate, r.stderr


@dataclass(frozen=True)
class IdentityCheck:
    direct: MCEstimate      # E[l(c_bar + D, c) - l(c_bar, c)]
    integrand: MCEstimate   # E[(c + 2D)^T (w*(c) - w*(c + 2D))]
    difference: MCEstimate  # paired difference of the two

    @property
    def agree(self) -> bool:
        return abs(self.difference.estimate) <= 3.0 * self.difference.stderr + 1e-12

    @property
    def nonnegative(self) -> bool:
        return self.integrand.estimate >= -3.0 * self.integrand.stderr


def spoplus_identity_check(region: FeasibleRegion, dist: ConditionalDistribution, c_hat,
                           n_samples: int, seed: int) -> IdentityCheck:
    """Compare the direct SPO+ excess estimator with the integrand form on the same draws."""
    c_hat = np.asarray(c_hat, dtype=float)
    c_bar = dist.mean
    delta = c_hat - c_bar
    rng = rng_for(seed)
    acc = _Accumulator(3)
    for m in _chunks(n_samples):
        C = dist.sample(rng, m)
        integ, Wc = _integrand(region, C, delta)
        direct = (spoplus_loss_batch(region, np.broadcast_to(c_hat, C.shape), C, Wc)
                  - spoplus_loss_batch(region, np.broadcast_to(c_bar, C.shape), C, Wc))
        acc.add(direct, integ, direct - integ)
    return IdentityCheck(acc.result(0), acc.result(1), acc.result(2))


# Example: mixture of two Gaussians on the 2-d l1 ball -----------------------------------

@dataclass(frozen=True)
class SweepRow:
    sigma: float
    excess_spoplus: float
    stderr: float
    excess_spo: float


def example31_setup(epsilon: float):
    """Region, mixture means and the misleading prediction for the l1-ball counterexample."""
    region = FeasibleRegion.l1_ball(2, 1.0)
    return region, np.array([9 * epsilon, 0.0]), np.array([-7 * epsilon, 0.0]), np.array([0.0, epsilon])


def example31_sweep(epsilon: float, sigmas: Sequence[float], n_samples: int, seed: int) -> list[SweepRow]:
    """Excess SPO stays at epsilon while excess SPO+ vanishes as the mixture sharpens.

    Every sigma reuses the same seed, so the rows share their draws.
    """
    if any(not s > 0 for s in sigmas):
        raise ValueError("sigmas must be positive")
    region, m1, m2, c_hat = example31_setup(epsilon)
    rows = []
    for s in sigmas:
        dist = ConditionalDistribution.mixture2(m1, m2, s)
        est, se = excess_spoplus_risk_mc(region, dist, c_hat, n_samples, seed)
        rows.append(SweepRow(float(s), est, se, excess_spo_risk(region, dist.mean, c_hat)))
    return rows


# violation reports --------------------------------------------------------------------

@dataclass
class ViolationReport:
    samples_checked: int
    violations: int
    worst_margin: float
    witness: Optional[dict] = None
    rows: list = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return self.violations == 0

    def summary(self, label: str) -> str:
        verdict = "PASS" if self.ok else "FAIL"
        return (f"{verdict} {label}: {self.violations} violations in {self.samples_checked} "
                f"samples, worst margin {self.worst_margin:.3e}")

    def to_csv(self, path) -> Path:
        path = Path(path)
        keys = list(self.rows[0].keys()) if self.rows else ["lhs", "rhs", "slack"]
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
            w.writeheader()
            for row in self.rows:
                w.writerow({k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in row.items()})
        return path

    @classmethod
    def merge(cls, reports: Sequence["ViolationReport"]) -> "ViolationReport":
        worst = min(reports, key=lambda r: r.worst_margin)
        return cls(sum(r.samples_checked for r in reports), sum(r.violations for r in reports),
                   worst.worst_margin, next((r.witness for r in reports if r.witness), None),
                   [row for r in reports for row in r.rows])


def _report(slack, tol, witness_fn, rows=None) -> ViolationReport:
    slack = np.asarray(slack, dtype=float)
    bad = slack < -tol
    i = int(np.argmin(slack))
    worst = float(slack[i])
    # slack within tolerance counts as satisfied
    margin = worst if bad.any() else max(worst, -tol)
    return ViolationReport(len(slack), int(bad.sum()), margin, witness_fn(i) if bad.any() else None,
                           rows or [])


# level-set inequalities -------------------------------------------------------------

class LemmaBound(str, enum.Enum):
    OPTIMALITY_LOWER = "optimality_lower"    # c1^T (w - w1) >= k ||c1|| ||w - w1||^2
    OPTIMALITY_UPPER = "optimality_upper"    # c1^T (w2 - w1) <= k ||c1|| ||w1 - w2||^2
    LIPSCHITZ_LOWER = "lipschitz_lower"      # ||w1 - w2|| >= k ||u1 - u2||
    LIPSCHITZ_UPPER = "lipschitz_upper"      # ||w1 - w2|| <= k ||u1 - u2||


def lemma_constant(which: LemmaBound, mu: float, L: float, gap: float) -> float:
    """Constant k of each inequality; ``gap`` is r - f_min."""
    which = LemmaBound(which)
    if which is LemmaBound.OPTIMALITY_LOWER:
        return mu / (2.0 * math.sqrt(2.0 * L * gap))
    if which is LemmaBound.OPTIMALITY_UPPER:
        return L / (2.0 * math.sqrt(2.0 * mu * gap))
    if which is LemmaBound.LIPSCHITZ_LOWER:
        return math.sqrt(2.0 * mu * gap) / L
    return math.sqrt(2.0 * L * gap) / mu


def lemma_slack(region: FeasibleRegion, which, C1, C2, mu_scale: float = 1.0) -> dict:
    """Slack (>= 0 when the inequality holds) for each row pair of C1, C2.

    Norms are Euclidean on the sum-zero subspace, which is where the oracle
    of a simplex-domain region is determined. For the optimality lower bound
    the comparison point w is the oracle image of C2.
    """
    which = LemmaBound(which)
    mu, L, f_min = geometry_constants(region).require_level()
    k = lemma_constant(which, mu * mu_scale, L, region.level_r - f_min)
    P1, P2 = project_orthogonal(C1), project_orthogonal(C2)
    n1, n2 = np.linalg.norm(P1, axis=1), np.linalg.norm(P2, axis=1)
    W1, W2 = solve_batch(region, C1).w, solve_batch(region, C2).w
    dw = np.linalg.norm(W1 - W2, axis=1)
    if which is LemmaBound.OPTIMALITY_LOWER:
        lhs = np.einsum("ij,ij->i", C1, W2 - W1)
        rhs = k * n1 * dw ** 2
        slack = lhs - rhs
    elif which is LemmaBound.OPTIMALITY_UPPER:
        lhs = np.einsum("ij,ij->i", C1, W2 - W1)
        rhs = k * n1 * dw ** 2
        slack = rhs - lhs
    else:
        safe1 = np.where(n1 > 0, n1, 1.0)[:, None]
        safe2 = np.where(n2 > 0, n2, 1.0)[:, None]
        du = np.linalg.norm(P1 / safe1 - P2 / safe2, axis=1)
        lhs, rhs = dw, k * du
        slack = lhs - rhs if which is LemmaBound.LIPSCHITZ_LOWER else rhs - lhs
    return {"lhs": lhs, "rhs": rhs, "slack": slack, "W1": W1, "W2": W2}


def verify_lemma_level_set(region: FeasibleRegion, which, n_pairs: int, seed: int,
                           mu_scale: float = 1.0, tol: float = LEMMA_TOL,
                           keep_rows: bool = False) -> ViolationReport:
    """Check one level-set inequality on random Gaussian cost pairs.

    ``mu_scale`` inflates the strong-convexity constant; values above 1 are
    a deliberate corruption used to confirm the checker can fail.
    """
    if not region.is_level_set:
        raise RegionError("inequality checks need a strongly convex level-set region")
    rng = rng_for(seed)
    C1 = rng.standard_normal((n_pairs, region.dim))
    C2 = rng.standard_normal((n_pairs, region.dim))
    out = lemma_slack(region, which, C1, C2, mu_scale)
    rows = []
    if keep_rows:
        rows = [{"pair": i, "c1": " ".join(format(v, ".17g") for v in C1[i]),
                 "c2": " ".join(format(v, ".17g") for v in C2[i]),
                 "lhs": float(out["lhs"][i]), "rhs": float(out["rhs"][i]), "slack": float(out["slack"][i])}
                for i in range(n_pairs)]
    return _report(out["slack"], tol, lambda i: {"c1": C1[i].tolist(), "c2": C2[i].tolist(),
                                                  "lhs": float(out["lhs"][i]), "rhs": float(out["rhs"][i])}, rows)


# calibration lower bounds -----------------------------------------------------------

def polyhedral_constant(alpha: float, beta: float, xi: float) -> float:
    return alpha * xi / (4.0 * math.sqrt(2.0 * math.pi) * math.exp(1.5 * (1.0 + beta ** 2)))


def theorem31_rhs(alpha: float, beta: float, M: float, geometry: GeometryConstants, epsilon: float) -> float:
    """Polyhedral calibration lower bound: K * min(eps^2 / (D M), eps)."""
    if not (alpha > 0 and beta >= 0 and M >= 1 and epsilon >= 0):
        raise ValueError("need alpha > 0, beta >= 0, M >= 1, epsilon >= 0")
    K = polyhedral_constant(alpha, beta, geometry.xi)
    if K == 0.0:
        return 0.0
    return K * min(epsilon ** 2 / (geometry.diameter * M), epsilon)


def theorem41_rhs(alpha: float, beta: float, mu: float, L: float, epsilon: float) -> float:
    """Strongly convex level-set lower bound, linear in epsilon."""
    if not (0 < alpha <= 1 and beta >= 0 and 0 < mu <= L):
        raise ValueError("need 0 < alpha <= 1, beta >= 0, 0 < mu <= L")
    return alpha * (mu / L) ** 4.5 * epsilon / (4.0 * (1.0 + beta ** 2))


def transfer_bound(excess_surrogate: float, geometry: GeometryConstants, alpha: float,
                   beta: float, M: float = 1.0) -> float:
    """Upper bound on excess SPO risk implied by an excess SPO+ risk.

    Polyhedral regions invert the convex envelope of K * min(eps^2/(D M), eps),
    which is quadratic up to D M / 2 and then linear with slope K. Level-set
    regions (geometry with mu and L) invert the linear bound directly.
    """
    s = float(excess_surrogate)
    if s < 0:
        raise ValueError("excess_surrogate must be >= 0")
    if s == 0.0:
        return 0.0
    if geometry.mu is not None:
        mu, L, _ = geometry.require_level()
        slope = theorem41_rhs(alpha, beta, mu, L, 1.0)
        return s / slope
    K = polyhedral_constant(alpha, beta, geometry.xi)
    if K == 0.0:
        return math.inf
    DM = geometry.diameter * M
    if s <= K * DM / 4.0:
        return math.sqrt(s * DM / K)
    return s / K + DM / 4.0


# Gaussian class membership -------------------------------------------------------------

def gaussian_polyhedral_params(c_bar, sigma: float) -> tuple[float, float, float]:
    """(alpha, beta, M) certifying N(c_bar, sigma^2 I) for the polyhedral bound."""
    return 1.0, float(np.linalg.norm(c_bar)) / sigma, max(1.0, sigma)


def gaussian_beta(c_bar, sigma: float) -> float:
    """beta with E||c - c_bar||^2 = beta^2 ||c_bar||^2 for N(c_bar, sigma^2 I)."""
    c_bar = np.asarray(c_bar, dtype=float)
    return sigma * math.sqrt(c_bar.size) / float(np.linalg.norm(c_bar))


def gaussian_ball_alpha(c_bar, sigma: float, beta: float) -> float:
    """P(||c - c_bar|| <= beta ||c_bar||) for N(c_bar, sigma^2 I), via the chi-square cdf."""
    c_bar = np.asarray(c_bar, dtype=float)
    radius = beta * float(np.linalg.norm(c_bar)) / sigma
    return float(chi2.cdf(radius ** 2, df=c_bar.size))


# randomized calibration searches ------------------------------------------------------------

def _excess_spo_along(region, c_bar, direction, ts):
    C = c_bar + np.outer(ts, direction)
    W = solve_batch(region, np.vstack([C, c_bar])).w
    return np.maximum((W[:-1] - W[-1]) @ c_bar, 0.0)


def _boundary_prediction(region, c_bar, direction, epsilon, t_max, grid=64, iters=40):
    """First step t on the ray c_bar + t*direction where excess SPO reaches epsilon.

    A batched grid brackets the first crossing, then bisection refines it.
    Returns None when no grid point up to t_max reaches epsilon.
    """
    ts = np.linspace(0.0, t_max, grid + 1)[1:]
    hit = np.flatnonzero(_excess_spo_along(region, c_bar, direction, ts) >= epsilon)
    if hit.size == 0:
        return None
    hi = float(ts[hit[0]])
    lo = float(ts[hit[0] - 1]) if hit[0] > 0 else 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if excess_spo_risk(region, c_bar, c_bar + mid * direction) >= epsilon:
            hi = mid
        else:
            lo = mid
    return c_bar + hi * direction


def _calibration_search(region, epsilon_grid, trials, mc_samples, seed, draw_case, bound_fn,
                        on_simplex: bool):
    d = region.dim
    rows, slacks, witness = [], [], {}
    for e_idx, eps in enumerate(epsilon_grid):
        rng = rng_for(seed, e_idx)
        done = filtered = 0
        while done < trials:
            c_bar, sigma = draw_case(rng)
            u = rng.standard_normal(d)
            if on_simplex:
                u = project_orthogonal(u)
            u /= np.linalg.norm(u)
            scale = float(np.linalg.norm(c_bar))
            c_hat = _boundary_prediction(region, c_bar, scale * u, eps, t_max=4.0)
            if c_hat is None:
                filtered += 1
                if filtered > 50 * trials:
                    raise RuntimeError("search cannot reach the requested excess SPO level")
                continue
            dist = ConditionalDistribution.gaussian(c_bar, sigma)
            est, se = excess_spoplus_risk_mc(region, dist, c_hat, mc_samples,
                                             int(rng.integers(0, 2 ** 63)))
            bound = bound_fn(c_bar, sigma, eps)
            slack = est - (bound - 3.0 * se)
            slacks.append(slack)
            row = {"epsilon": float(eps), "trial": done, "sigma": float(sigma),
                   "excess_spo": excess_spo_risk(region, c_bar, c_hat),
                   "excess_spoplus": est, "stderr": se, "bound": bound, "slack": slack}
            rows.append(row)
            if slack < 0 and not witness:
                witness = {"c_bar": c_bar.tolist(), "c_hat": c_hat.tolist(), **row}
            done += 1
    rep = _report(slacks, 0.0, lambda i: witness, rows)
    return rep


def verify_theorem31(region: FeasibleRegion, epsilon_grid, trials: int, mc_samples: int, seed: int,
                     sigma_range=(0.5, 1.5), mean_norm_range=(0.5, 2.0)) -> ViolationReport:
    """Randomized search for predictions that beat the polyhedral bound.

    Each trial draws a Gaussian conditional, picks a random direction and
    moves c_hat from c_bar to the first point whose excess SPO reaches eps.
    """
    geo = geometry_constants(region)

    def draw(rng):
        u = rng.standard_normal(region.dim)
        c_bar = u / np.linalg.norm(u) * rng.uniform(*mean_norm_range)
        return c_bar, float(rng.uniform(*sigma_range))

    def bound(c_bar, sigma, eps):
        a, b, M = gaussian_polyhedral_params(c_bar, sigma)
        return theorem31_rhs(a, b, M, geo, eps)

    return _calibration_search(region, epsilon_grid, trials, mc_samples, seed, draw, bound, False)


def verify_theorem_strong(region: FeasibleRegion, sigma_over_mean: float, epsilon_grid, trials: int,
                          mc_samples: int, seed: int, mean_norm_range=(0.5, 2.0)) -> ViolationReport:
    """Randomized search against the linear level-set bound.

    Conditional means lie in the sum-zero subspace; sigma is
    ``sigma_over_mean * ||c_bar||`` so beta is the same for every trial.
    """
    mu, L, _ = geometry_constants(region).require_level()

    def draw(rng):
        u = project_orthogonal(rng.standard_normal(region.dim))
        norm = rng.uniform(*mean_norm_range)
        c_bar = u / np.linalg.norm(u) * norm
        return c_bar, sigma_over_mean * norm

    def bound(c_bar, sigma, eps):
        return theorem41_rhs(1.0, gaussian_beta(c_bar, sigma), mu, L, eps)

    return _calibration_search(region, epsilon_grid, trials, mc_samples, seed, draw, bound, True)
