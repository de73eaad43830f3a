"""Feasible regions, linear-optimization oracles and geometry constants.

Every oracle solves ``min_{w in S} c^T w``.  The batched entry point
:func:`solve_batch` is the workhorse used by training and Monte-Carlo code;
:func:`oracle_solve` wraps it for a single cost vector.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np


class RegionError(ValueError):
    """Malformed region parameters or mismatched inputs."""


class OracleError(RuntimeError):
    """A level-set root finder failed to bracket or converge."""


class NonDifferentiableError(ValueError):
    """The oracle is not differentiable at the requested cost vector."""


class RegionKind(str, enum.Enum):
    UNIT_SIMPLEX = "unit_simplex"
    BOX = "box"
    L1_BALL = "l1_ball"
    ENTROPY_SIMPLEX = "entropy_simplex"
    LOG_BARRIER_SIMPLEX = "log_barrier_simplex"


LEVEL_SET_KINDS = (RegionKind.ENTROPY_SIMPLEX, RegionKind.LOG_BARRIER_SIMPLEX)

# root-finder settings for the level-set oracles
LEVEL_TOL = 1e-12
MAX_ITER = 200
FEAS_TOL = 1e-10


@dataclass(frozen=True)
class FeasibleRegion:
    kind: RegionKind
    dim: int
    radius: Optional[float] = None
    lo: Optional[tuple] = None
    hi: Optional[tuple] = None
    level_r: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", RegionKind(self.kind))
        d = self.dim
        if not isinstance(d, (int, np.integer)) or d < 1:
            raise RegionError(f"dim must be a positive integer, got {d!r}")
        object.__setattr__(self, "dim", int(d))
        if self.kind is RegionKind.L1_BALL:
            if self.radius is None or not self.radius > 0:
                raise RegionError("l1_ball needs radius > 0")
        elif self.kind is RegionKind.BOX:
            if self.lo is None or self.hi is None:
                raise RegionError("box needs lo and hi")
            lo = tuple(float(v) for v in self.lo)
            hi = tuple(float(v) for v in self.hi)
            if len(lo) != d or len(hi) != d:
                raise RegionError("box bounds must have length dim")
            if not all(a < b for a, b in zip(lo, hi)):
                raise RegionError("box needs lo < hi componentwise")
            object.__setattr__(self, "lo", lo)
            object.__setattr__(self, "hi", hi)
        elif self.kind is RegionKind.ENTROPY_SIMPLEX:
            r = self.level_r
            if d < 2:
                raise RegionError("entropy_simplex needs dim >= 2")
            if r is None or not (-math.log(d) < r < 0.0):
                raise RegionError(f"entropy_simplex needs -log(d) < r < 0, got r={r!r}")
        elif self.kind is RegionKind.LOG_BARRIER_SIMPLEX:
            r = self.level_r
            if d < 2:
                raise RegionError("log_barrier_simplex needs dim >= 2")
            if r is None or not r > d * math.log(d):
                raise RegionError(f"log_barrier_simplex needs r > d log d, got r={r!r}")

    # constructors -----------------------------------------------------------
    @classmethod
    def unit_simplex(cls, dim: int) -> "FeasibleRegion":
        return cls(RegionKind.UNIT_SIMPLEX, dim)

    @classmethod
    def box(cls, lo, hi) -> "FeasibleRegion":
        return cls(RegionKind.BOX, len(lo), lo=tuple(lo), hi=tuple(hi))

    @classmethod
    def l1_ball(cls, dim: int, radius: float = 1.0) -> "FeasibleRegion":
        return cls(RegionKind.L1_BALL, dim, radius=float(radius))

    @classmethod
    def entropy_simplex(cls, dim: int, level_r: float) -> "FeasibleRegion":
        return cls(RegionKind.ENTROPY_SIMPLEX, dim, level_r=float(level_r))

    @classmethod
    def log_barrier_simplex(cls, dim: int, level_r: Optional[float] = None) -> "FeasibleRegion":
        if level_r is None:
            level_r = 2.0 * dim * math.log(dim)
        return cls(RegionKind.LOG_BARRIER_SIMPLEX, dim, level_r=float(level_r))

    # helpers -----------------------------------------------------------------
    @property
    def is_level_set(self) -> bool:
        return self.kind in LEVEL_SET_KINDS

    @property
    def on_simplex(self) -> bool:
        return self.kind in (RegionKind.UNIT_SIMPLEX, *LEVEL_SET_KINDS)

    def level_value(self, w) -> np.ndarray:
        """Value of the level function f at ``w`` (last axis)."""
        w = np.asarray(w, dtype=float)
        if self.kind is RegionKind.ENTROPY_SIMPLEX:
            return entropy_value(w)
        if self.kind is RegionKind.LOG_BARRIER_SIMPLEX:
            with np.errstate(divide="ignore"):
                return -np.sum(np.log(w), axis=-1)
        raise RegionError(f"{self.kind.value} has no level function")

    def contains(self, w, tol: float = FEAS_TOL) -> bool:
        w = np.asarray(w, dtype=float)
        if w.shape[-1] != self.dim:
            return False
        k = self.kind
        if k is RegionKind.BOX:
            return bool(np.all(w >= np.array(self.lo) - tol) and np.all(w <= np.array(self.hi) + tol))
        if k is RegionKind.L1_BALL:
            return bool(np.all(np.sum(np.abs(w), axis=-1) <= self.radius + tol))
        ok = np.all(w >= -tol) and np.all(np.abs(np.sum(w, axis=-1) - 1.0) <= tol)
        if k is RegionKind.LOG_BARRIER_SIMPLEX:
            ok = ok and np.all(w > 0)
        if k in LEVEL_SET_KINDS:
            ok = ok and np.all(self.level_value(np.clip(w, 0.0, None)) <= self.level_r + tol)
        return bool(ok)

    def to_config(self) -> dict:
        out = {"kind": self.kind.value, "dim": self.dim}
        if self.radius is not None:
            out["radius"] = self.radius
        if self.lo is not None:
            out["lo"] = list(self.lo)
            out["hi"] = list(self.hi)
        if self.level_r is not None:
            out["level_r"] = self.level_r
        return out

    @classmethod
    def from_config(cls, block: dict) -> "FeasibleRegion":
        block = dict(block)
        kind = RegionKind(block.pop("kind"))
        dim = block.pop("dim", None)
        if kind is RegionKind.BOX:
            return cls.box(block["lo"], block["hi"])
        if kind is RegionKind.LOG_BARRIER_SIMPLEX:
            return cls.log_barrier_simplex(int(dim), block.get("level_r"))
        if dim is None:
            raise RegionError("region config needs dim")
        return cls(kind, int(dim), radius=block.get("radius"), level_r=block.get("level_r"))


def entropy_value(w) -> np.ndarray:
    """sum_i w_i log w_i along the last axis, with 0 log 0 = 0."""
    w = np.asarray(w, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(w > 0, w * np.log(np.where(w > 0, w, 1.0)), 0.0)
    return np.sum(t, axis=-1)


class Status(str, enum.Enum):
    EXACT = "exact"
    CONVERGED = "converged"
    DEGENERATE_TIE_BROKEN = "degenerate_tie_broken"


@dataclass
class OracleSolution:
    w: np.ndarray
    objective: float
    multiplier_u: Optional[float]
    status: Status
    residual: float = 0.0


class BatchSolution(NamedTuple):
    w: np.ndarray  # (n, d)
    u: Optional[np.ndarray]  # (n,) level-constraint multipliers, None for polyhedra
    residual: np.ndarray  # (n,) |f(w) - r| for level sets, 0 otherwise
    tie: np.ndarray  # (n,) bool, a tie-break was applied
    beta: Optional[np.ndarray] = None  # entropy only: w = softmax(-beta * c)


def project_orthogonal(c) -> np.ndarray:
    """Remove the component of ``c`` along the all-ones direction."""
    c = np.asarray(c, dtype=float)
    return c - np.mean(c, axis=-1, keepdims=True)


def _as_batch(region: FeasibleRegion, C) -> np.ndarray:
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[1] != region.dim:
        raise RegionError(f"expected cost array of shape (n, {region.dim}), got {C.shape}")
    if not np.all(np.isfinite(C)):
        raise RegionError("cost vector contains non-finite entries")
    return C


def solve_batch(region: FeasibleRegion, C) -> BatchSolution:
    """Solve ``min_{w in S} c^T w`` for every row of ``C``."""
    C = _as_batch(region, C)
    k = region.kind
    if k is RegionKind.UNIT_SIMPLEX:
        return _unit_simplex(C)
    if k is RegionKind.BOX:
        return _box(C, np.array(region.lo), np.array(region.hi))
    if k is RegionKind.L1_BALL:
        return _l1_ball(C, region.radius)
    if k is RegionKind.ENTROPY_SIMPLEX:
        return _entropy(C, region.level_r)
    return _log_barrier(C, region.level_r)


def oracle_solve(region: FeasibleRegion, c) -> OracleSolution:
    c = np.asarray(c, dtype=float)
    if c.ndim != 1:
        raise RegionError("oracle_solve expects a single cost vector")
    sol = solve_batch(region, c[None, :])
    w = sol.w[0]
    if sol.tie[0]:
        status = Status.DEGENERATE_TIE_BROKEN
    elif region.is_level_set:
        status = Status.CONVERGED
    else:
        status = Status.EXACT
    u = None if sol.u is None else float(sol.u[0])
    return OracleSolution(w, float(c @ w), u, status, float(sol.residual[0]))


def optimal_values(region: FeasibleRegion, C) -> np.ndarray:
    """z*(c) = min_{w in S} c^T w for each row."""
    C = _as_batch(region, C)
    return np.einsum("ij,ij->i", C, solve_batch(region, C).w)


# polyhedral oracles -----------------------------------------------------------

def _unit_simplex(C):
    n, d = C.shape
    j = np.argmin(C, axis=1)
    W = np.zeros_like(C)
    W[np.arange(n), j] = 1.0
    tie = np.sum(C == C[np.arange(n), j][:, None], axis=1) > 1
    return BatchSolution(W, None, np.zeros(n), tie)


def _box(C, lo, hi):
    W = np.where(C > 0, lo, hi)
    W = np.where(C == 0, lo, W)
    tie = np.any(C == 0, axis=1)
    return BatchSolution(W, None, np.zeros(len(C)), tie)


def _l1_ball(C, radius):
    n, d = C.shape
    A = np.abs(C)
    j = np.argmax(A, axis=1)
    cj = C[np.arange(n), j]
    W = np.zeros_like(C)
    W[np.arange(n), j] = -radius * np.where(cj < 0, -1.0, 1.0)
    tie = np.sum(A == A[np.arange(n), j][:, None], axis=1) > 1
    return BatchSolution(W, None, np.zeros(n), tie)


# level-set oracles ------------------------------------------------------------

def _monotone_root(evaluate: Callable, x0: np.ndarray, tol: float = LEVEL_TOL,
                   max_iter: int = MAX_ITER):
    """Row-wise safeguarded Newton for increasing scalar functions of x in R.

    ``evaluate(x, idx)`` returns (residual, derivative) for the rows ``idx``.
    Newton steps are kept inside the current bracket; without a finite
    bracket on one side the iterate moves one unit towards it.
    """
    x = np.array(x0, dtype=float)
    n = len(x)
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    res = np.full(n, np.inf)
    active = np.arange(n)
    for _ in range(max_iter):
        if active.size == 0:
            break
        xa = x[active]
        ra, da = evaluate(xa, active)
        res[active] = ra
        done = np.abs(ra) <= tol
        lo_a = np.where(ra < 0, xa, lo[active])
        hi_a = np.where(ra > 0, xa, hi[active])
        lo[active] = lo_a
        hi[active] = hi_a
        stalled = np.isfinite(lo_a) & np.isfinite(hi_a) & (
            hi_a - lo_a <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(xa)))
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            newton = xa - ra / da
        ok = np.isfinite(newton) & (newton > lo_a) & (newton < hi_a) & (np.abs(newton - xa) <= 4.0)
        mid = np.where(np.isfinite(lo_a) & np.isfinite(hi_a), 0.5 * (lo_a + hi_a),
                       np.where(np.isfinite(lo_a), xa + 1.0, xa - 1.0))
        x[active] = np.where(done | stalled, xa, np.where(ok, newton, mid))
        active = active[~(done | stalled)]
    converged = np.ones(n, dtype=bool)
    converged[active] = False
    return x, res, converged


def _softmax_rows(Z):
    Z = Z - np.max(Z, axis=1, keepdims=True)
    E = np.exp(Z)
    S = np.sum(E, axis=1, keepdims=True)
    return E / S, Z - np.log(S)


def _entropy(C, r):
    n, d = C.shape
    Ct = C - C.mean(axis=1, keepdims=True)
    nrm = np.linalg.norm(Ct, axis=1)
    scale = np.maximum(1.0, np.max(np.abs(C), axis=1))
    zero = nrm <= 1e-14 * scale
    W = np.full((n, d), 1.0 / d)
    beta = np.zeros(n)
    residual = np.zeros(n)
    tie = np.zeros(n, dtype=bool)
    live = np.flatnonzero(~zero)
    if live.size == 0:
        return BatchSolution(W, np.full(n, np.inf), residual, tie, beta)
    A = Ct[live] / nrm[live, None]

    # as beta -> inf the optimum tends to uniform weight on argmin; if that limit
    # already satisfies the level constraint the constraint is inactive
    amin = A.min(axis=1, keepdims=True)
    at_min = A - amin <= 1e-13
    k = at_min.sum(axis=1)
    flat = -np.log(k) <= r + 1e-15
    if np.any(flat):
        rows = np.flatnonzero(flat)
        Wf = at_min[rows] / k[rows, None]
        W[live[rows]] = Wf
        beta[live[rows]] = np.inf
        tie[live[rows]] = k[rows] > 1
        residual[live[rows]] = 0.0
    solve = np.flatnonzero(~flat)
    if solve.size:
        As = A[solve]

        def evaluate(x, idx):
            b = np.exp(x)
            Wb, logW = _softmax_rows(-b[:, None] * As[idx])
            phi = np.sum(Wb * logW, axis=1)
            m = np.sum(Wb * As[idx], axis=1, keepdims=True)
            var = np.sum(Wb * (As[idx] - m) ** 2, axis=1)
            return phi - r, b * b * var

        # small-beta expansion: f - f_min ~ beta^2 / (2 d) for unit-norm costs
        x0 = np.full(solve.size, 0.5 * math.log(2.0 * d * (r + math.log(d))))
        x, res, conv = _monotone_root(evaluate, x0)
        bad = ~conv & ~(np.abs(res) <= 1e-9)
        if np.any(bad):
            raise OracleError(f"entropy oracle failed to converge (worst residual {np.max(np.abs(res[bad])):.3e})")
        b = np.exp(x)
        Ws, _ = _softmax_rows(-b[:, None] * As)
        W[live[solve]] = Ws
        residual[live[solve]] = np.abs(entropy_value(Ws) - r)
        beta[live[solve]] = b
    beta[live] = beta[live] / nrm[live]
    with np.errstate(divide="ignore"):
        u = np.where(beta > 0, 1.0 / beta, np.inf)
    u[zero] = np.inf
    beta[zero] = 0.0
    return BatchSolution(W, u, residual, tie, beta)


def _log_barrier(C, r):
    n, d = C.shape
    cmin = C.min(axis=1, keepdims=True)
    span = (C.max(axis=1) - cmin[:, 0])
    scale = np.maximum(1.0, np.max(np.abs(C), axis=1))
    zero = span <= 1e-14 * scale
    W = np.full((n, d), 1.0 / d)
    u = np.full(n, np.inf)
    residual = np.zeros(n)
    live = np.flatnonzero(~zero)
    if live.size:
        A = (C[live] - cmin[live]) / span[live, None]

        # x = -log(s) with w_i proportional to 1 / (a_i + s)
        def evaluate(x, idx):
            s = np.exp(-x)[:, None]
            Q = 1.0 / (A[idx] + s)
            sq = Q.sum(axis=1)
            h = np.sum(np.log(A[idx] + s), axis=1) + d * np.log(sq)
            dh_ds = sq - d * np.sum(Q * Q, axis=1) / sq
            return h - r, -s[:, 0] * dh_ds

        at = np.linalg.norm(A - A.mean(axis=1, keepdims=True), axis=1)
        x0 = -np.log(at / math.sqrt(2.0 * (r - d * math.log(d))))
        x, res, conv = _monotone_root(evaluate, x0)
        bad = ~conv & ~(np.abs(res) <= 1e-9)
        if np.any(bad):
            raise OracleError("log-barrier oracle failed to converge")
        s = np.exp(-x)[:, None]
        Q = 1.0 / (A + s)
        sq = Q.sum(axis=1)
        Wl = Q / sq[:, None]
        W[live] = Wl
        residual[live] = np.abs(-np.sum(np.log(Wl), axis=1) - r)
        u[live] = span[live] / sq
    return BatchSolution(W, u, residual, np.zeros(n, dtype=bool))


def kkt_residual(region: FeasibleRegion, c, sol: OracleSolution) -> float:
    """Relative stationarity residual ||c~ + u * proj(grad f(w))|| / ||c~||.

    Zero for polyhedral kinds and for level sets at the degenerate inputs
    where the level constraint is inactive. Coordinates that underflow to
    subnormals carry too few bits for log(w), so the value is only
    meaningful when every w_i is a normal float.
    """
    if not region.is_level_set or sol.multiplier_u is None or not np.isfinite(sol.multiplier_u):
        return 0.0
    c = np.asarray(c, dtype=float)
    w = sol.w
    if np.any(w <= 0):
        return math.inf
    if region.kind is RegionKind.ENTROPY_SIMPLEX:
        grad = np.log(w) + 1.0
    else:
        grad = -1.0 / w
    ct = project_orthogonal(c)
    return float(np.linalg.norm(ct + sol.multiplier_u * project_orthogonal(grad)) / np.linalg.norm(ct))


# differentiability --------------------------------------------------------------

def _entropy_jacobian_parts(region, C_hat):
    if region.kind is not RegionKind.ENTROPY_SIMPLEX:
        raise RegionError("oracle Jacobian is only available for entropy_simplex")
    C_hat = _as_batch(region, C_hat)
    Ct = project_orthogonal(C_hat)
    if np.any(np.linalg.norm(Ct, axis=1) <= 1e-8):
        raise NonDifferentiableError("projected cost is (numerically) zero")
    sol = solve_batch(region, C_hat)
    if np.any(~np.isfinite(sol.beta)):
        raise NonDifferentiableError("level constraint inactive; oracle is locally constant")
    W = sol.w
    m = np.sum(W * Ct, axis=1, keepdims=True)
    Sv = W * (Ct - m)
    v = np.sum(Sv * (Ct - m), axis=1)
    return W, sol.beta, Sv, v


def oracle_jacobian(region: FeasibleRegion, c) -> np.ndarray:
    """Jacobian dw*/dc of the entropy-simplex oracle (a symmetric d x d matrix)."""
    c = np.asarray(c, dtype=float)
    W, beta, Sv, v = _entropy_jacobian_parts(region, c[None, :])
    w, s = W[0], Sv[0]
    soft = np.diag(w) - np.outer(w, w)
    return -beta[0] * (soft - np.outer(s, s) / v[0])


def oracle_vjp_batch(region: FeasibleRegion, C_hat, G) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise J(c_hat)^T g together with w*(c_hat); J is symmetric."""
    W, beta, Sv, v = _entropy_jacobian_parts(region, C_hat)
    G = np.asarray(G, dtype=float)
    wg = np.sum(W * G, axis=1, keepdims=True)
    sg = np.sum(Sv * G, axis=1, keepdims=True)
    out = -beta[:, None] * (W * G - W * wg - Sv * sg / v[:, None])
    return out, W


# geometry -------------------------------------------------------------------------

@dataclass(frozen=True)
class GeometryConstants:
    diameter: float
    width: float
    xi: float
    mu: Optional[float] = None
    L_smooth: Optional[float] = None
    f_min: Optional[float] = None
    t_min: Optional[float] = field(default=None, compare=False)

    def require_level(self):
        if self.mu is None or self.L_smooth is None or self.f_min is None:
            raise RegionError("constants mu, L, f_min are only defined for level-set regions")
        if not np.isfinite(self.L_smooth):
            raise RegionError("L is infinite: the level set touches the simplex boundary")
        return self.mu, self.L_smooth, self.f_min


def xi_constant(diameter: float, width: float, dim: int) -> float:
    if width <= 0:
        return 0.0
    return (1.0 + 2.0 * math.sqrt(3.0) * diameter / width) ** (1 - dim)


def _bisect_decreasing(g, lo, hi, target, iters=200):
    # g decreasing on (lo, hi); returns t with g(t) = target
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if g(mid) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-17:
            break
    return 0.5 * (lo + hi)


def entropy_min_coordinate(dim: int, r: float) -> float:
    """Smallest coordinate on {w in simplex: sum w log w <= r}.

    Zero when the set reaches the simplex boundary (r >= -log(d-1)).
    """
    if dim == 2:
        bound = 0.0
    else:
        bound = -math.log(dim - 1)
    if r >= bound:
        return 0.0

    def g(t):
        rest = (1.0 - t) / (dim - 1)
        return (t * math.log(t) if t > 0 else 0.0) + (1.0 - t) * math.log(rest)

    return _bisect_decreasing(g, 0.0, 1.0 / dim, r)


def barrier_min_coordinate(dim: int, r: float) -> float:
    """Smallest coordinate on {w in simplex: -sum log w <= r}."""

    def g(t):
        return -math.log(t) - (dim - 1) * math.log((1.0 - t) / (dim - 1))

    return _bisect_decreasing(g, 1e-300, 1.0 / dim, r)


def entropy_valid_range(dim: int) -> tuple[float, float]:
    """Open interval of r where the entropy set stays inside the open simplex."""
    upper = -math.log(dim - 1) if dim > 2 else 0.0
    return -math.log(dim), upper


def geometry_constants(region: FeasibleRegion) -> GeometryConstants:
    d = region.dim
    k = region.kind
    if k is RegionKind.L1_BALL:
        D = 2.0 * region.radius
        w = 2.0 * region.radius / math.sqrt(d)
        return GeometryConstants(D, w, xi_constant(D, w, d))
    if k is RegionKind.BOX:
        side = np.array(region.hi) - np.array(region.lo)
        D = float(np.linalg.norm(side))
        w = float(side.min())
        return GeometryConstants(D, w, xi_constant(D, w, d))
    simplex_diam = math.sqrt(2.0) if d > 1 else 0.0
    if k is RegionKind.UNIT_SIMPLEX:
        return GeometryConstants(simplex_diam, 0.0, 0.0)
    r = region.level_r
    if k is RegionKind.ENTROPY_SIMPLEX:
        t = entropy_min_coordinate(d, r)
        L = 1.0 / t if t > 0 else math.inf
        # diameter reported as the simplex diameter, an upper bound
        return GeometryConstants(simplex_diam, 0.0, 0.0, mu=1.0, L_smooth=L, f_min=-math.log(d), t_min=t)
    t = barrier_min_coordinate(d, r)
    return GeometryConstants(simplex_diam, 0.0, 0.0, mu=1.0, L_smooth=1.0 / t ** 2,
                             f_min=d * math.log(d), t_min=t)


# independent reference oracles -------------------------------------------------------

def vertices(region: FeasibleRegion) -> np.ndarray:
    """Extreme points of a polyhedral region (used by brute-force checks)."""
    d = region.dim
    if region.kind is RegionKind.UNIT_SIMPLEX:
        return np.eye(d)
    if region.kind is RegionKind.L1_BALL:
        return region.radius * np.concatenate([np.eye(d), -np.eye(d)])
    if region.kind is RegionKind.BOX:
        lo, hi = np.array(region.lo), np.array(region.hi)
        bits = (np.arange(2 ** d)[:, None] >> np.arange(d)) & 1
        return np.where(bits == 1, hi, lo)
    raise RegionError("vertex enumeration needs a polyhedral region")


def dual_optimal_value(region: FeasibleRegion, c) -> float:
    """z*(c) from the one-dimensional Lagrangian dual of a level-set region.

    Entropy: max_{u>0} -u logsumexp(-c/u) - u r.
    Log barrier: max_{lam > -min c} d exp((sum log(c + lam) - r) / d) - lam.
    """
    from scipy.optimize import minimize_scalar
    from scipy.special import logsumexp

    c = np.asarray(c, dtype=float)
    d = region.dim
    r = region.level_r
    spread = max(float(np.ptp(c)), 1e-300)
    grid = np.linspace(math.log(spread) - 40, math.log(spread) + 10, 401)

    if region.kind is RegionKind.ENTROPY_SIMPLEX:
        def neg(t):
            u = np.exp(t)
            return u * logsumexp(-np.multiply.outer(1.0 / u, c), axis=-1) + u * r
    elif region.kind is RegionKind.LOG_BARRIER_SIMPLEX:
        cmin = float(c.min())
        shifted = c - cmin

        def neg(t):
            s = np.exp(t)
            logs = np.sum(np.log(np.add.outer(s, shifted)), axis=-1)
            return -(d * np.exp((logs - r) / d) - (s - cmin))
    else:
        raise RegionError("dual value only implemented for level-set regions")

    # coarse log-spaced grid over the multiplier, then a bounded 1-D refine
    vals = neg(grid)
    i = int(np.argmin(vals))
    res = minimize_scalar(lambda t: float(neg(t)), bounds=(grid[max(i - 1, 0)], grid[min(i + 1, 400)]),
                          method="bounded", options={"xatol": 1e-14})
    return float(-min(res.fun, vals[i]))


def primal_reference_solve(region: FeasibleRegion, c) -> np.ndarray:
    """General-purpose NLP solve (SLSQP) of a level-set oracle; slow, for tests.

    Works in softmax coordinates w = softmax(theta), which removes the simplex
    constraints, from a few interior starts. Keeps the best point that meets
    the level constraint to 1e-9 and raises OracleError if none does.
    """
    from scipy.optimize import minimize
    from scipy.special import softmax

    c = np.asarray(c, dtype=float)
    d = region.dim
    center = np.full(d, 1.0 / d)

    def level(w):
        return region.level_r - region.level_value(np.clip(w, 1e-300, None))

    def level_grad_w(w):
        w = np.clip(w, 1e-300, None)
        if region.kind is RegionKind.ENTROPY_SIMPLEX:
            return -(np.log(w) + 1.0)
        return 1.0 / w

    def pull_back(w, g):
        # chain rule through the softmax Jacobian diag(w) - w w^T
        return w * (g - w @ g)

    vertex = solve_batch(FeasibleRegion.unit_simplex(d), c[None]).w[0]
    best = None
    for mix in (0.0, 0.5, 0.9):
        w0 = (1.0 - mix) * center + mix * vertex
        while level(w0) < 0:
            w0 = 0.5 * (w0 + center)
        res = minimize(lambda t: c @ softmax(t), np.log(w0),
                       jac=lambda t: pull_back(softmax(t), c), method="SLSQP",
                       constraints=[{"type": "ineq", "fun": lambda t: level(softmax(t)),
                                     "jac": lambda t: pull_back(softmax(t), level_grad_w(softmax(t)))}],
                       options={"ftol": 1e-15, "maxiter": 1000})
        x = softmax(res.x)
        if level(x) >= -1e-9 and (best is None or c @ x < c @ best):
            best = x
    if best is None:
        raise OracleError("reference NLP solve found no feasible point")
    return best
