"""SPO, SPO+, least-squares and absolute losses with their (sub)gradients.

Single-vector functions mirror the textbook definitions; the ``*_batch``
helpers are what training uses (one row per sample).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .regions import (
    FeasibleRegion,
    RegionError,
    RegionKind,
    oracle_jacobian,
    oracle_vjp_batch,
    project_orthogonal,
    solve_batch,
)

NEG_TOL = 1e-10


class LossTag(str, enum.Enum):
    SPO = "spo"
    SPO_PLUS = "spo_plus"
    LEAST_SQUARES = "least_squares"
    ABSOLUTE = "absolute"


@dataclass(frozen=True)
class LossKind:
    tag: LossTag
    region: Optional[FeasibleRegion] = None
    name: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "tag", LossTag(self.tag))
        if self.tag in (LossTag.SPO, LossTag.SPO_PLUS) and self.region is None:
            raise RegionError(f"{self.tag.value} needs a feasible region")
        if self.tag is LossTag.SPO and self.region.kind is not RegionKind.ENTROPY_SIMPLEX:
            raise RegionError("SPO-loss gradients need a differentiable oracle (entropy_simplex)")
        if self.name is None:
            object.__setattr__(self, "name", self.tag.value)

    @property
    def needs_oracle(self) -> bool:
        return self.tag in (LossTag.SPO, LossTag.SPO_PLUS)


LOSS_NAMES = ("spo", "spo_plus", "least_squares", "absolute", "spo_plus_barrier")


def loss_from_name(name: str, region: FeasibleRegion) -> LossKind:
    """Build a loss from its config name.

    ``spo_plus_barrier`` trains SPO+ over the log-barrier approximation of the
    unit simplex (r = 2 d log d) in the dimension of ``region``.
    """
    if name == "spo_plus_barrier":
        return LossKind(LossTag.SPO_PLUS, FeasibleRegion.log_barrier_simplex(region.dim), name=name)
    if name not in LOSS_NAMES:
        raise ValueError(f"unknown loss {name!r}; expected one of {LOSS_NAMES}")
    tag = LossTag(name)
    return LossKind(tag, region if tag in (LossTag.SPO, LossTag.SPO_PLUS) else None)


def _pair(c_hat, c):
    c_hat = np.asarray(c_hat, dtype=float)
    c = np.asarray(c, dtype=float)
    if c_hat.shape != c.shape:
        raise ValueError(f"shape mismatch: {c_hat.shape} vs {c.shape}")
    return c_hat, c


def _w(region, c):
    return solve_batch(region, c[None, :]).w[0]


def spo_loss(region: FeasibleRegion, c_hat, c) -> float:
    c_hat, c = _pair(c_hat, c)
    val = float(c @ _w(region, c_hat) - c @ _w(region, c))
    if val < -NEG_TOL * max(1.0, float(np.max(np.abs(c)))):
        raise ArithmeticError(f"negative SPO loss {val:.3e}: oracle returned a suboptimal point")
    return max(val, 0.0)


def spoplus_loss(region: FeasibleRegion, c_hat, c) -> float:
    c_hat, c = _pair(c_hat, c)
    q = 2.0 * c_hat - c
    wc = _w(region, c)
    return float(-(q @ _w(region, q)) + 2.0 * c_hat @ wc - c @ wc)


def spoplus_subgradient(region: FeasibleRegion, c_hat, c) -> np.ndarray:
    c_hat, c = _pair(c_hat, c)
    return 2.0 * (_w(region, c) - _w(region, 2.0 * c_hat - c))


def spo_gradient_via_jacobian(region: FeasibleRegion, c_hat, c) -> np.ndarray:
    """Gradient of c_hat -> c^T w*(c_hat) on the entropy simplex."""
    c_hat, c = _pair(c_hat, c)
    return oracle_jacobian(region, c_hat).T @ c


def ls_loss(c_hat, c) -> float:
    c_hat, c = _pair(c_hat, c)
    return float(np.sum((c_hat - c) ** 2))


def ls_gradient(c_hat, c) -> np.ndarray:
    c_hat, c = _pair(c_hat, c)
    return 2.0 * (c_hat - c)


def abs_loss(c_hat, c) -> float:
    c_hat, c = _pair(c_hat, c)
    return float(np.sum(np.abs(c_hat - c)))


def abs_subgradient(c_hat, c) -> np.ndarray:
    c_hat, c = _pair(c_hat, c)
    return np.sign(c_hat - c)


# batched ------------------------------------------------------------------------

def spo_loss_batch(region: FeasibleRegion, C_hat, C, W_true=None) -> np.ndarray:
    C_hat, C = _pair(C_hat, C)
    if W_true is None:
        W_true = solve_batch(region, C).w
    vals = np.einsum("ij,ij->i", C, solve_batch(region, C_hat).w - W_true)
    return np.maximum(vals, 0.0)


def spoplus_loss_batch(region: FeasibleRegion, C_hat, C, W_true=None) -> np.ndarray:
    C_hat, C = _pair(C_hat, C)
    if W_true is None:
        W_true = solve_batch(region, C).w
    Q = 2.0 * C_hat - C
    Wq = solve_batch(region, Q).w
    return -np.einsum("ij,ij->i", Q, Wq) + np.einsum("ij,ij->i", 2.0 * C_hat - C, W_true)


def loss_and_grad_batch(loss: LossKind, C_hat, C, W_true=None):
    """Per-row loss values and gradients with respect to the predictions.

    ``W_true`` caches w*(c) for the realized costs (SPO and SPO+ only).
    """
    C_hat, C = _pair(C_hat, C)
    tag = loss.tag
    if tag is LossTag.LEAST_SQUARES:
        D = C_hat - C
        return np.sum(D * D, axis=1), 2.0 * D
    if tag is LossTag.ABSOLUTE:
        D = C_hat - C
        return np.sum(np.abs(D), axis=1), np.sign(D)
    region = loss.region
    if W_true is None:
        W_true = solve_batch(region, C).w
    if tag is LossTag.SPO_PLUS:
        Q = 2.0 * C_hat - C
        Wq = solve_batch(region, Q).w
        vals = -np.einsum("ij,ij->i", Q, Wq) + np.einsum("ij,ij->i", Q, W_true)
        return vals, 2.0 * (W_true - Wq)
    # rows with a vanishing projected prediction get a zero gradient
    smooth = np.linalg.norm(project_orthogonal(C_hat), axis=1) > 1e-8
    G = np.zeros_like(C_hat)
    W_hat = np.empty_like(C_hat)
    if np.any(smooth):
        G[smooth], W_hat[smooth] = oracle_vjp_batch(region, C_hat[smooth], C[smooth])
    if not np.all(smooth):
        W_hat[~smooth] = solve_batch(region, C_hat[~smooth]).w
    vals = np.maximum(np.einsum("ij,ij->i", C, W_hat - W_true), 0.0)
    return vals, G


def loss_batch(loss: LossKind, C_hat, C, W_true=None) -> np.ndarray:
    C_hat, C = _pair(C_hat, C)
    tag = loss.tag
    if tag is LossTag.LEAST_SQUARES:
        return np.sum((C_hat - C) ** 2, axis=1)
    if tag is LossTag.ABSOLUTE:
        return np.sum(np.abs(C_hat - C), axis=1)
    if tag is LossTag.SPO_PLUS:
        return spoplus_loss_batch(loss.region, C_hat, C, W_true)
    return spo_loss_batch(loss.region, C_hat, C, W_true)
