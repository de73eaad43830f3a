"""Synthetic portfolio and cost-sensitive classification data.

All variates come from numpy's PCG64 bit generator seeded through
``SeedSequence``; ``rng_for`` is the single entry point so that streams keyed
by (master seed, trial, stream id) never collide.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, logit

CLASSIFICATION_DIM = 10
PORTFOLIO_DIM = 50
FEATURE_DIM = 5


def rng_for(*keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) for k in keys])))


@dataclass(frozen=True)
class GenParams:
    n: int
    d: int = PORTFOLIO_DIM
    p: int = FEATURE_DIM
    deg: int = 1
    noise_halfwidth: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.n, self.d, self.p, self.deg) < 1:
            raise ValueError("n, d, p and deg must be positive")
        if not self.noise_halfwidth >= 0:
            raise ValueError("noise_halfwidth must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")


@dataclass
class Dataset:
    features: np.ndarray
    costs: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.costs = np.asarray(self.costs, dtype=float)
        if self.features.ndim != 2 or self.costs.ndim != 2:
            raise ValueError("features and costs must be 2-D")
        if len(self.features) != len(self.costs):
            raise ValueError("row counts differ")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.costs))):
            raise ValueError("non-finite entries")

    @property
    def n(self) -> int:
        return len(self.costs)


def gen_weight_matrix(d: int, p: int, seed: int) -> np.ndarray:
    """i.i.d. Bernoulli(1/2) entries as floats in {0, 1}."""
    return rng_for(seed).integers(0, 2, size=(d, p)).astype(float)


def gen_weight_vector(p: int, seed: int) -> np.ndarray:
    return gen_weight_matrix(1, p, seed)[0]


def portfolio_mean(B: np.ndarray, X: np.ndarray, deg: int) -> np.ndarray:
    """Conditional mean of the portfolio cost given features (noise has mean 1)."""
    p = B.shape[1]
    return 1.0 + (1.0 + X @ B.T / math.sqrt(p)) ** deg


def gen_portfolio(params: GenParams, B) -> Dataset:
    B = np.asarray(B, dtype=float)
    if B.shape != (params.d, params.p):
        raise ValueError(f"B must have shape {(params.d, params.p)}, got {B.shape}")
    rng = rng_for(params.seed)
    X = rng.standard_normal((params.n, params.p))
    hw = params.noise_halfwidth
    noise = rng.uniform(1.0 - hw, 1.0 + hw, size=(params.n, params.d))
    C = portfolio_mean(B, X, params.deg) * noise
    return Dataset(X, C, _meta("portfolio", params, B))


def _class_score(b, X, deg):
    t = X @ b
    return t ** deg * np.sign(t)


def labels_from_scores(s: np.ndarray) -> np.ndarray:
    return np.clip(np.ceil(CLASSIFICATION_DIM * s), 1, CLASSIFICATION_DIM).astype(int)


def costs_from_labels(lab: np.ndarray) -> np.ndarray:
    j = np.arange(1, CLASSIFICATION_DIM + 1)
    return np.abs(j[None, :] - np.asarray(lab)[:, None]).astype(float)


def gen_classification(params: GenParams, b) -> Dataset:
    """Labels from a noisy logistic score; costs are label distances.

    The clip to {1..10} only matters at s == 0 exactly, which the logistic
    never returns for finite arguments.
    """
    if params.d != CLASSIFICATION_DIM:
        raise ValueError(f"classification fixes d = {CLASSIFICATION_DIM}")
    b = np.asarray(b, dtype=float)
    if b.shape != (params.p,):
        raise ValueError(f"b must have length {params.p}")
    rng = rng_for(params.seed)
    X = rng.standard_normal((params.n, params.p))
    hw = params.noise_halfwidth
    noise = rng.uniform(1.0 - hw, 1.0 + hw, size=params.n)
    s = expit(_class_score(b, X, params.deg) * noise)
    return Dataset(X, costs_from_labels(labels_from_scores(s)), _meta("classification", params, b))


def classification_label_probs(b, X, deg: int, noise_halfwidth: float) -> np.ndarray:
    """P(label = k | x) for k = 1..10, exact under the uniform noise."""
    z = _class_score(np.asarray(b, dtype=float), np.atleast_2d(X), deg)
    edges = logit(np.arange(CLASSIFICATION_DIM + 1) / CLASSIFICATION_DIM)  # -inf .. +inf
    lo, hi = 1.0 - noise_halfwidth, 1.0 + noise_halfwidth
    P = np.zeros((len(z), CLASSIFICATION_DIM))
    for i, zi in enumerate(z):
        if zi == 0.0 or noise_halfwidth == 0.0:
            P[i, labels_from_scores(np.array([expit(zi * lo)]))[0] - 1] = 1.0
            continue
        # label k  <=>  edges[k-1] < zi * eps <= edges[k]
        with np.errstate(divide="ignore"):
            a, c = edges[:-1] / zi, edges[1:] / zi
        if zi < 0:
            a, c = c, a
        width = np.clip(np.minimum(c, hi) - np.maximum(a, lo), 0.0, None)
        P[i] = width / (hi - lo)
    return P


def classification_mean(b, X, deg: int, noise_halfwidth: float) -> np.ndarray:
    P = classification_label_probs(b, X, deg, noise_halfwidth)
    return P @ costs_from_labels(np.arange(1, CLASSIFICATION_DIM + 1))


def conditional_mean(dataset: Dataset, X=None) -> np.ndarray:
    """E[c | x] for the generator that produced ``dataset`` (rows of X default to its features)."""
    m = dataset.meta
    X = dataset.features if X is None else np.asarray(X, dtype=float)
    if m["kind"] == "portfolio":
        return portfolio_mean(np.asarray(m["weights"]), X, int(m["deg"]))
    if m["kind"] == "classification":
        return classification_mean(np.asarray(m["weights"]), X, int(m["deg"]), float(m["noise_halfwidth"]))
    raise ValueError(f"unknown dataset kind {m['kind']!r}")


def _meta(kind, params, weights):
    return {"kind": kind, "n": params.n, "d": params.d, "p": params.p, "deg": params.deg,
            "noise_halfwidth": params.noise_halfwidth, "seed": params.seed,
            "weights": np.asarray(weights, dtype=float)}


# persistence ----------------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_dataset(dataset: Dataset, path) -> Path:
    """Write ``path`` (CSV) and ``path.meta`` (key = value lines)."""
    path = Path(path)
    p, d = dataset.features.shape[1], dataset.costs.shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x_{i + 1}" for i in range(p)] + [f"c_{j + 1}" for j in range(d)])
        for x, c in zip(dataset.features, dataset.costs):
            w.writerow([_fmt(v) for v in x] + [_fmt(v) for v in c])
    lines = []
    for key, val in dataset.meta.items():
        if isinstance(val, np.ndarray):
            rows = np.atleast_2d(val)
            lines.append(f"{key}_shape = " + " ".join(str(s) for s in val.shape))
            val = " ".join(_fmt(v) for v in rows.ravel())
        lines.append(f"{key} = {val}")
    Path(str(path) + ".meta").write_text("\n".join(lines) + "\n")
    return path


def _parse_scalar(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def load_dataset(path) -> Dataset:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in row] for row in reader]).reshape(-1, len(header))
    p = sum(h.startswith("x_") for h in header)
    meta, shapes = {}, {}
    meta_path = Path(str(path) + ".meta")
    if meta_path.exists():
        for line in meta_path.read_text().splitlines():
            if not line.strip():
                continue
            key, _, val = line.partition(" = ")
            if key.endswith("_shape"):
                shapes[key[:-6]] = tuple(int(s) for s in val.split())
            else:
                meta[key] = val
        for key, val in list(meta.items()):
            if key in shapes:
                meta[key] = np.array([float(v) for v in val.split()]).reshape(shapes[key])
            else:
                meta[key] = _parse_scalar(val)
    return Dataset(rows[:, :p], rows[:, p:], meta)
