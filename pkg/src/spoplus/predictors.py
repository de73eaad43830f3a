"""Cost-vector prediction models, Adam, and the minibatch training loop."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .losses import LossKind, loss_and_grad_batch, loss_batch
from .regions import solve_batch

HIDDEN = 256
FORMAT_HEADER = "spoplus-predictor v1"


class ModelKind(str, enum.Enum):
    AFFINE = "affine"
    MLP256 = "mlp256"


@dataclass
class Predictor:
    kind: ModelKind
    p: int
    d: int
    params: np.ndarray
    hidden: int = HIDDEN

    def __post_init__(self):
        self.kind = ModelKind(self.kind)
        self.params = np.asarray(self.params, dtype=float)
        if self.params.shape != (param_count(self.kind, self.p, self.d, self.hidden),):
            raise ValueError("parameter vector does not match shape metadata")
        if not np.all(np.isfinite(self.params)):
            raise ValueError("non-finite parameters")

    def shapes(self) -> list[tuple[str, tuple]]:
        return param_shapes(self.kind, self.p, self.d, self.hidden)

    def unpack(self, flat: Optional[np.ndarray] = None) -> dict[str, np.ndarray]:
        flat = self.params if flat is None else flat
        out, i = {}, 0
        for name, shape in self.shapes():
            size = int(np.prod(shape))
            out[name] = flat[i:i + size].reshape(shape)
            i += size
        return out

    def with_params(self, params: np.ndarray) -> "Predictor":
        return replace(self, params=np.array(params, dtype=float))


def param_shapes(kind, p, d, hidden=HIDDEN):
    if ModelKind(kind) is ModelKind.AFFINE:
        return [("W", (d, p)), ("b", (d,))]
    return [("W1", (hidden, p)), ("b1", (hidden,)), ("W2", (d, hidden)), ("b2", (d,))]


def param_count(kind, p, d, hidden=HIDDEN) -> int:
    return sum(int(np.prod(s)) for _, s in param_shapes(kind, p, d, hidden))


def init_predictor(kind, p: int, d: int, seed: int = 0, bias=None) -> Predictor:
    """Affine models start at zero; MLP weights are Glorot-uniform, biases zero.

    ``bias`` optionally sets the output bias (b or b2).
    """
    kind = ModelKind(kind)
    model = Predictor(kind, p, d, np.zeros(param_count(kind, p, d)))
    parts = model.unpack()
    if kind is ModelKind.MLP256:
        rng = np.random.default_rng(seed)
        for name in ("W1", "W2"):
            fan_out, fan_in = parts[name].shape
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            parts[name][...] = rng.uniform(-lim, lim, size=parts[name].shape)
    if bias is not None:
        parts["b" if kind is ModelKind.AFFINE else "b2"][...] = bias
    return model


def predict(model: Predictor, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != model.p:
        raise ValueError(f"expected {model.p} features, got {X.shape[1]}")
    P = model.unpack()
    if model.kind is ModelKind.AFFINE:
        out = X @ P["W"].T + P["b"]
    else:
        H = np.maximum(X @ P["W1"].T + P["b1"], 0.0)
        out = H @ P["W2"].T + P["b2"]
    return out[0] if single else out


def backprop(model: Predictor, X, G) -> np.ndarray:
    """Flat parameter gradient of sum_i G_i^T g(x_i) for output cotangents G."""
    X = np.asarray(X, dtype=float)
    G = np.asarray(G, dtype=float)
    P = model.unpack()
    if model.kind is ModelKind.AFFINE:
        return np.concatenate([(G.T @ X).ravel(), G.sum(axis=0)])
    Z = X @ P["W1"].T + P["b1"]
    H = np.maximum(Z, 0.0)
    dH = (G @ P["W2"]) * (Z > 0)
    return np.concatenate([(dH.T @ X).ravel(), dH.sum(axis=0), (G.T @ H).ravel(), G.sum(axis=0)])


def loss_param_gradient(model: Predictor, loss: LossKind, x, c, w_true=None) -> np.ndarray:
    """Gradient of the mean loss over the rows of (x, c) w.r.t. the flat parameters."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    C = np.atleast_2d(np.asarray(c, dtype=float))
    W_true = None if w_true is None else np.atleast_2d(w_true)
    _, G = loss_and_grad_batch(loss, predict(model, X), C, W_true)
    return backprop(model, X, G / len(X))


def empirical_risk(model: Predictor, loss: LossKind, X, C, W_true=None) -> float:
    return float(np.mean(loss_batch(loss, predict(model, X), C, W_true)))


# Adam -----------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray, config: TrainConfig):
    """One bias-corrected Adam update; returns (new_params, new_state)."""
    if grad.shape != state.m.shape or params.shape != state.m.shape:
        raise ValueError("Adam state does not match parameter shape")
    t = state.t + 1
    m = config.beta1 * state.m + (1.0 - config.beta1) * grad
    v = config.beta2 * state.v + (1.0 - config.beta2) * grad * grad
    m_hat = m / (1.0 - config.beta1 ** t)
    v_hat = v / (1.0 - config.beta2 ** t)
    new = params - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps_adam)
    return new, AdamState(m, v, t)


@dataclass
class TrainResult:
    model: Predictor
    trace: list = field(default_factory=list)  # per-epoch mean minibatch loss


def train(model: Predictor, X, C, loss: LossKind, config: TrainConfig) -> TrainResult:
    """Minibatch Adam on the empirical risk of ``loss``.

    Batches come from a seeded permutation each epoch; the trace records the
    sample-weighted mean of the minibatch losses seen during each epoch.
    """
    X = np.asarray(X, dtype=float)
    C = np.asarray(C, dtype=float)
    n = len(X)
    if n == 0:
        raise ValueError("empty dataset")
    W_true = solve_batch(loss.region, C).w if loss.needs_oracle else None
    rng = np.random.default_rng(config.seed)
    params = model.params.copy()
    state = AdamState.zeros(params.size)
    trace = []
    current = model
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            current = current.with_params(params)
            Xb = X[idx]
            vals, G = loss_and_grad_batch(loss, predict(current, Xb), C[idx],
                                          None if W_true is None else W_true[idx])
            grad = backprop(current, Xb, G / len(idx))
            params, state = adam_step(state, params, grad, config)
            total += float(np.sum(vals))
        trace.append(total / n)
    return TrainResult(model.with_params(params), trace)


# serialization ----------------------------------------------------------------------

def to_text(model: Predictor) -> str:
    lines = [FORMAT_HEADER, f"kind {model.kind.value}", f"p {model.p}", f"d {model.d}",
             f"hidden {model.hidden}"]
    for name, shape in model.shapes():
        lines.append(f"shape {name} " + " ".join(str(s) for s in shape))
    lines.append(f"params {model.params.size}")
    lines.extend(format(float(v), ".17g") for v in model.params)
    return "\n".join(lines) + "\n"


def from_text(text: str) -> Predictor:
    lines = text.strip().splitlines()
    if not lines or lines[0].strip() != FORMAT_HEADER:
        raise ValueError("not a predictor file (bad header)")
    meta, i = {}, 1
    while i < len(lines) and not lines[i].startswith("params "):
        key, _, rest = lines[i].partition(" ")
        if key != "shape":
            meta[key] = rest.strip()
        i += 1
    if i == len(lines):
        raise ValueError("predictor file has no parameter block")
    count = int(lines[i].split()[1])
    values = np.array([float(v) for v in lines[i + 1:i + 1 + count]])
    if values.size != count:
        raise ValueError("truncated parameter block")
    return Predictor(ModelKind(meta["kind"]), int(meta["p"]), int(meta["d"]), values,
                     hidden=int(meta.get("hidden", HIDDEN)))
