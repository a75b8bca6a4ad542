"""One federated round over small numpy models.

Models are flat float64 parameter vectors paired with an
:class:`Architecture`; gradients are computed analytically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset
from .hp_space import HPVector

__all__ = [
    "Architecture",
    "ModelWeights",
    "ClientHPs",
    "ServerHPs",
    "ServerOptState",
    "RoundResult",
    "NonFiniteLoss",
    "DimensionMismatch",
    "init_weights",
    "loss_and_grad",
    "predict_logits",
    "schedule_factor",
    "loc",
    "val",
    "accuracy",
    "agg",
    "fed_opt_round",
]

_LOG_EPS = math.log(1e-12)


class NonFiniteLoss(ArithmeticError):
    """Local training diverged (NaN/Inf loss, gradient or weights)."""


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Architecture:
    kind: str
    num_features: int
    num_classes: int
    hidden_width: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("logreg", "mlp"):
            raise ValueError(f"unknown architecture {self.kind!r}")
        if self.kind == "mlp" and self.hidden_width < 1:
            raise ValueError("mlp needs hidden_width >= 1")

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        f, c, h = self.num_features, self.num_classes, self.hidden_width
        if self.kind == "logreg":
            return [(f, c), (c,)]
        return [(f, h), (h,), (h, c), (c,)]

    @property
    def dim(self) -> int:
        return sum(math.prod(s) for s in self.shapes)

    def unpack(self, flat: np.ndarray) -> list[np.ndarray]:
        """Views into ``flat``, one per parameter tensor."""
        out, i = [], 0
        for s in self.shapes:
            n = math.prod(s)
            out.append(flat[i:i + n].reshape(s))
            i += n
        return out


@dataclass(frozen=True, eq=False)
class ModelWeights:
    vector: np.ndarray
    arch: Architecture

    def __post_init__(self) -> None:
        v = np.array(self.vector, dtype=np.float64)
        if v.shape != (self.arch.dim,):
            raise DimensionMismatch(f"expected {self.arch.dim} weights, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("model weights must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)

    def to_list(self) -> list[float]:
        return self.vector.tolist()


def init_weights(arch: Architecture, rng: np.random.Generator) -> ModelWeights:
    """Glorot-uniform matrices, zero biases."""
    parts = []
    for shape in arch.shapes:
        if len(shape) == 2:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            parts.append(rng.uniform(-bound, bound, size=shape).ravel())
        else:
            parts.append(np.zeros(shape))
    return ModelWeights(np.concatenate(parts), arch)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def predict_logits(arch: Architecture, w: np.ndarray, x: np.ndarray) -> np.ndarray:
    if arch.kind == "logreg":
        W, b = arch.unpack(w)
        return x @ W + b
    W1, b1, W2, b2 = arch.unpack(w)
    return np.tanh(x @ W1 + b1) @ W2 + b2


def loss_and_grad(
    arch: Architecture,
    w: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the flat weights.

    Dropout (MLP only) is inverted dropout on the hidden activations and
    needs ``rng`` when positive.
    """
    n = len(y)
    rows = np.arange(n)
    grad = np.empty_like(w)
    if arch.kind == "logreg":
        W, b = arch.unpack(w)
        gW, gb = arch.unpack(grad)
        logp = _log_softmax(x @ W + b)
        delta = np.exp(logp)
        delta[rows, y] -= 1.0
        delta /= n
        np.matmul(x.T, delta, out=gW)
        gb[:] = delta.sum(axis=0)
    else:
        W1, b1, W2, b2 = arch.unpack(w)
        gW1, gb1, gW2, gb2 = arch.unpack(grad)
        a = np.tanh(x @ W1 + b1)
        if dropout > 0.0:
            mask = (rng.random(a.shape) >= dropout) / (1.0 - dropout)
            h = a * mask
        else:
            mask = None
            h = a
        logp = _log_softmax(h @ W2 + b2)
        delta = np.exp(logp)
        delta[rows, y] -= 1.0
        delta /= n
        np.matmul(h.T, delta, out=gW2)
        gb2[:] = delta.sum(axis=0)
        dh = delta @ W2.T
        if mask is not None:
            dh *= mask
        dz = dh * (1.0 - a * a)
        np.matmul(x.T, dz, out=gW1)
        gb1[:] = dz.sum(axis=0)
    loss = -float(logp[rows, y].mean())
    return loss, grad


def schedule_factor(scheduler: str, t: int, horizon: int) -> float:
    """Learning-rate multiplier at step ``t`` of ``horizon``.

    ``step`` halves every third of the horizon; ``cosine`` decays along a
    half cosine from 1 to 0.01.
    """
    if scheduler == "constant":
        return 1.0
    if scheduler == "step":
        return 0.5 ** math.floor(3 * t / max(horizon, 1))
    if scheduler == "cosine":
        return 0.01 + 0.99 * 0.5 * (1.0 + math.cos(math.pi * min(t, horizon) / max(horizon, 1)))
    raise ValueError(f"unknown scheduler {scheduler!r}")


_CLIENT_DEFAULTS = dict(
    learning_rate=0.1, scheduler="constant", momentum=0.0, weight_decay=0.0,
    local_epochs=1, batch_size=32, dropout=0.0,
)
_SERVER_DEFAULTS = dict(learning_rate=1.0, scheduler="constant", momentum=0.0)


@dataclass(frozen=True)
class ClientHPs:
    learning_rate: float = 0.1
    scheduler: str = "constant"
    momentum: float = 0.0
    weight_decay: float = 0.0
    local_epochs: int = 1
    batch_size: int = 32
    dropout: float = 0.0

    @classmethod
    def decode(cls, beta: HPVector) -> ClientHPs:
        """Natural-unit view of a client HP-vector; absent HPs take defaults."""
        d = beta.as_dict()
        kw = {k: d.get(k, v) for k, v in _CLIENT_DEFAULTS.items()}
        kw["local_epochs"] = int(kw["local_epochs"])
        kw["batch_size"] = int(kw["batch_size"])
        return cls(**kw)


@dataclass(frozen=True)
class ServerHPs:
    learning_rate: float = 1.0
    scheduler: str = "constant"
    momentum: float = 0.0
    # Rounds over which the server scheduler runs its course.
    horizon: int = 1

    @classmethod
    def decode(cls, alpha: HPVector, horizon: int = 1) -> ServerHPs:
        d = alpha.as_dict()
        kw = {k: d.get(k, v) for k, v in _SERVER_DEFAULTS.items()}
        return cls(horizon=horizon, **kw)


@dataclass(frozen=True, eq=False)
class ServerOptState:
    momentum: np.ndarray
    round: int = 0

    @classmethod
    def zeros(cls, dim: int) -> ServerOptState:
        return cls(np.zeros(dim), 0)


def loc(beta: ClientHPs, w: ModelWeights, train: Dataset, rng: np.random.Generator) -> ModelWeights:
    """Local mini-batch SGD with momentum, weight decay and dropout."""
    arch = w.arch
    if train.num_features != arch.num_features or train.num_classes != arch.num_classes:
        raise DimensionMismatch("dataset does not match the model architecture")
    params = w.vector.copy()
    velocity = np.zeros_like(params)
    x, y = train.features, train.labels
    n = len(y)
    bs = max(1, beta.batch_size)
    dropout = beta.dropout if arch.kind == "mlp" else 0.0
    # Overflow is detected explicitly below, so numpy's warnings are noise.
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(beta.local_epochs):
            lr = beta.learning_rate * schedule_factor(beta.scheduler, epoch, beta.local_epochs)
            order = rng.permutation(n)
            for start in range(0, n, bs):
                idx = order[start:start + bs]
                loss, g = loss_and_grad(arch, params, x[idx], y[idx], dropout, rng)
                if not math.isfinite(loss):
                    raise NonFiniteLoss(f"loss {loss} at epoch {epoch}")
                g += beta.weight_decay * params
                velocity *= beta.momentum
                velocity += g
                params -= lr * velocity
            if not np.all(np.isfinite(params)):
                raise NonFiniteLoss(f"weights diverged at epoch {epoch}")
    return ModelWeights(params, arch)


def val(w: ModelWeights, valset: Dataset) -> float:
    """Mean cross-entropy (probabilities clamped at 1e-12); lower is better."""
    logp = _log_softmax(predict_logits(w.arch, w.vector, valset.features))
    picked = logp[np.arange(len(valset)), valset.labels]
    return -float(np.maximum(picked, _LOG_EPS).mean())


def accuracy(w: ModelWeights, data: Dataset) -> float:
    pred = np.argmax(predict_logits(w.arch, w.vector, data.features), axis=1)
    return float(np.mean(pred == data.labels))


def agg(
    alpha: ServerHPs,
    w: ModelWeights,
    client_weights: Sequence[ModelWeights],
    state: ServerOptState,
    example_counts: Sequence[int] | None = None,
) -> tuple[ModelWeights, ServerOptState]:
    """Server momentum-SGD on the pseudo-gradient ``w - mean(client_weights)``.

    With ``learning_rate=1``, ``momentum=0`` and a constant scheduler this is
    plain FedAvg.
    """
    if not client_weights:
        raise ValueError("agg needs at least one client model")
    d = w.arch.dim
    for cw in client_weights:
        if cw.vector.shape != (d,):
            raise DimensionMismatch(f"client weights have shape {cw.vector.shape}, expected ({d},)")
    if state.momentum.shape != (d,):
        raise DimensionMismatch("server momentum buffer has the wrong dimension")
    # Averaging the differences keeps g exactly zero when every client
    # returns w unchanged.
    diffs = w.vector - np.stack([cw.vector for cw in client_weights])
    if example_counts is None:
        g = diffs.mean(axis=0)
    else:
        g = np.average(diffs, axis=0, weights=np.asarray(example_counts, dtype=float))
    m = alpha.momentum * state.momentum + g
    lr = alpha.learning_rate * schedule_factor(alpha.scheduler, state.round, alpha.horizon)
    with np.errstate(over="ignore", invalid="ignore"):
        new = w.vector - lr * m
    if not np.all(np.isfinite(new)):
        raise NonFiniteLoss("aggregated weights are not finite")
    return ModelWeights(new, w.arch), ServerOptState(m, state.round + 1)


@dataclass(frozen=True, eq=False)
class RoundResult:
    weights: ModelWeights
    scores: list[float]
    state: ServerOptState
    client_weights: list[ModelWeights | None] = field(repr=False)
    diverged: int = 0
    agg_rejected: bool = False


def fed_opt_round(
    alpha: ServerHPs,
    betas: Sequence[ClientHPs],
    w: ModelWeights,
    shards: Sequence,
    state: ServerOptState,
    rngs: Sequence[np.random.Generator],
    weight_by_examples: bool = False,
) -> RoundResult:
    """Loc on every active client, Val of each local model, then Agg.

    A client whose training diverges scores ``+inf`` and is left out of the
    aggregate. If every client diverges, or the aggregate itself is not
    finite, the incoming weights are kept and the server momentum is reset.
    """
    if not shards or len(betas) != len(shards) or len(rngs) != len(shards):
        raise ValueError("need one beta and one rng per active shard")
    scores: list[float] = []
    locals_: list[ModelWeights | None] = []
    for beta, shard, rng in zip(betas, shards, rngs):
        try:
            wk = loc(beta, w, shard.train, rng)
        except NonFiniteLoss:
            locals_.append(None)
            scores.append(math.inf)
            continue
        locals_.append(wk)
        scores.append(val(wk, shard.val))
    ok = [i for i, wk in enumerate(locals_) if wk is not None]
    diverged = len(shards) - len(ok)
    if ok:
        counts = [len(shards[i].train) for i in ok] if weight_by_examples else None
        try:
            new_w, new_state = agg(alpha, w, [locals_[i] for i in ok], state, counts)
            return RoundResult(new_w, scores, new_state, locals_, diverged)
        except NonFiniteLoss:
            pass
    reset = ServerOptState(np.zeros_like(state.momentum), state.round + 1)
    return RoundResult(w, scores, reset, locals_, diverged, agg_rejected=True)
