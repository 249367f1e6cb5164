"""Small multi-label classifier trained with asymmetric loss.

The model is either linear (``D -> L``) or has one tanh hidden layer
(``D -> H -> L``); a logistic link gives per-label probabilities. Parameters
travel as one flat float64 vector so the server can average them without
knowing the layout. Layout: ``W1 (D*H), b1 (H), W2 (H*L), b2 (L)`` with a
hidden layer, ``W (D*L), b (L)`` without, all row-major.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import MultiLabelDataset
from .errors import ConfigurationError, DimensionError, DivergenceError, DomainError, ParseError

# forward() keeps probabilities strictly inside (0, 1)
PROB_FLOOR = 1e-15


@dataclass(frozen=True)
class Shape:
    n_features: int
    n_labels: int
    hidden: int | None = None

    def __post_init__(self):
        if self.n_features < 1 or self.n_labels < 1 or (self.hidden is not None and self.hidden < 1):
            raise ConfigurationError(f"every dimension must be >= 1, got {self}")

    @property
    def size(self) -> int:
        d, l, h = self.n_features, self.n_labels, self.hidden
        if h is None:
            return d * l + l
        return d * h + h + h * l + l

    def blocks(self):
        """(name, shape) of each parameter block in flat-vector order."""
        d, l, h = self.n_features, self.n_labels, self.hidden
        if h is None:
            return [("W", (d, l)), ("b", (l,))]
        return [("W1", (d, h)), ("b1", (h,)), ("W2", (h, l)), ("b2", (l,))]

    def to_json(self):
        return {"n_features": self.n_features, "n_labels": self.n_labels, "hidden": self.hidden}


@dataclass(frozen=True, eq=False)
class ModelParams:
    shape: Shape
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (self.shape.size,):
            raise DimensionError(f"expected {self.shape.size} parameter values, got {values.shape}")
        if not np.isfinite(values).all():
            raise DivergenceError("parameters contain non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def unpack(self) -> dict[str, np.ndarray]:
        out, offset = {}, 0
        for name, shp in self.shape.blocks():
            n = int(np.prod(shp))
            out[name] = self.values[offset : offset + n].reshape(shp)
            offset += n
        return out

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True)
class AslConfig:
    gamma_pos: float = 0.0
    gamma_neg: float = 4.0
    margin: float = 0.05
    eps: float = 1e-8

    def __post_init__(self):
        if not 0 <= self.gamma_pos <= self.gamma_neg:
            raise ConfigurationError(f"need 0 <= gamma_pos <= gamma_neg, got {self.gamma_pos}, {self.gamma_neg}")
        if not 0 <= self.margin < 1:
            raise ConfigurationError(f"margin must lie in [0, 1), got {self.margin}")
        if not 0 < self.eps <= 1e-3:
            raise ConfigurationError(f"eps must lie in (0, 1e-3], got {self.eps}")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    local_epochs: int = 4
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 1 or self.local_epochs < 1:
            raise ConfigurationError("batch_size and local_epochs must be >= 1")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ConfigurationError("learning_rate and weight_decay must be >= 0")

    def with_seed(self, seed) -> TrainConfig:
        return TrainConfig(self.batch_size, self.learning_rate, self.weight_decay, self.local_epochs,
                           int(seed), self.beta1, self.beta2, self.adam_eps)


def init_params(shape: Shape, seed=0) -> ModelParams:
    """Gaussian weights with std 1/sqrt(fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    parts = []
    for name, shp in shape.blocks():
        if name.startswith("W"):
            parts.append(rng.standard_normal(shp).ravel() / np.sqrt(shp[0]))
        else:
            parts.append(np.zeros(shp))
    return ModelParams(shape, np.concatenate(parts))


def _check_features(params, features):
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.shape.n_features:
        raise DimensionError(f"features must be B x {params.shape.n_features}, got {x.shape}")
    return x


def _logistic(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return np.clip(out, PROB_FLOOR, 1.0 - PROB_FLOOR)


def _forward(params, x):
    p = params.unpack()
    if params.shape.hidden is None:
        return _logistic(x @ p["W"] + p["b"]), None
    h = np.tanh(x @ p["W1"] + p["b1"])
    return _logistic(h @ p["W2"] + p["b2"]), h


def forward(params: ModelParams, features) -> np.ndarray:
    x = _check_features(params, features)
    return _forward(params, x)[0]


def asl_loss(probs, targets, cfg: AslConfig):
    """Mean asymmetric loss and its gradient with respect to ``probs``.

    Positives contribute ``(1-p)^gamma_pos * log(p)``; negatives use the
    shifted ``pm = max(p - margin, 0)`` and contribute
    ``pm^gamma_neg * log(1 - pm)``. Log arguments are clamped to
    ``[eps, 1]``; the clamp has zero derivative.
    """
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(targets)
    if p.shape != y.shape:
        raise DimensionError(f"probs {p.shape} and targets {y.shape} differ in shape")
    if not ((p > 0) & (p < 1)).all():
        raise DomainError("probabilities must lie strictly inside (0, 1)")
    if not np.isin(y, (0, 1)).all():
        raise DomainError("targets must be binary")
    pos = y == 1
    gp, gn, eps = cfg.gamma_pos, cfg.gamma_neg, cfg.eps
    term = np.zeros_like(p)
    dterm = np.zeros_like(p)

    pp = p[pos]
    logp = np.log(np.maximum(pp, eps))
    focus = (1.0 - pp) ** gp
    term[pos] = focus * logp
    dlog = np.where(pp > eps, 1.0 / pp, 0.0)
    dfocus = -gp * (1.0 - pp) ** (gp - 1.0) if gp != 0 else 0.0
    dterm[pos] = dfocus * logp + focus * dlog

    pm = np.maximum(p[~pos] - cfg.margin, 0.0)
    active = pm > 0
    log1m = np.log(np.maximum(1.0 - pm, eps))
    # numpy's 0**0 == 1 keeps gamma_neg == 0 exact; log1m is 0 where inactive
    term[~pos] = pm ** gn * log1m
    a = pm[active]
    dfocus = gn * a ** (gn - 1.0) if gn != 0 else 0.0
    dlog = np.where(1.0 - a > eps, -1.0 / (1.0 - a), 0.0)
    neg_d = np.zeros_like(pm)
    neg_d[active] = dfocus * log1m[active] + a ** gn * dlog
    dterm[~pos] = neg_d

    n = p.size
    return -float(term.sum()) / n, -dterm / n


def loss_and_grad(params: ModelParams, features, targets, cfg: AslConfig):
    """Batch loss and its gradient with respect to the flat parameter vector."""
    x = _check_features(params, features)
    probs, h = _forward(params, x)
    loss, dprob = asl_loss(probs, targets, cfg)
    dz = dprob * probs * (1.0 - probs)
    p = params.unpack()
    if h is None:
        grads = [x.T @ dz, dz.sum(axis=0)]
    else:
        dh = (dz @ p["W2"].T) * (1.0 - h * h)
        grads = [x.T @ dh, dh.sum(axis=0), h.T @ dz, dz.sum(axis=0)]
    return loss, np.concatenate([g.ravel() for g in grads])


@dataclass
class Adam:
    """Bias-corrected moment optimizer with decoupled weight decay."""

    lr: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return theta - self.lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * theta)


def train_local(params: ModelParams, shard_train: MultiLabelDataset, tcfg: TrainConfig, acfg: AslConfig):
    """Run ``tcfg.local_epochs`` epochs of mini-batch training.

    Returns ``(new_params, mean loss of the final epoch)``. Batch order for
    epoch ``e`` comes from ``default_rng([tcfg.seed, e])``, so the result is
    a pure function of the arguments.
    """
    n = shard_train.n_samples
    if n == 0:
        raise ConfigurationError("cannot train on an empty shard")
    x, y = shard_train.features, shard_train.labels
    _check_features(params, x)
    opt = Adam(tcfg.learning_rate, tcfg.weight_decay, tcfg.beta1, tcfg.beta2, tcfg.adam_eps)
    theta = params.values.copy()
    epoch_loss = float("nan")
    for epoch in range(tcfg.local_epochs):
        order = np.random.default_rng([tcfg.seed, epoch]).permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, tcfg.batch_size)):
            idx = order[start : start + tcfg.batch_size]
            loss, grad = loss_and_grad(ModelParams(params.shape, theta), x[idx], y[idx], acfg)
            if not np.isfinite(loss) or not np.isfinite(grad).all():
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}")
            theta = opt.step(theta, grad)
            if not np.isfinite(theta).all():
                raise DivergenceError(f"non-finite parameters at epoch {epoch}, batch {b}")
            total += loss * idx.size
        epoch_loss = total / n
    return ModelParams(params.shape, theta), epoch_loss


def save_params(params: ModelParams, path) -> None:
    """JSON shape header line followed by little-endian float64 values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps({"shape": params.shape.to_json(), "count": params.shape.size})
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        fh.write(params.values.astype("<f8").tobytes())


def load_params(path) -> ModelParams:
    raw = Path(path).read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise ParseError("missing shape header", 1)
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
        shape = Shape(**header["shape"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"bad shape header: {exc}", 1) from None
    body = raw[newline + 1 :]
    if len(body) != 8 * shape.size:
        raise ParseError(f"expected {8 * shape.size} bytes of parameters, got {len(body)}")
    return ModelParams(shape, np.frombuffer(body, dtype="<f8"))
