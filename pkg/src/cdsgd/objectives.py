"""Loss families with exact and minibatch gradient oracles.

Every oracle returns the *per-sample mean* over the rows it is given, so a
shard-local loss is ``sum_i f^i(x) / n_j``.  The analysis layer re-applies the
``(N / n) n_j`` weights when it needs the global objective.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .data import DatasetShard, EpochSampler
from .descriptors import get_float, get_int
from .errors import ConfigError


class Objective:
    """Base class; subclasses implement the per-batch mean loss and gradient."""

    kind = "base"
    dimension: int
    classification = False

    def batch_loss(self, x, features, labels) -> float:
        raise NotImplementedError

    def batch_gradient(self, x, features, labels) -> np.ndarray:
        raise NotImplementedError

    def shard_loss(self, x, shard: DatasetShard) -> float:
        return self.batch_loss(x, shard.features, shard.labels)

    def shard_gradient(self, x, shard: DatasetShard) -> np.ndarray:
        return self.batch_gradient(x, shard.features, shard.labels)

    def local_constants(self, shard: DatasetShard) -> ObjectiveConstants:
        return ObjectiveConstants((None,), (None,), (None,))

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return rng.normal(size=self.dimension)

    def predict(self, x, features) -> np.ndarray:
        raise NotImplementedError(f"{self.kind} objective has no class predictions")


class QuadraticObjective(Objective):
    """``f^i(x) = 1/2 x^T A x - (b + z_i)^T x`` with per-sample perturbation ``z_i``.

    The feature row of sample ``i`` is ``z_i``; with all-zero features this is
    the deterministic quadratic with minimiser ``A^{-1} b``.  Minibatch noise
    enters only through the linear term, so it does not depend on ``x``.
    """

    kind = "quadratic"

    def __init__(self, A, b, box_radius: float | None = None):
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or b.shape != (A.shape[0],):
            raise ValueError("A must be (d, d) and b must be (d,)")
        if not np.allclose(A, A.T, rtol=0, atol=1e-12):
            raise ValueError("A must be symmetric")
        eig = np.linalg.eigvalsh(A)
        if eig[0] <= 0:
            raise ValueError("A must be positive definite")
        self.A, self.b = A, b
        self.eig_min, self.eig_max = float(eig[0]), float(eig[-1])
        self.dimension = A.shape[0]
        self.box_radius = box_radius

    @classmethod
    def random(cls, d: int, cond: float, seed: int, box_radius: float | None = None) -> QuadraticObjective:
        """Random rotation of ``diag(linspace(1, cond, d))`` with ``b ~ N(0, I)``."""
        if d < 1 or cond < 1:
            raise ValueError("need d >= 1 and cond >= 1")
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        A = (q * np.linspace(1.0, cond, d)) @ q.T
        return cls(0.5 * (A + A.T), rng.normal(size=d), box_radius)

    def _linear(self, features):
        if features.shape[1] != self.dimension:
            raise ValueError(f"quadratic needs {self.dimension}-dim sample rows, got {features.shape[1]}")
        return self.b + features.mean(axis=0)

    def batch_loss(self, x, features, labels):
        return float(0.5 * x @ self.A @ x - self._linear(features) @ x)

    def batch_gradient(self, x, features, labels):
        return self.A @ x - self._linear(features)

    def shard_loss(self, x, shard):
        return float(0.5 * x @ self.A @ x - (self.b + shard.feature_mean) @ x)

    def shard_gradient(self, x, shard):
        return self.A @ x - (self.b + shard.feature_mean)

    def minimizer(self, shard: DatasetShard) -> np.ndarray:
        return np.linalg.solve(self.A, self.b + shard.feature_mean)

    def local_constants(self, shard):
        lip = None
        if self.box_radius is not None:
            # sup of ||A x - c|| over the ball ||x|| <= R
            lip = self.eig_max * self.box_radius + float(np.linalg.norm(self.b + shard.feature_mean))
        return ObjectiveConstants((self.eig_max,), (self.eig_min,), (lip,))


class LogisticObjective(Objective):
    """L2-regularised binary cross-entropy; labels must be 0/1."""

    kind = "logistic"
    classification = True

    def __init__(self, d_in: int, reg: float = 0.0, intercept: bool = True):
        if reg < 0:
            raise ValueError("regularisation must be nonnegative")
        self.d_in = d_in
        self.reg = reg
        self.intercept = intercept
        self.dimension = d_in + (1 if intercept else 0)

    def _design(self, features):
        if features.shape[1] != self.d_in:
            raise ValueError(f"logistic model expects {self.d_in} features, got {features.shape[1]}")
        if self.intercept:
            return np.hstack([features, np.ones((len(features), 1))])
        return features

    def batch_loss(self, x, features, labels):
        z = self._design(features) @ x
        return float(np.mean(np.logaddexp(0.0, z) - labels * z) + 0.5 * self.reg * (x @ x))

    def batch_gradient(self, x, features, labels):
        X = self._design(features)
        return X.T @ (expit(X @ x) - labels) / len(X) + self.reg * x

    def local_constants(self, shard):
        X = self._design(shard.features)
        top = float(np.linalg.eigvalsh(X.T @ X)[-1])
        return ObjectiveConstants((top / (4 * len(X)) + self.reg,), (self.reg,), (None,))

    def init_params(self, rng):
        return 0.01 * rng.normal(size=self.dimension)

    def predict(self, x, features):
        return (self._design(features) @ x > 0).astype(np.int64)


class MLPObjective(Objective):
    """Fully connected network with softmax cross-entropy.

    Parameters are flattened layer by layer as ``W_1 (in x out, row-major),
    b_1, W_2, b_2, ...``.  ReLU uses the subgradient 0 at the kink.
    """

    kind = "mlp"
    classification = True

    def __init__(self, layer_sizes, activation: str = "relu"):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 3:
            raise ValueError("an MLP needs input, at least one hidden layer, and output sizes")
        if activation not in ("relu", "tanh"):
            raise ValueError(f"unsupported activation {activation!r}")
        self.layer_sizes = sizes
        self.activation = activation
        self._shapes = list(zip(sizes[:-1], sizes[1:]))
        self.dimension = sum(i * o + o for i, o in self._shapes)

    def unpack(self, x):
        if x.shape != (self.dimension,):
            raise ValueError(f"expected {self.dimension} parameters, got shape {x.shape}")
        layers, pos = [], 0
        for i, o in self._shapes:
            W = x[pos:pos + i * o].reshape(i, o)
            pos += i * o
            layers.append((W, x[pos:pos + o]))
            pos += o
        return layers

    def _act(self, z):
        return np.maximum(z, 0.0) if self.activation == "relu" else np.tanh(z)

    def _forward(self, x, features):
        if features.shape[1] != self.layer_sizes[0]:
            raise ValueError(f"MLP expects {self.layer_sizes[0]} inputs, got {features.shape[1]}")
        layers = self.unpack(x)
        acts, pre = [features], []
        for W, b in layers[:-1]:
            z = acts[-1] @ W + b
            pre.append(z)
            acts.append(self._act(z))
        W, b = layers[-1]
        return layers, acts, pre, acts[-1] @ W + b

    def batch_loss(self, x, features, labels):
        *_, logits = self._forward(x, features)
        return float(-np.mean(log_softmax(logits, axis=1)[np.arange(len(labels)), labels]))

    def batch_gradient(self, x, features, labels):
        layers, acts, pre, logits = self._forward(x, features)
        dz = softmax(logits, axis=1)
        dz[np.arange(len(labels)), labels] -= 1.0
        dz /= len(labels)
        grads = []
        for layer in range(len(layers) - 1, -1, -1):
            W, _ = layers[layer]
            grads.append((acts[layer].T @ dz, dz.sum(axis=0)))
            if layer > 0:
                da = dz @ W.T
                z = pre[layer - 1]
                dz = da * (z > 0) if self.activation == "relu" else da * (1.0 - np.tanh(z) ** 2)
        return np.concatenate([part.ravel() for pair in reversed(grads) for part in pair])

    def init_params(self, rng):
        parts = []
        for i, o in self._shapes:
            limit = math.sqrt(6.0 / (i + o))
            parts += [rng.uniform(-limit, limit, size=i * o), np.zeros(o)]
        return np.concatenate(parts)

    def predict(self, x, features):
        *_, logits = self._forward(x, features)
        return np.argmax(logits, axis=1)


@dataclass(frozen=True)
class ObjectiveConstants:
    """Per-agent smoothness / strong-convexity / Lipschitz constants.

    ``None`` marks a constant that is unavailable (nonconvex model, or an
    unbounded domain for the Lipschitz constant).
    """

    gamma_j: tuple
    h_j: tuple
    lip_j: tuple

    @property
    def gamma_m(self) -> float | None:
        return None if None in self.gamma_j else max(self.gamma_j)

    @property
    def h_m(self) -> float | None:
        return None if None in self.h_j else min(self.h_j)

    @property
    def lip(self) -> float | None:
        return None if None in self.lip_j else max(self.lip_j)

    @classmethod
    def combine(cls, parts) -> ObjectiveConstants:
        parts = list(parts)
        return cls(tuple(v for p in parts for v in p.gamma_j), tuple(v for p in parts for v in p.h_j),
                   tuple(v for p in parts for v in p.lip_j))


def _check_dim(spec: Objective, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.dimension,):
        raise ValueError(f"parameter vector has shape {x.shape}, objective dimension is {spec.dimension}")
    return x


def loss(spec: Objective, x, shard: DatasetShard) -> float:
    return spec.shard_loss(_check_dim(spec, x), shard)


def full_gradient(spec: Objective, x, shard: DatasetShard) -> np.ndarray:
    return spec.shard_gradient(_check_dim(spec, x), shard)


def stochastic_gradient(spec: Objective, x, shard: DatasetShard, batch_size: int, rng) -> np.ndarray:
    """Minibatch gradient on ``shard``.

    ``rng`` is either an :class:`EpochSampler` (epoch-shuffle batches, the
    training path) or a ``numpy.random.Generator`` (an independent uniform
    batch without replacement per call, used for Monte-Carlo estimates).
    A batch covering the whole shard returns :func:`full_gradient` exactly
    and draws nothing.
    """
    x = _check_dim(spec, x)
    if not 1 <= batch_size <= shard.n_j:
        raise ValueError(f"batch size {batch_size} outside 1..{shard.n_j}")
    if batch_size == shard.n_j:
        return spec.shard_gradient(x, shard)
    if isinstance(rng, EpochSampler):
        idx = rng.next_batch(batch_size)
    else:
        idx = rng.choice(shard.n_j, size=batch_size, replace=False)
    return spec.batch_gradient(x, shard.features[idx], shard.labels[idx])


def constants(spec: Objective, shard: DatasetShard) -> ObjectiveConstants:
    return spec.local_constants(shard)


def swarm_constants(spec: Objective, shards) -> ObjectiveConstants:
    return ObjectiveConstants.combine(spec.local_constants(s) for s in shards)


def accuracy(spec: Objective, x, features, labels) -> float:
    return float(np.mean(spec.predict(np.asarray(x, dtype=float), features) == labels))


def from_descriptor(kind: str, kwargs: dict[str, str], d_in: int, n_classes: int, seed: int) -> Objective:
    """Build an objective from a parsed ``--objective`` descriptor and data shape."""
    if kind == "quadratic":
        d = get_int(kwargs, "d", d_in)
        if d != d_in:
            raise ConfigError(f"quadratic dimension {d} does not match data dimension {d_in}")
        box = kwargs.get("box")
        return QuadraticObjective.random(d, get_float(kwargs, "cond", 10.0), seed,
                                         float(box) if box is not None else None)
    if kind == "logistic":
        if n_classes != 2:
            raise ConfigError("logistic objective needs binary labels")
        return LogisticObjective(d_in, get_float(kwargs, "reg", 0.0),
                                 kwargs.get("intercept", "1") not in ("0", "false"))
    if kind == "mlp":
        raw = kwargs.get("layers", f"{d_in}x16x{n_classes}")
        try:
            sizes = [int(s) for s in raw.split("x")]
        except ValueError:
            raise ConfigError(f"bad layer spec {raw!r}") from None
        if sizes[0] != d_in or sizes[-1] != n_classes:
            raise ConfigError(f"MLP layers {raw} do not match data ({d_in} inputs, {n_classes} classes)")
        return MLPObjective(sizes, kwargs.get("act", "relu"))
    raise ConfigError(f"unknown objective kind {kind!r}")
