"""Per-round update laws for consensus SGD, its momentum variants and baselines.

Parameters of the whole swarm are kept as one ``(N, d)`` matrix whose row
``j`` is agent ``j``'s vector; mixing multiplies by ``Pi`` from the left, i.e.
column-wise over parameter coordinates.
"""
from __future__ import annotations

import math
from concurrent.futures import Executor
from dataclasses import dataclass

import numpy as np

from .data import EpochSampler
from .descriptors import get_float
from .errors import ConfigError, DivergenceError
from .objectives import Objective, stochastic_gradient
from .topology import InteractionMatrix


@dataclass(frozen=True)
class SwarmState:
    params: np.ndarray
    momentum: np.ndarray = None
    k: int = 0
    grad: np.ndarray | None = None  # gradient stack used by the step that produced this state

    def __post_init__(self):
        p = np.asarray(self.params, dtype=float)
        if p.ndim != 2:
            raise ValueError("params must be an (N, d) matrix")
        object.__setattr__(self, "params", p)
        if self.momentum is None:
            object.__setattr__(self, "momentum", np.zeros_like(p))
        elif np.shape(self.momentum) != p.shape:
            raise ValueError("momentum buffer shape differs from params")

    @property
    def n_agents(self) -> int:
        return self.params.shape[0]


@dataclass(frozen=True)
class StepSchedule:
    """Fixed ``alpha`` or diminishing ``theta / (k**eps + t)``."""

    kind: str = "fixed"
    alpha: float = 0.01
    theta: float = 1.0
    t: float = 0.0
    eps: float = 1.0

    def __post_init__(self):
        if self.kind == "fixed":
            if not self.alpha > 0:
                raise ValueError("fixed step size must be positive")
        elif self.kind == "diminishing":
            if not self.theta > 0 or self.t < 0 or not 0.5 < self.eps <= 1.0:
                raise ValueError("diminishing schedule needs theta > 0, t >= 0, eps in (0.5, 1]")
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def fixed(cls, alpha: float) -> StepSchedule:
        return cls("fixed", alpha=alpha)

    @classmethod
    def diminishing(cls, theta: float, t: float, eps: float) -> StepSchedule:
        return cls("diminishing", theta=theta, t=t, eps=eps)

    def __call__(self, k: int) -> float:
        return step_size(self, k)

    def describe(self) -> str:
        if self.kind == "fixed":
            return f"fixed:{self.alpha!r}"
        return f"dim:theta={self.theta!r},t={self.t!r},eps={self.eps!r}"

    @classmethod
    def from_descriptor(cls, kind: str, args: list[str], kwargs: dict[str, str]) -> StepSchedule:
        try:
            if kind == "fixed":
                return cls.fixed(float(args[0]) if args else get_float(kwargs, "alpha"))
            if kind in ("dim", "diminishing"):
                return cls.diminishing(get_float(kwargs, "theta", 1.0), get_float(kwargs, "t", 0.0),
                                       get_float(kwargs, "eps", 1.0))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        raise ConfigError(f"unknown step schedule {kind!r}")


def step_size(schedule: StepSchedule, k: int) -> float:
    if k < 0:
        raise ValueError("iteration index must be nonnegative")
    if schedule.kind == "fixed":
        return schedule.alpha
    if k == 0 and schedule.t == 0:
        # 0**eps + 0 would divide by zero; start the sequence at k = 1
        k = 1
    return schedule.theta / (k ** schedule.eps + schedule.t)


@dataclass(frozen=True)
class OptimizerKind:
    name: str
    mu: float = 0.0
    local_epochs: int = 1
    client_fraction: float = 1.0

    NAMES = ("cdsgd", "cdmsgd_polyak", "cdmsgd_nesterov", "centralized_sgd", "fedavg")

    def __post_init__(self):
        if self.name not in self.NAMES:
            raise ValueError(f"unknown optimizer {self.name!r}")
        if not 0.0 <= self.mu < 1.0:
            raise ValueError("momentum mu must lie in [0, 1)")
        if self.local_epochs < 1 or not 0.0 < self.client_fraction <= 1.0:
            raise ValueError("fedavg needs E >= 1 and 0 < C <= 1")

    @classmethod
    def from_descriptor(cls, kind: str, kwargs: dict[str, str]) -> OptimizerKind:
        try:
            if kind == "cdsgd":
                return cls("cdsgd")
            if kind == "cdmsgd-polyak":
                return cls("cdmsgd_polyak", mu=get_float(kwargs, "mu", 0.9))
            if kind == "cdmsgd-nesterov":
                return cls("cdmsgd_nesterov", mu=get_float(kwargs, "mu", 0.9))
            if kind in ("sgd", "centralized"):
                return cls("centralized_sgd")
            if kind == "fedavg":
                return cls("fedavg", local_epochs=int(get_float(kwargs, "E", 1)),
                           client_fraction=get_float(kwargs, "C", 1.0))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        raise ConfigError(f"unknown algorithm {kind!r}")

    @property
    def decentralized(self) -> bool:
        return self.name.startswith("cd")


def make_samplers(seed_seq: np.random.SeedSequence | int, shards) -> list[EpochSampler]:
    """One independent epoch-shuffle stream per agent, derived from one master seed."""
    if not isinstance(seed_seq, np.random.SeedSequence):
        seed_seq = np.random.SeedSequence(seed_seq)
    children = seed_seq.spawn(len(shards))
    return [EpochSampler(s.n_j, np.random.default_rng(c)) for s, c in zip(shards, children)]


def gradient_stack(spec: Objective, points: np.ndarray, shards, batch: int, samplers,
                   executor: Executor | None = None, step: int | None = None) -> np.ndarray:
    """Row ``j`` is agent ``j``'s stochastic gradient evaluated at ``points[j]``.

    Each agent draws from its own sampler, so running the rows through an
    executor gives the same numbers as the serial loop.
    """
    def one(j):
        return stochastic_gradient(spec, points[j], shards[j], min(batch, shards[j].n_j), samplers[j])

    n = len(shards)
    rows = list(executor.map(one, range(n))) if executor is not None else [one(j) for j in range(n)]
    G = np.stack(rows)
    bad = ~np.isfinite(G).all(axis=1)
    if bad.any():
        raise DivergenceError(int(np.argmax(bad)), step, "gradient")
    return G


def _check_params(x: np.ndarray, step: int):
    bad = ~np.isfinite(x).all(axis=1)
    if bad.any():
        raise DivergenceError(int(np.argmax(bad)), step, "parameter")


def cdsgd_step(state: SwarmState, pi: InteractionMatrix, spec: Objective, shards, batch: int,
               alpha: float, samplers, executor: Executor | None = None) -> SwarmState:
    """``x_{k+1} = Pi x_k - alpha G(x_k)``."""
    G = gradient_stack(spec, state.params, shards, batch, samplers, executor, state.k)
    w = pi.mix(state.params)
    x = w - alpha * G
    _check_params(x, state.k)
    return SwarmState(x, state.momentum, state.k + 1, G)


def cdmsgd_polyak_step(state: SwarmState, pi: InteractionMatrix, spec: Objective, shards, batch: int,
                       alpha: float, mu: float, samplers, executor: Executor | None = None) -> SwarmState:
    G = gradient_stack(spec, state.params, shards, batch, samplers, executor, state.k)
    w = pi.mix(state.params)
    v = mu * state.momentum - alpha * G
    x = w + v
    _check_params(x, state.k)
    return SwarmState(x, v, state.k + 1, G)


def cdmsgd_nesterov_step(state: SwarmState, pi: InteractionMatrix, spec: Objective, shards, batch: int,
                         alpha: float, mu: float, samplers, executor: Executor | None = None) -> SwarmState:
    """Like the Polyak variant, but the gradient is taken at ``x_k + mu v_k``."""
    G = gradient_stack(spec, state.params + mu * state.momentum, shards, batch, samplers, executor, state.k)
    w = pi.mix(state.params)
    v = mu * state.momentum - alpha * G
    x = w + v
    _check_params(x, state.k)
    return SwarmState(x, v, state.k + 1, G)


def centralized_sgd_step(x: np.ndarray, spec: Objective, shard, batch: int, alpha: float,
                         sampler) -> np.ndarray:
    g = stochastic_gradient(spec, x, shard, min(batch, shard.n_j), sampler)
    if not np.isfinite(g).all():
        raise DivergenceError(0, None, "gradient")
    out = x - alpha * g
    if not np.isfinite(out).all():
        raise DivergenceError(0, None, "parameter")
    return out


def local_steps_per_epoch(n_j: int, batch: int) -> int:
    return max(1, n_j // min(batch, n_j))


def fedavg_round(params: np.ndarray, spec: Objective, shards, local_epochs: int, client_fraction: float,
                 batch: int, alpha: float, samplers, rng: np.random.Generator) -> np.ndarray:
    """One FedAvg round over ``ceil(C N)`` sampled clients.

    Each sampled client runs ``E`` local epochs of SGD from its current vector;
    every client vector is then replaced by the ``n_j``-weighted mean of the
    sampled results.
    """
    if local_epochs < 1 or not 0.0 < client_fraction <= 1.0:
        raise ValueError("fedavg needs E >= 1 and 0 < C <= 1")
    n = len(shards)
    m = min(n, math.ceil(client_fraction * n))
    chosen = np.arange(n) if m == n else np.sort(rng.choice(n, size=m, replace=False))
    results = []
    for j in chosen:
        x = params[j].copy()
        for _ in range(local_epochs * local_steps_per_epoch(shards[j].n_j, batch)):
            try:
                x = centralized_sgd_step(x, spec, shards[j], batch, alpha, samplers[j])
            except DivergenceError as exc:
                raise DivergenceError(int(j), exc.step, exc.what) from None
        results.append(x)
    sizes = np.array([shards[j].n_j for j in chosen], dtype=float)
    weights = sizes / sizes.sum()
    avg = weights @ np.stack(results)
    return np.tile(avg, (n, 1))


def max_stable_step_size(zeta1: float, qm: float, gamma_m: float, lambda_n: float) -> tuple[float, bool]:
    """Largest fixed step ``(zeta1 - (1 - lambda_N) Qm) / (gamma_m Qm)``.

    Returns ``(alpha, admissible)``; ``admissible`` is False when the bound is
    not strictly positive (network or noise too adverse for any fixed step).
    """
    if gamma_m <= 0 or qm <= 0:
        raise ValueError("gamma_m and Qm must be positive")
    if zeta1 <= 0:
        raise ValueError("zeta1 must be positive")
    alpha = float((zeta1 - (1.0 - lambda_n) * qm) / (gamma_m * qm))
    return alpha, alpha > 0
