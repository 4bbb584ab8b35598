"""Agent interaction (mixing) matrices for fixed undirected graphs.

All builders return symmetric doubly stochastic matrices, so the spectrum is
real and computed with a symmetric eigensolver.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .descriptors import get_float

STOCHASTIC_TOL = 1e-12
UNIT_EIG_TOL = 1e-8


@dataclass(frozen=True)
class InteractionMatrix:
    weights: np.ndarray
    edge_set: frozenset = field(default=frozenset())
    eigenvalues: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"interaction matrix must be square, got shape {w.shape}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if not self.edge_set:
            object.__setattr__(self, "edge_set", _edges_from_support(w))
        sym = 0.5 * (w + w.T)
        eig = np.sort(np.linalg.eigvalsh(sym))[::-1].copy()
        eig.setflags(write=False)
        object.__setattr__(self, "eigenvalues", eig)

    @property
    def n_agents(self) -> int:
        return self.weights.shape[0]

    @property
    def laplacian(self) -> np.ndarray:
        """I - Pi, the PSD matrix defining the disagreement seminorm."""
        return np.eye(self.n_agents) - self.weights

    def mix(self, x: np.ndarray) -> np.ndarray:
        """Apply Pi column-wise to a stacked (N, d) parameter matrix."""
        return self.weights @ x

    def to_json(self) -> dict:
        return {"n": self.n_agents, "weights": self.weights.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> InteractionMatrix:
        w = np.asarray(obj["weights"], dtype=float)
        if "n" in obj and w.shape != (obj["n"], obj["n"]):
            raise ValueError(f"weights shape {w.shape} does not match n={obj['n']}")
        return cls(w)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> InteractionMatrix:
        return cls.from_json(json.loads(Path(path).read_text()))


def _edges_from_support(w: np.ndarray) -> frozenset:
    n = w.shape[0]
    return frozenset((j, l) for j in range(n) for l in range(j + 1, n) if w[j, l] != 0 or w[l, j] != 0)


@dataclass
class ValidationReport:
    doubly_stochastic: bool
    symmetric: bool
    connected: bool
    positive_definite: bool
    messages: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.doubly_stochastic and self.symmetric and self.connected and self.positive_definite


class SpectralSummary(NamedTuple):
    lambda2: float
    lambda_n: float
    spectral_gap: float
    degenerate: bool


def build_fully_connected(n_agents: int, rho: float = 0.9, allow_uniform: bool = False) -> InteractionMatrix:
    """Lazy uniform averaging ``(1 - rho) I + (rho / N) 11^T`` on the complete graph.

    ``rho = 1`` gives the plain uniform matrix, whose smallest eigenvalue is 0
    for N >= 2; it is only accepted with ``allow_uniform=True`` and emits a
    warning because it is not positive definite.
    """
    if n_agents < 1:
        raise ValueError("n_agents must be >= 1")
    if rho == 1.0 and allow_uniform:
        if n_agents > 1:
            warnings.warn("uniform interaction matrix has lambda_N = 0 and is not positive definite",
                          stacklevel=2)
    elif not 0.0 < rho < 1.0:
        raise ValueError(f"laziness rho must lie in (0, 1), got {rho}")
    n = n_agents
    w = (1.0 - rho) * np.eye(n) + (rho / n) * np.ones((n, n))
    edges = frozenset((j, l) for j in range(n) for l in range(j + 1, n))
    return InteractionMatrix(w, edges)


def build_ring(n_agents: int, beta: float = 0.2) -> InteractionMatrix:
    """Circulant ring: ``1 - 2 beta`` on the diagonal, ``beta`` to both neighbours."""
    if n_agents < 3:
        raise ValueError("a ring needs at least 3 agents")
    if not 0.0 < beta < 0.25:
        raise ValueError(f"ring coupling beta must lie in (0, 1/4), got {beta}")
    n = n_agents
    w = (1.0 - 2.0 * beta) * np.eye(n)
    idx = np.arange(n)
    w[idx, (idx + 1) % n] = beta
    w[idx, (idx - 1) % n] = beta
    edges = frozenset(tuple(sorted((j, (j + 1) % n))) for j in range(n))
    return InteractionMatrix(w, edges)


def build_from_edges(n_agents: int, edges, rho: float = 0.5) -> InteractionMatrix:
    """Lazy Metropolis weights for an arbitrary simple undirected graph.

    Off-diagonal weight ``1 / (1 + max(deg_j, deg_l))`` per edge, the diagonal
    absorbs the remainder, and the result is blended as ``(1 - rho) I + rho W``
    which keeps every eigenvalue above ``1 - 2 rho``.  Disconnected graphs are
    built anyway; :func:`validate` reports them.
    """
    if n_agents < 1:
        raise ValueError("n_agents must be >= 1")
    if not 0.0 < rho < 1.0:
        raise ValueError(f"laziness rho must lie in (0, 1), got {rho}")
    edge_set = set()
    for j, l in edges:
        if not (0 <= j < n_agents and 0 <= l < n_agents):
            raise ValueError(f"edge ({j}, {l}) references an agent outside 0..{n_agents - 1}")
        if j == l:
            raise ValueError(f"self loop on agent {j}")
        edge_set.add((min(j, l), max(j, l)))
    deg = np.zeros(n_agents, dtype=int)
    for j, l in edge_set:
        deg[j] += 1
        deg[l] += 1
    metro = np.zeros((n_agents, n_agents))
    for j, l in edge_set:
        metro[j, l] = metro[l, j] = 1.0 / (1 + max(deg[j], deg[l]))
    metro[np.diag_indices(n_agents)] = 1.0 - metro.sum(axis=1)
    w = (1.0 - rho) * np.eye(n_agents) + rho * metro
    return InteractionMatrix(w, frozenset(edge_set))


def validate(matrix: InteractionMatrix) -> ValidationReport:
    """Check each clause of the mixing-matrix assumptions; never raises."""
    w = matrix.weights
    n = matrix.n_agents
    msgs = []
    ones = np.ones(n)
    row_err = np.max(np.abs(w @ ones - ones))
    col_err = np.max(np.abs(ones @ w - ones))
    nonneg = bool(np.all(w >= 0.0) and np.all(w <= 1.0))
    ds = row_err <= STOCHASTIC_TOL and col_err <= STOCHASTIC_TOL and nonneg
    if not ds:
        msgs.append(f"not doubly stochastic: max row error {row_err:.3g}, column error {col_err:.3g}"
                    + ("" if nonneg else ", entries outside [0, 1]"))
    sym = bool(np.allclose(w, w.T, rtol=0.0, atol=STOCHASTIC_TOL))
    if not sym:
        msgs.append("not symmetric")
    for j in range(n):
        for l in range(j + 1, n):
            if (j, l) not in matrix.edge_set and (w[j, l] != 0 or w[l, j] != 0):
                msgs.append(f"nonzero weight on non-edge ({j}, {l})")
    eig = matrix.eigenvalues
    n_unit = int(np.sum(np.abs(eig - 1.0) <= UNIT_EIG_TOL))
    connected = n_unit == 1
    if not connected:
        msgs.append(f"eigenvalue 1 has multiplicity {n_unit}; graph is not connected")
    pd = bool(eig[-1] > 0.0)
    if not pd:
        msgs.append(f"smallest eigenvalue {eig[-1]:.3g} is not positive")
    return ValidationReport(ds, sym, connected, pd, msgs)


def spectral_summary(matrix: InteractionMatrix) -> SpectralSummary:
    """(lambda_2, lambda_N, 1 - lambda_2); degenerate for N = 1 or a zero gap."""
    eig = matrix.eigenvalues
    if matrix.n_agents == 1:
        return SpectralSummary(1.0, float(eig[0]), 0.0, True)
    lam2 = float(eig[1])
    gap = 1.0 - lam2
    return SpectralSummary(lam2, float(eig[-1]), gap, gap <= UNIT_EIG_TOL)


def from_descriptor(kind: str, n_agents: int, args: list[str], kwargs: dict[str, str]) -> InteractionMatrix:
    """Build a matrix from a parsed ``--topology`` descriptor."""
    if kind == "full":
        return build_fully_connected(n_agents, get_float(kwargs, "rho", 0.9),
                                     allow_uniform=kwargs.get("uniform", "0") in ("1", "true"))
    if kind == "ring":
        return build_ring(n_agents, get_float(kwargs, "beta", 0.2))
    if kind == "file":
        if not args:
            raise ValueError("file topology needs a path")
        return InteractionMatrix.load(args[0])
    raise ValueError(f"unknown topology kind {kind!r}")
