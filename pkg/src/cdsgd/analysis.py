"""Lyapunov function of the consensus iteration and the associated bounds.

``V(x, alpha) = sum_j (N n_j / n) f_j(x^j) + (1 / 2 alpha) tr(x^T (I - Pi) x)``

with ``f_j`` the shard-mean loss.  CDSGD is exactly a stochastic gradient
step on ``V`` whose stochastic gradient is ``G + (I - Pi) x / alpha``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import nnls

from .errors import EstimationError
from .objectives import LogisticObjective, Objective, QuadraticObjective, full_gradient, loss, stochastic_gradient
from .topology import InteractionMatrix


def agent_weights(shards) -> np.ndarray:
    """``(N / n) n_j`` per agent; all ones for equal shards."""
    sizes = np.array([s.n_j for s in shards])
    return (len(sizes) * sizes) / sizes.sum()


def _require_alpha(alpha: float):
    if not alpha > 0:
        raise ValueError(f"step size must be positive, got {alpha}")


def seminorm_sq(x: np.ndarray, pi: InteractionMatrix) -> float:
    """``||x||^2_{I - Pi}`` summed over parameter coordinates."""
    return float(np.sum(x * (x - pi.mix(x))))


def lyapunov_value(x: np.ndarray, pi: InteractionMatrix, alpha: float, spec: Objective, shards) -> float:
    _require_alpha(alpha)
    x = np.asarray(x, dtype=float)
    if not np.isfinite(x).all():
        raise ValueError("non-finite parameters")
    w = agent_weights(shards)
    obj = sum(w[j] * loss(spec, x[j], shards[j]) for j in range(len(shards)))
    return float(obj + seminorm_sq(x, pi) / (2.0 * alpha))


def objective_gradient_stack(x: np.ndarray, spec: Objective, shards, weighted: bool = True) -> np.ndarray:
    G = np.stack([full_gradient(spec, x[j], shards[j]) for j in range(len(shards))])
    return agent_weights(shards)[:, None] * G if weighted else G


def lyapunov_gradient(x: np.ndarray, pi: InteractionMatrix, alpha: float, spec: Objective, shards) -> np.ndarray:
    _require_alpha(alpha)
    return objective_gradient_stack(x, spec, shards) + (x - pi.mix(x)) / alpha


def stochastic_lyapunov_gradient(x: np.ndarray, pi: InteractionMatrix, alpha: float, G: np.ndarray) -> np.ndarray:
    """``G + (I - Pi) x / alpha``; ``x - alpha * result`` is the CDSGD update."""
    _require_alpha(alpha)
    return G + (x - pi.mix(x)) / alpha


def consensus_residuals(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    s = x.mean(axis=0)
    return s, np.linalg.norm(x - s, axis=1)


def effective_constants(h_m: float, gamma_m: float, lambda2: float, lambda_n: float,
                        alpha: float) -> tuple[float, float]:
    """``(H_hat, gamma_hat)`` for the Lyapunov function at step ``alpha``."""
    _require_alpha(alpha)
    if not 0 < lambda_n <= lambda2 <= 1:
        raise ValueError("need 0 < lambda_N <= lambda_2 <= 1")
    if h_m < 0 or gamma_m <= 0:
        raise ValueError("need H_m >= 0 and gamma_m > 0")
    return h_m + (1.0 - lambda2) / (2.0 * alpha), gamma_m + (1.0 - lambda_n) / alpha


@dataclass
class LyapunovReport:
    V: float
    grad_V_norm: float
    consensus_residuals: np.ndarray
    mean_params: np.ndarray
    H_hat: float | None = None
    gamma_hat: float | None = None
    V_star: float | None = None

    @property
    def max_residual(self) -> float:
        return float(self.consensus_residuals.max())


def lyapunov_report(x, pi, alpha, spec, shards, h_m=None, gamma_m=None, v_star=None) -> LyapunovReport:
    s, res = consensus_residuals(x)
    grad = lyapunov_gradient(x, pi, alpha, spec, shards)
    h_hat = g_hat = None
    if h_m is not None and gamma_m is not None and pi.n_agents > 1:
        lam = pi.eigenvalues
        h_hat, g_hat = effective_constants(h_m, gamma_m, float(lam[1]), float(lam[-1]), alpha)
    return LyapunovReport(lyapunov_value(x, pi, alpha, spec, shards), float(np.linalg.norm(grad)), res, s,
                          h_hat, g_hat, v_star)


# -- minimisers of V ---------------------------------------------------------

def quadratic_optimum(spec: QuadraticObjective, shards, pi: InteractionMatrix, alpha: float,
                      weighted: bool = True) -> tuple[np.ndarray, float]:
    """Exact stationary point of ``V`` (or of the unweighted CDSGD map).

    Solves ``(diag(w) kron A + (I - Pi) / alpha kron I_d) vec(x) = vec(w_j c_j)``
    with ``c_j = b + mean z`` over shard ``j``.  With ``weighted=False`` the
    agent weights are dropped, giving the fixed point of
    ``x = Pi x - alpha G(x)`` under full-batch gradients.
    """
    _require_alpha(alpha)
    n, d = len(shards), spec.dimension
    w = agent_weights(shards) if weighted else np.ones(n)
    c = np.stack([spec.b + s.feature_mean for s in shards])
    M = np.kron(np.diag(w), spec.A) + np.kron(pi.laplacian / alpha, np.eye(d))
    x = np.linalg.solve(M, (w[:, None] * c).ravel()).reshape(n, d)
    return x, lyapunov_value(x, pi, alpha, spec, shards)


def quadratic_hessian(spec: QuadraticObjective, shards, pi: InteractionMatrix, alpha: float) -> np.ndarray:
    d = spec.dimension
    return np.kron(np.diag(agent_weights(shards)), spec.A) + np.kron(pi.laplacian / alpha, np.eye(d))


def lyapunov_minimum(spec: Objective, shards, pi: InteractionMatrix, alpha: float,
                     x0: np.ndarray | None = None, tol: float = 1e-10,
                     max_iter: int = 200_000) -> tuple[np.ndarray, float]:
    """``(x*, V*)``: exact for quadratics, a long deterministic gradient run for logistic."""
    if isinstance(spec, QuadraticObjective):
        return quadratic_optimum(spec, shards, pi, alpha)
    if not isinstance(spec, LogisticObjective):
        raise ValueError(f"no reliable minimiser of V for {spec.kind} objectives")
    from .objectives import swarm_constants

    gamma = swarm_constants(spec, shards).gamma_m * agent_weights(shards).max()
    step = 1.0 / (gamma + (1.0 - pi.eigenvalues[-1]) / alpha)
    x = np.zeros((len(shards), spec.dimension)) if x0 is None else np.array(x0, dtype=float)
    # accelerated gradient descent with gradient-based restart
    y, t = x.copy(), 1.0
    for _ in range(max_iter):
        g = lyapunov_gradient(y, pi, alpha, spec, shards)
        x_new = y - step * g
        if np.sum(g * (x_new - x)) > 0:
            y, t = x.copy(), 1.0
            continue
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t = x_new, t_new
        if np.linalg.norm(lyapunov_gradient(x, pi, alpha, spec, shards)) <= tol:
            break
    return x, lyapunov_value(x, pi, alpha, spec, shards)


# -- gradient-noise constants -----------------------------------------------

@dataclass
class NoiseConstants:
    zeta1: float
    zeta2: float
    Q: float
    Q_V: float
    n_probes: int = 0
    label: str = "empirical (probe-limited)"

    @property
    def Qm(self) -> float:
        return self.Q_V + self.zeta2 ** 2

    def to_dict(self) -> dict:
        out = asdict(self)
        out["Qm"] = self.Qm
        return out


def estimate_noise_constants(spec: Objective, shards, pi: InteractionMatrix, alpha: float, probe_points,
                             samples_per_point: int, rng: np.random.Generator,
                             batch_size: int) -> NoiseConstants:
    """Fit the tightest alignment and variance constants over a set of probes.

    At each probe ``x`` the exact mean of the stochastic Lyapunov gradient is
    the full-batch gradient stack plus the network term (uniform batches are
    unbiased), and its variance is a Monte-Carlo average over
    ``samples_per_point`` independent batches.  ``(Q, Q_V)`` is a nonnegative
    least-squares fit of variance against ``||grad V||^2``, after which ``Q``
    is raised until every probe lies under the envelope.
    """
    if samples_per_point < 2:
        raise ValueError("need at least two samples per probe point")
    _require_alpha(alpha)
    align, ratio, var, gsq = [], [], [], []
    for x in probe_points:
        x = np.asarray(x, dtype=float)
        if not np.isfinite(x).all():
            raise ValueError("non-finite probe point")
        net = (x - pi.mix(x)) / alpha
        grad_v = objective_gradient_stack(x, spec, shards) + net
        g2 = float(np.sum(grad_v * grad_v))
        if math.sqrt(g2) < 1e-12:
            continue
        mean_j = objective_gradient_stack(x, spec, shards, weighted=False) + net
        dev = 0.0
        for _ in range(samples_per_point):
            G = np.stack([stochastic_gradient(spec, x[j], shards[j], min(batch_size, shards[j].n_j), rng)
                          for j in range(len(shards))])
            diff = G + net - mean_j
            dev += float(np.sum(diff * diff))
        align.append(float(np.sum(grad_v * mean_j)) / g2)
        ratio.append(float(np.linalg.norm(mean_j)) / math.sqrt(g2))
        var.append(dev / samples_per_point)
        gsq.append(g2)
    if not align:
        raise EstimationError("every probe point had ||grad V|| < 1e-12")
    zeta1 = min(align)
    if zeta1 <= 0:
        raise EstimationError(f"mean stochastic Lyapunov gradient is not a descent direction (zeta1={zeta1:.3g})")
    zeta2 = max(max(ratio), zeta1)
    var, gsq = np.array(var), np.array(gsq)
    if np.all(var == 0.0):
        q, q_v = 0.0, 0.0
    else:
        (q, q_v), _ = nnls(np.column_stack([np.ones_like(gsq), gsq]), var)
        q = max(q, float(np.max(var - q_v * gsq)), 0.0)
    return NoiseConstants(zeta1, zeta2, float(q), float(q_v), len(align))


# -- bounds ------------------------------------------------------------------

def bound_prop1_consensus(alpha: float, lip: float, lambda2: float) -> float:
    """Expected distance of any agent from the swarm mean: ``alpha L / (1 - lambda_2)``."""
    if lambda2 >= 1:
        raise ValueError("lambda_2 >= 1: disconnected network, consensus bound diverges")
    if lip <= 0 or alpha < 0:
        raise ValueError("need L > 0 and alpha >= 0")
    return alpha * lip / (1.0 - lambda2)


def _thm1_rate(alpha, h_hat, zeta1):
    rate = alpha * h_hat * zeta1
    if not 0 < rate <= 1:
        raise ValueError(f"alpha * H_hat * zeta1 = {rate:.6g} lies outside (0, 1]")
    return 1.0 - rate


def bound_thm1(v1_gap: float, alpha: float, h_hat: float, gamma_hat: float, zeta1: float, Q: float,
               k: int | float) -> float:
    """Right-hand side of the fixed-step strongly convex bound on ``E[V(x_k) - V*]``.

    ``k = inf`` returns the asymptotic neighbourhood radius.
    """
    r = _thm1_rate(alpha, h_hat, zeta1)
    noise = alpha ** 2 * gamma_hat * Q / 2.0
    if math.isinf(k):
        return thm1_asymptote(alpha, h_hat, gamma_hat, zeta1, Q)
    if k < 1:
        raise ValueError("k starts at 1")
    geo = k if r == 1.0 else (1.0 - r ** k) / (1.0 - r)
    return r ** (k - 1) * v1_gap + noise * geo


def thm1_asymptote(alpha: float, h_hat: float, gamma_hat: float, zeta1: float, Q: float) -> float:
    _thm1_rate(alpha, h_hat, zeta1)
    return alpha * gamma_hat * Q / (2.0 * h_hat * zeta1)


def bound_thm2_avg_grad(gamma_m: float, alpha: float, lambda_n: float, Q: float, zeta1: float, m: int | float,
                        v1: float, v_inf: float) -> float:
    """Bound on ``(1/m) E[sum_{k<=m} ||grad V(x_k)||^2]`` for the nonconvex fixed-step case."""
    _require_alpha(alpha)
    if zeta1 <= 0 or Q < 0 or v1 < v_inf:
        raise ValueError("need zeta1 > 0, Q >= 0 and V(x_1) >= V_inf")
    if m < 1:
        raise ValueError("m must be >= 1")
    noise = (gamma_m * alpha + 1.0 - lambda_n) * Q / zeta1
    if math.isinf(m):
        return noise
    return noise + 2.0 * (v1 - v_inf) / (zeta1 * alpha * m)


def gradient_norm_bound(norms, margin: float = 0.1) -> float:
    """Empirical stand-in for the bound on ``E||g(x_k)||``: max observed norm plus a margin."""
    norms = np.asarray(list(norms), dtype=float)
    if norms.size == 0:
        raise ValueError("no gradient norms observed")
    return float(norms.max() * (1.0 + margin))
