"""Discrete optimal transport between classifier probability batches.

The cost matrix is the pairwise Euclidean distance between source and
target probability rows; plans couple uniform sample marginals. The exact
solver is a deterministic transportation simplex, the entropic solver a
log-domain Sinkhorn with optional epsilon annealing for small eps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ._accel import NUMBA_ENABLED, njit
from ._simplex import transport_simplex
from ._sinkhorn import sinkhorn_log

log = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-9  # simplex row sums sit well inside this
ROW_SIMPLEX_TOL = 1e-9


@dataclass
class Marginals:
    """Prescribed row/column masses of a transport plan; each sums to 1."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.a = np.ascontiguousarray(self.a, dtype=np.float64)
        self.b = np.ascontiguousarray(self.b, dtype=np.float64)
        for name, vec in (("a", self.a), ("b", self.b)):
            if vec.ndim != 1 or vec.size == 0:
                raise ValueError(f"marginal {name} must be a nonempty vector")
            if np.any(vec < 0) or not np.all(np.isfinite(vec)):
                raise ValueError(f"marginal {name} must be nonnegative and finite")
            if abs(vec.sum() - 1.0) > 1e-12:
                raise ValueError(f"marginal {name} must sum to 1 (got {vec.sum()!r})")

    @staticmethod
    def uniform(n_s: int, n_t: int) -> "Marginals":
        if n_s < 1 or n_t < 1:
            raise ValueError("empty batch: marginals need n_s >= 1 and n_t >= 1")
        return Marginals(np.full(n_s, 1.0 / n_s), np.full(n_t, 1.0 / n_t))


@dataclass
class TransportPlan:
    """Coupling gamma with its linear objective <gamma, cost>."""

    gamma: np.ndarray
    objective: float
    converged: bool = True
    iterations: int = 0
    marginal_error: float = 0.0
    meta: dict = field(default_factory=dict)


@njit(cache=True)
def _pairwise_dist_kernel(x, y):
    n, d = x.shape
    m = y.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(d):
                diff = x[i, k] - y[j, k]
                s += diff * diff
            out[i, j] = np.sqrt(s)
    return out


def _pairwise_dist_numpy(x, y):
    diff = x[:, None, :] - y[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


_pairwise_dist = _pairwise_dist_kernel if NUMBA_ENABLED else _pairwise_dist_numpy


def _check_prob_rows(p: np.ndarray, name: str) -> np.ndarray:
    p = np.ascontiguousarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise ValueError(f"{name} must be a nonempty 2-D probability matrix")
    for idx in range(p.shape[0]):
        row = p[idx]
        if not np.all(np.isfinite(row)) or np.any(row < -1e-12):
            raise ValueError(f"{name} row {idx} is not on the probability simplex")
        if abs(row.sum() - 1.0) > ROW_SIMPLEX_TOL:
            raise ValueError(
                f"{name} row {idx} is not on the probability simplex "
                f"(sum {row.sum()!r})"
            )
    return p


def build_cost_matrix(src_probs: np.ndarray, tgt_probs: np.ndarray) -> np.ndarray:
    """Pairwise Euclidean distances between probability rows, (n_s, n_t)."""
    gs = _check_prob_rows(src_probs, "src_probs")
    gt = _check_prob_rows(tgt_probs, "tgt_probs")
    if gs.shape[1] != gt.shape[1]:
        raise ValueError(
            f"class-count mismatch: src has {gs.shape[1]} columns, "
            f"tgt has {gt.shape[1]}"
        )
    return _pairwise_dist(gs, gt)


def _check_cost(cost: np.ndarray, marg: Marginals) -> np.ndarray:
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise ValueError("cost matrix must be nonempty and 2-D")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")
    n, m = cost.shape
    if marg.a.size != n or marg.b.size != m:
        raise ValueError(
            f"marginal sizes ({marg.a.size}, {marg.b.size}) do not match "
            f"cost shape {cost.shape}"
        )
    if abs(marg.a.sum() - marg.b.sum()) > 1e-9:
        raise ValueError("infeasible marginals: total masses differ")
    return cost


def solve_exact(cost: np.ndarray, marg: Marginals) -> TransportPlan:
    """Vertex-optimal plan via the deterministic transportation simplex."""
    cost = _check_cost(cost, marg)
    tol = 1e-12 * (1.0 + float(np.abs(cost).max()))
    gamma, objective, ok = transport_simplex(cost, marg.a, marg.b, tol)
    if ok != 1:
        raise RuntimeError("transportation simplex exceeded its pivot budget")
    err = _marginal_l1(gamma, marg)
    return TransportPlan(
        gamma=gamma,
        objective=float(objective),
        converged=True,
        marginal_error=err,
        meta={"solver": "exact"},
    )


def _marginal_l1(gamma: np.ndarray, marg: Marginals) -> float:
    row = np.abs(gamma.sum(axis=1) - marg.a).sum()
    col = np.abs(gamma.sum(axis=0) - marg.b).sum()
    return float(max(row, col))


def solve_sinkhorn(
    cost: np.ndarray,
    marg: Marginals,
    eps: float,
    max_iter: int = 200_000,
    tol: float = 1e-9,
    anneal: bool = True,
) -> TransportPlan:
    """Entropic plan via log-domain alternating scaling.

    For small eps the iteration is warm-started through a geometric ladder
    of larger eps values (``anneal``), which is the standard way to keep
    the iteration count manageable; the final stage always runs at the
    requested eps. A plan that fails to reach ``tol`` on both marginals is
    returned with ``converged=False``; callers must not treat it as exact.
    """
    cost = _check_cost(cost, marg)
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if tol <= 0:
        raise ValueError("tol must be > 0")
    n, m = cost.shape

    stages = [eps]
    if anneal:
        cmax = float(cost.max())
        lead = eps * 8.0
        while lead < cmax:
            stages.append(lead)
            lead *= 8.0
        stages.reverse()

    f = np.zeros(n)
    g = np.zeros(m)
    total_iters = 0
    converged = 0
    budget = max_iter
    for idx, stage_eps in enumerate(stages):
        last = idx == len(stages) - 1
        stage_tol = tol if last else max(tol, 1e-4)
        stage_budget = budget if last else min(budget, 500)
        gamma, f_new, g_new, it, converged = sinkhorn_log(
            cost, marg.a, marg.b, stage_eps, f, g, stage_budget, stage_tol
        )
        total_iters += it
        budget = max(1, max_iter - total_iters)
        if not last:
            # Potentials are stored scaled by eps: rescale for the next stage.
            ratio = stage_eps / stages[idx + 1]
            f = f_new * ratio
            g = g_new * ratio
    err = _marginal_l1(gamma, marg)
    objective = float(np.einsum("ij,ij->", gamma, cost))
    if converged != 1:
        log.warning(
            "sinkhorn did not converge: eps=%g, %d iterations, marginal L1=%.3e",
            eps,
            total_iters,
            err,
        )
    return TransportPlan(
        gamma=gamma,
        objective=objective,
        converged=bool(converged),
        iterations=total_iters,
        marginal_error=err,
        meta={"solver": "sinkhorn", "eps": eps},
    )
