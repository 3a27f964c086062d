"""Sample-quality metrics: energy distance, entropic Wasserstein-2, and
the fraction of constraint-violating particles."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .domains import ConstraintDomain

Array = np.ndarray


@dataclass(frozen=True)
class MetricReport:
    w2_sinkhorn: float
    energy: float
    ratio_out: Optional[float]
    n_samples: int

    def to_dict(self) -> dict:
        return asdict(self)


def _check_sets(x: Array, y: Array) -> tuple[Array, Array]:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise ValueError("sample sets must be nonempty")
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    return x, y


def _mean_pairwise_distance(x: Array, y: Array, block: int = 256) -> float:
    """Mean of ||x_i - y_j|| over all pairs, in row blocks so the distance
    matrix never exceeds a few hundred MB."""
    if x.shape[0] * y.shape[0] <= 4 * 10 ** 7:
        return float(cdist(x, y).mean())
    total = 0.0
    for i in range(0, x.shape[0], block):
        total += float(cdist(x[i:i + block], y).sum())
    return total / (x.shape[0] * y.shape[0])


def energy_distance(x: Array, y: Array) -> float:
    """V-statistic estimate of 2 E||X-Y|| - E||X-X'|| - E||Y-Y'||.

    Double sums run over all pairs; the zero diagonals of the within-set
    sums are included in the normalization.
    """
    x, y = _check_sets(x, y)
    return float(2.0 * _mean_pairwise_distance(x, y)
                 - _mean_pairwise_distance(x, x)
                 - _mean_pairwise_distance(y, y))


def sinkhorn_w2(x: Array, y: Array, eps_rel: float = 0.01,
                max_iter: int = 1000, tol: float = 1e-6) -> float:
    """Entropic Wasserstein-2 between uniform point clouds.

    Squared-Euclidean cost with regularization eps = eps_rel * mean cost;
    log-domain alternating updates until the L1 marginal violation drops
    below tol.  Returns sqrt(<plan, cost>).  Non-convergence warns with
    the achieved violation and still returns the value.
    """
    x, y = _check_sets(x, y)
    n, m = x.shape[0], y.shape[0]
    cost = cdist(x, y, "sqeuclidean")
    eps = eps_rel * float(cost.mean())
    if eps <= 0.0:  # identical singletons and the like
        return 0.0
    log_n, log_m = np.log(n), np.log(m)
    scaled = cost / -eps
    # dimensionless potentials u = f/eps, v = g/eps
    u = np.zeros(n)
    v = np.zeros(m)
    buf = np.empty_like(scaled)
    violation = np.inf
    converged = False

    def lse_rows() -> Array:
        np.add(scaled, v[None, :], out=buf)
        shift = buf.max(axis=1)
        np.subtract(buf, shift[:, None], out=buf)
        np.exp(buf, out=buf)
        return np.log(buf.sum(axis=1)) + shift

    for it in range(max_iter):
        lrow = lse_rows()
        if it > 0:
            # columns are exact right after the v-update; the row sums of
            # the current plan are exp(u + lrow - log n - log m)
            violation = float(np.abs(np.exp(u + lrow - log_n - log_m)
                                     - 1.0 / n).sum())
            if violation < tol:
                converged = True
                break
        u = log_m - lrow
        np.add(scaled, u[:, None], out=buf)
        shift = buf.max(axis=0)
        np.subtract(buf, shift[None, :], out=buf)
        np.exp(buf, out=buf)
        v = log_n - (np.log(buf.sum(axis=0)) + shift)
    if not converged:
        warnings.warn(f"Sinkhorn did not converge in {max_iter} iterations "
                      f"(marginal violation {violation:.3e})")
    np.add(scaled, u[:, None], out=buf)
    np.add(buf, v[None, :], out=buf)
    np.subtract(buf, log_n + log_m, out=buf)
    np.exp(buf, out=buf)
    return float(np.sqrt(max(np.einsum("ij,ij->", buf, cost), 0.0)))


def exact_w2_small(x: Array, y: Array) -> float:
    """Exact W2 between equal-size clouds (<= 64 points) by assignment."""
    x, y = _check_sets(x, y)
    if x.shape[0] != y.shape[0]:
        raise ValueError("exact_w2_small requires equally sized sets")
    if x.shape[0] > 64:
        raise ValueError("exact_w2_small supports at most 64 points")
    cost = cdist(x, y, "sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].mean()))


def ratio_out(domain: ConstraintDomain, ensemble) -> float:
    """Fraction of particles with g > 0."""
    pos = np.asarray(getattr(ensemble, "positions", ensemble), dtype=float)
    return float(np.mean(domain.g(pos) > 0.0))


def equalize_sizes(x: Array, y: Array, seed: int = 0) -> tuple[Array, Array]:
    """Seeded subsample of the larger cloud, for size-matched W2 reporting."""
    x, y = _check_sets(x, y)
    rng = np.random.default_rng(seed)
    if x.shape[0] > y.shape[0]:
        x = x[rng.choice(x.shape[0], size=y.shape[0], replace=False)]
    elif y.shape[0] > x.shape[0]:
        y = y[rng.choice(y.shape[0], size=x.shape[0], replace=False)]
    return x, y


def compute_report(x: Array, y: Array, domain: Optional[ConstraintDomain] = None,
                   eps_rel: float = 0.01, seed: int = 0) -> MetricReport:
    """Assemble the standard report for a particle cloud x against truth y."""
    x, y = _check_sets(x, y)
    xw, yw = equalize_sizes(x, y, seed)
    return MetricReport(
        w2_sinkhorn=sinkhorn_w2(xw, yw, eps_rel=eps_rel),
        energy=energy_distance(x, y),
        ratio_out=None if domain is None else ratio_out(domain, x),
        n_samples=x.shape[0])
