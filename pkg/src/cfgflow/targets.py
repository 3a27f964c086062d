"""Target distributions: unnormalized log-densities and scores on Omega.

Scores are smooth extensions to all of R^d; the sampler only evaluates
them at in-domain particles, but total functions keep the code simple.
Targets carry an optional sampler for their untruncated base density,
used by rejection-sampling ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import domains
from .domains import ConstraintDomain

Array = np.ndarray


@dataclass(frozen=True)
class TargetDistribution:
    name: str
    dim: int
    log_density_unnorm: Callable[[Array], Array]
    score: Callable[[Array], Array]
    domain: ConstraintDomain
    #: draws from the untruncated base density: (rng, n) -> (n, dim)
    base_sampler: Optional[Callable[[np.random.Generator, int], Array]] = None
    #: envelope-rejection proposal for targets without a samplable base:
    #: {"kind": "uniform_box", "low": .., "high": .., "log_bound": ..}
    proposal: Optional[dict] = None


@dataclass(frozen=True)
class LassoProblem:
    """Synthetic regression instance behind the constrained posterior."""

    X: Array
    y: Array
    sigma2: float
    beta_star: Array        # solves (X^T X + I) beta = X^T y
    precision: Array        # (X^T X + I) / sigma2
    q: float
    r: float


def truncated_std_gaussian(domain: ConstraintDomain) -> TargetDistribution:
    """Standard normal N(0, I) truncated to the given domain."""

    def logp(x: Array) -> Array:
        return -0.5 * np.sum(np.square(x), axis=-1)

    def score(x: Array) -> Array:
        return -np.asarray(x, dtype=float)

    def base(rng: np.random.Generator, n: int) -> Array:
        return rng.standard_normal((n, domain.dim))

    return TargetDistribution("trunc_gauss", domain.dim, logp, score, domain, base)


_MIX_STD = 0.2
_MIX_CENTERS = np.array([(a, b) for a in (-1.7, 0.0, 1.7) for b in (-1.7, 0.0, 1.7)])


def block_gaussian_mixture() -> TargetDistribution:
    """Nine equal-weight isotropic Gaussians (std 0.2) on the block.

    Centers form the grid {-1.7, 0, 1.7}^2.  The score is the
    responsibility-weighted average of component scores, computed in a
    shifted-exponent form so far-field evaluations stay finite.
    """
    dom = domains.make_block()
    var = _MIX_STD ** 2

    def _comp_logs(x: Array) -> Array:
        diff = np.asarray(x, dtype=float)[..., None, :] - _MIX_CENTERS
        return -0.5 * np.sum(np.square(diff), axis=-1) / var  # (..., 9)

    def logp(x: Array) -> Array:
        logs = _comp_logs(x)
        m = np.max(logs, axis=-1)
        return m + np.log(np.sum(np.exp(logs - m[..., None]), axis=-1))

    def score(x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        logs = _comp_logs(x)
        m = np.max(logs, axis=-1, keepdims=True)
        w = np.exp(logs - m)
        w /= np.sum(w, axis=-1, keepdims=True)
        comp_scores = (_MIX_CENTERS - x[..., None, :]) / var  # (..., 9, d)
        return np.sum(w[..., None] * comp_scores, axis=-2)

    def base(rng: np.random.Generator, n: int) -> Array:
        ks = rng.integers(0, len(_MIX_CENTERS), size=n)
        return _MIX_CENTERS[ks] + _MIX_STD * rng.standard_normal((n, 2))

    return TargetDistribution("block_mixture", 2, logp, score, dom, base)


def double_moon_target() -> TargetDistribution:
    """p* proportional to q on the double-moon domain.

    The domain's constraint is g = -log q - 2, so log q = -g - 2 and the
    score is exactly -grad g.  There is no directly samplable base; a
    uniform-box envelope serves rejection sampling (sup q barely exceeds 1,
    attained near (+-3, 0), and the domain fits inside [-4.5, 4.5]^2).
    """
    dom = domains.make_double_moon()

    def logp(x: Array) -> Array:
        return -dom.g(x) - 2.0

    def score(x: Array) -> Array:
        return -dom.grad_g(x)

    proposal = {"kind": "uniform_box", "low": [-4.5, -4.5],
                "high": [4.5, 4.5], "log_bound": 0.01}
    return TargetDistribution("double_moon", 2, logp, score, dom,
                              base_sampler=None, proposal=proposal)


def make_synthetic_lasso(seed: int, s: float = 1.0, q: float = 1.0,
                         noise_std: float = 5.0) -> LassoProblem:
    """Generate the 20-dimensional regression instance.

    X is 1000 x 20 with i.i.d. standard normal entries, y = X beta_true + eps
    with eps ~ N(0, 25 I) and beta_true = (10, ..., 10, 0, ..., 0).  The
    radius is r = s * ||beta_OLS||_1 with shrinkage factor s in (0, 1].
    `noise_std` exists as a test hook (0 forces eps = 0); the posterior
    noise variance stays sigma^2 = 25 regardless.
    """
    if not 0.0 < s <= 1.0:
        raise ValueError(f"shrinkage factor must lie in (0, 1], got {s}")
    rng = np.random.default_rng(seed)
    n_obs, dim = 1000, 20
    X = rng.standard_normal((n_obs, dim))
    beta_true = np.concatenate([np.full(dim // 2, 10.0), np.zeros(dim // 2)])
    y = X @ beta_true + noise_std * rng.standard_normal(n_obs)
    beta_ols, *_ = np.linalg.lstsq(X, y, rcond=None)
    sigma2 = 25.0
    A = X.T @ X + np.eye(dim)
    beta_star = np.linalg.solve(A, X.T @ y)
    return LassoProblem(X=X, y=y, sigma2=sigma2, beta_star=beta_star,
                        precision=A / sigma2, q=q,
                        r=s * float(np.sum(np.abs(beta_ols))))


def lasso_posterior(problem: LassoProblem) -> TargetDistribution:
    """Gaussian posterior N(beta*, sigma^2 (X^T X + I)^-1) on the lq ball."""
    dim = problem.beta_star.shape[0]
    dom = domains.make_lq_ball(problem.q, problem.r, dim)
    prec = problem.precision
    beta_star = problem.beta_star
    # Cholesky of the unscaled precision, for base draws.
    chol = np.linalg.cholesky(prec * problem.sigma2)
    sigma = float(np.sqrt(problem.sigma2))

    def logp(b: Array) -> Array:
        d = np.asarray(b, dtype=float) - beta_star
        return -0.5 * np.sum((d @ prec) * d, axis=-1)

    def score(b: Array) -> Array:
        return -(np.asarray(b, dtype=float) - beta_star) @ prec

    def base(rng: np.random.Generator, n: int) -> Array:
        xi = rng.standard_normal((n, dim))
        # cov = sigma^2 A^-1 with A = L L^T, so draws are beta* + sigma L^-T xi
        return beta_star + sigma * np.linalg.solve(chol.T, xi.T).T

    return TargetDistribution("lasso", dim, logp, score, dom, base)


def build_pair(domain_spec: dict, target_spec: dict
               ) -> tuple[ConstraintDomain, TargetDistribution]:
    """Resolve the (domain, target) pair named in a run config.

    Target names: "trunc_gauss", "block_mixture", "double_moon", "lasso".
    The lasso target owns its domain (the ball radius depends on the
    generated data), so its domain entry must be {"name": "from_target"}.
    """
    spec = dict(target_spec)
    try:
        name = spec.pop("name")
    except KeyError:
        raise ValueError("target config requires a 'name' key") from None

    if name == "lasso":
        if dict(domain_spec) != {"name": "from_target"}:
            raise ValueError(
                "lasso target defines its own ball; set domain to "
                '{"name": "from_target"}')
        seed = spec.pop("seed", 0)
        s = spec.pop("s", 1.0)
        q = spec.pop("q", 1.0)
        if spec:
            raise ValueError(f"unknown lasso target keys: {sorted(spec)}")
        target = lasso_posterior(make_synthetic_lasso(seed, s=s, q=q))
        return target.domain, target

    if spec:
        raise ValueError(f"target '{name}' takes no parameters, got {sorted(spec)}")
    dom = domains.from_config(domain_spec)
    if name == "trunc_gauss":
        return dom, truncated_std_gaussian(dom)
    if name == "block_mixture":
        if dom.name != "block":
            raise ValueError("block_mixture target requires the block domain")
        return dom, block_gaussian_mixture()
    if name == "double_moon":
        if dom.name != "double_moon":
            raise ValueError("double_moon target requires the double_moon domain")
        return dom, double_moon_target()
    raise ValueError(f"unknown target '{name}'")
