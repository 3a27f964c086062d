"""Independent ground-truth machinery: rejection sampling, boundary
quadrature on the block, the standalone band-wise surface-integral
estimator with its mean-squared-error sweep, and finite differences."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .domains import ConstraintDomain, adaptive_bandwidth, in_band
from .targets import TargetDistribution

Array = np.ndarray


def finite_diff(fn: Callable[[Array], Array], x: Array, step: float) -> Array:
    """Central differences per coordinate.

    Scalar-valued fn gives the gradient (d,); vector-valued fn gives the
    Jacobian (out, d).
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.shape[-1]):
        xp = x.copy()
        xm = x.copy()
        xp[..., i] += step
        xm[..., i] -= step
        cols.append((np.asarray(fn(xp)) - np.asarray(fn(xm))) / (2.0 * step))
    return np.stack(cols, axis=-1)


def rejection_sample(target: TargetDistribution, n: int, seed: int,
                     proposal_spec: Optional[dict] = None,
                     max_draws: int = 10_000_000,
                     batch_size: int = 65536) -> Array:
    """Draw n samples from the target restricted to its domain.

    With a samplable untruncated base the base is its own proposal and
    acceptance is just g <= 0.  Otherwise an envelope proposal
    {"kind": "uniform_box", "low", "high", "log_bound"} thins uniform
    box draws by exp(log_density_unnorm - log_bound).  Aborts with
    diagnostics if the acceptance rate stays below 1e-6 over a
    `max_draws` budget.
    """
    if n < 1:
        raise ValueError(f"need n >= 1 samples, got {n}")
    dom = target.domain
    rng = np.random.default_rng(seed)
    spec = proposal_spec if proposal_spec is not None else target.proposal
    if target.base_sampler is None and spec is None:
        raise ValueError(f"target '{target.name}' has no base sampler and "
                         "no proposal_spec was given")

    chunks: list[Array] = []
    accepted = 0
    drawn = 0
    while accepted < n:
        if target.base_sampler is not None and proposal_spec is None:
            xs = target.base_sampler(rng, batch_size)
            keep = dom.g(xs) <= 0.0
        else:
            if spec.get("kind") != "uniform_box":
                raise ValueError(f"unsupported proposal kind {spec.get('kind')!r}")
            low = np.asarray(spec["low"], dtype=float)
            high = np.asarray(spec["high"], dtype=float)
            xs = rng.uniform(size=(batch_size, dom.dim)) * (high - low) + low
            u = rng.uniform(size=batch_size)
            keep = (dom.g(xs) <= 0.0) & (np.log(u) <=
                    target.log_density_unnorm(xs) - spec["log_bound"])
        chunks.append(xs[keep])
        accepted += int(keep.sum())
        drawn += batch_size
        if drawn >= max_draws and accepted < drawn * 1e-6:
            raise RuntimeError(
                f"rejection sampling for '{target.name}' accepted {accepted} "
                f"of {drawn} draws (rate < 1e-6); proposal does not cover "
                "the target")
    return np.concatenate(chunks, axis=0)[:n]


_BLOCK_FACES = (
    # (fixed coordinate index, fixed value, outward normal)
    (0, 2.0, np.array([1.0, 0.0])),
    (0, -2.0, np.array([-1.0, 0.0])),
    (1, 2.0, np.array([0.0, 1.0])),
    (1, -2.0, np.array([0.0, -1.0])),
)


def boundary_quadrature(domain: ConstraintDomain,
                        density_unnorm: Callable[[Array], Array],
                        velocity_fn: Callable[[Array], Array],
                        resolution: int = 2000) -> float:
    """Trapezoidal reference value of the surface integral of p v . n.

    Supported for the block domain: the density is normalized over the
    square by a dense 2-D grid, then p (v . n) is integrated face by
    face with `resolution` nodes per face.
    """
    if domain.name != "block":
        raise ValueError("boundary_quadrature supports the block domain only")
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    # normalization over the square; capped so the 2-D grid stays small
    # (its relative error is ~(4/4000)^2, far below the face tolerance)
    z_res = min(resolution, 4001)
    side = np.linspace(-2.0, 2.0, z_res)
    gx, gy = np.meshgrid(side, side, indexing="ij")
    grid = np.stack([gx.ravel(), gy.ravel()], axis=-1)
    dens = np.asarray(density_unnorm(grid), dtype=float).reshape(z_res, z_res)
    z = np.trapezoid(np.trapezoid(dens, side, axis=1), side, axis=0)

    # the integrand is defined a.e. on each open face; inset the endpoints
    # so corner nodes do not sample the neighboring face's normal direction
    face_param = np.linspace(-2.0 + 1e-9, 2.0 - 1e-9, resolution)
    total = 0.0
    for fixed_idx, fixed_val, normal in _BLOCK_FACES:
        pts = np.empty((resolution, 2))
        pts[:, fixed_idx] = fixed_val
        pts[:, 1 - fixed_idx] = face_param
        integrand = (np.asarray(density_unnorm(pts), dtype=float)
                     * (np.asarray(velocity_fn(pts), dtype=float) @ normal))
        total += np.trapezoid(integrand, face_param)
    return float(total / z)


def boundary_mc_estimate(domain: ConstraintDomain,
                         sampler: Callable[[np.random.Generator, int], Array],
                         velocity_fn: Callable[[Array], Array],
                         n: int, h: float, seed: int) -> float:
    """Band-wise Monte Carlo estimate of the boundary surface integral.

    Draws n samples, counts the in-domain ones (m), and returns
    (1/(m h)) sum over band samples of v . grad_g/||grad_g||.
    """
    if n < 1 or h <= 0:
        raise ValueError("need n >= 1 and h > 0")
    rng = np.random.default_rng(seed)
    xs = np.asarray(sampler(rng, n), dtype=float)
    n_in = int(np.sum(domain.g(xs) <= 0.0))
    if n_in == 0:
        raise ValueError("no in-domain samples; degenerate sampler input")
    band = in_band(domain, xs, h)
    if not band.any():
        return 0.0
    xb = xs[band]
    v = np.asarray(velocity_fn(xb), dtype=float)
    return float(np.sum(v * domain.unit_grad(xb))) / (n_in * h)


def block_table_cells() -> tuple[list[dict], list[dict]]:
    """Densities and velocities of the 3x3 boundary-verification grid.

    Densities (on the block): uniform, N(0, I) truncated, N((0,-2), I)
    truncated.  Velocities: the outward unit normal, (x2, x1), and
    (x2^2, x1^2).  Density entries carry the unnormalized density and a
    truncated sampler; reference values come from boundary_quadrature.
    """
    from .domains import make_block
    from .targets import TargetDistribution, truncated_std_gaussian

    block = make_block()

    def uniform_sampler(rng: np.random.Generator, k: int) -> Array:
        return rng.uniform(-2.0, 2.0, size=(k, 2))

    shift = np.array([0.0, -2.0])
    shifted = TargetDistribution(
        "shifted_gauss", 2,
        lambda x: -0.5 * np.sum(np.square(x - shift), axis=-1),
        lambda x: -(np.asarray(x, dtype=float) - shift),
        block,
        lambda rng, k: shift + rng.standard_normal((k, 2)))
    centered = truncated_std_gaussian(block)

    def truncated(target: TargetDistribution):
        def sample(rng: np.random.Generator, k: int) -> Array:
            return rejection_sample(target, k, int(rng.integers(2 ** 31)))
        return sample

    densities = [
        {"name": "p1", "density": lambda x: np.ones(np.asarray(x).shape[:-1]),
         "sampler": uniform_sampler},
        {"name": "p2", "density": lambda x: np.exp(centered.log_density_unnorm(x)),
         "sampler": truncated(centered)},
        {"name": "p3", "density": lambda x: np.exp(shifted.log_density_unnorm(x)),
         "sampler": truncated(shifted)},
    ]
    velocities = [
        {"name": "v1", "fn": block.unit_grad},
        {"name": "v2", "fn": lambda x: np.stack([x[..., 1], x[..., 0]], axis=-1)},
        {"name": "v3", "fn": lambda x: np.stack(
            [np.square(x[..., 1]), np.square(x[..., 0])], axis=-1)},
    ]
    return densities, velocities


#: Reference surface-integral values for the 3x3 grid, reproduced by
#: boundary_quadrature and asserted to 1e-3 by the verification suite.
BLOCK_TABLE_REFERENCE = {
    ("p1", "v1"): 1.0, ("p1", "v2"): 0.0, ("p1", "v3"): 0.0,
    ("p2", "v1"): 0.226259, ("p2", "v2"): 0.0, ("p2", "v3"): 0.0,
    ("p3", "v1"): 0.911333, ("p3", "v2"): 0.0, ("p3", "v3"): -0.617187,
}


@dataclass(frozen=True)
class SlopeResult:
    """Least-squares slope of log MSE against log N, plus the raw sweep."""

    slope: float
    #: rows of (n, h, trial, estimate, true_value, squared_error)
    rows: list[tuple[int, float, int, float, float, float]]
    mse: dict[int, float]


def mse_slope_experiment(domain: ConstraintDomain,
                         sampler: Callable[[np.random.Generator, int], Array],
                         velocity_fn: Callable[[Array], Array],
                         n_list: Sequence[int], h0: float, trials: int,
                         seed: int, true_value: float,
                         fixed_h: Optional[float] = None) -> SlopeResult:
    """Estimate the MSE decay rate of the band-wise estimator.

    For each sample budget n the bandwidth follows h = h0 (d n)^(-1/3)
    unless `fixed_h` freezes it; the squared error against `true_value`
    is averaged over `trials` independent draws.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    trial_seeds = np.random.SeedSequence(seed).generate_state(
        len(n_list) * trials)
    rows = []
    mse: dict[int, float] = {}
    for i, n in enumerate(n_list):
        h = fixed_h if fixed_h is not None else adaptive_bandwidth(
            h0, domain.dim, int(n))
        errs = []
        for t in range(trials):
            est = boundary_mc_estimate(
                domain, sampler, velocity_fn, int(n), h,
                int(trial_seeds[i * trials + t]))
            sq = (est - true_value) ** 2
            errs.append(sq)
            rows.append((int(n), h, t, est, true_value, sq))
        mse[int(n)] = float(np.mean(errs))
    ns = np.array(sorted(mse))
    slope = float(np.polyfit(np.log(ns), np.log([mse[k] for k in ns]), 1)[0])
    return SlopeResult(slope=slope, rows=rows, mse=mse)
