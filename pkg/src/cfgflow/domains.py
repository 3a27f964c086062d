"""Inequality-constraint domains Omega = {x : g(x) <= 0}.

Each domain bundles a single differentiable constraint function g together
with its gradient and Laplacian.  All three callables accept either one
point of shape (d,) or a batch of shape (n, d) and return correspondingly
shaped results (scalars / (d,) arrays, or (n,) / (n, d) batches).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Array = np.ndarray

#: Floor applied to ||grad g|| before normalization, so that the push
#: direction stays finite at measure-zero stationary points.
GRAD_FLOOR = 1e-12


@dataclass(frozen=True)
class ConstraintDomain:
    """A constraint g with first derivatives, defining Omega = {g <= 0}."""

    name: str
    dim: int
    g: Callable[[Array], Array]
    grad_g: Callable[[Array], Array]
    laplacian_g: Callable[[Array], Array]
    grad_floor: float = GRAD_FLOOR

    def unit_grad(self, x: Array) -> Array:
        """grad g / max(||grad g||, grad_floor), the outward direction a.e."""
        gr = self.grad_g(x)
        nrm = np.linalg.norm(gr, axis=-1, keepdims=True)
        return gr / np.maximum(nrm, self.grad_floor)


def fd_laplacian_from_grad(grad_fn: Callable[[Array], Array],
                           step: float = 1e-5) -> Callable[[Array], Array]:
    """Laplacian as central differences of an analytic gradient.

    Documented fallback for domains whose second derivatives are tedious;
    the gradient itself stays analytic so the differencing noise is tiny.
    """

    def lap(x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for i in range(x.shape[-1]):
            xp = x.copy()
            xm = x.copy()
            xp[..., i] += step
            xm[..., i] -= step
            out = out + (grad_fn(xp)[..., i] - grad_fn(xm)[..., i]) / (2.0 * step)
        return out

    return lap


def make_ring() -> ConstraintDomain:
    """Annulus {1 <= ||x||^2 <= 4} encoded as one smooth constraint.

    g(x) = (||x||^2 - 2.5)^2 - 2.25 has exactly that zero-sublevel set.
    Note grad g vanishes at the origin (exterior) and on the mid-shell
    ||x||^2 = 2.5 (interior); both are measure zero.
    """

    def g(x: Array) -> Array:
        s = np.sum(np.square(x), axis=-1)
        return np.square(s - 2.5) - 2.25

    def grad(x: Array) -> Array:
        s = np.sum(np.square(x), axis=-1, keepdims=True)
        return 4.0 * (s - 2.5) * x

    def lap(x: Array) -> Array:
        # div(4 (s - 2.5) x) = 8 s + 4 d (s - 2.5), d = 2
        s = np.sum(np.square(x), axis=-1)
        return 8.0 * s + 8.0 * (s - 2.5)

    return ConstraintDomain("ring", 2, g, grad, lap)


def make_cardioid() -> ConstraintDomain:
    """Heart-shaped set {x1^2 + (1.2 x2 - |x1|^(2/3))^2 <= 4}.

    |x1|^(2/3) is the even extension (x1^2)^(1/3); its derivative is
    evaluated with |x1| clamped below at 1e-8.
    """
    clamp = 1e-8

    def g(x: Array) -> Array:
        x1, x2 = x[..., 0], x[..., 1]
        u = np.cbrt(np.square(x1))
        return np.square(x1) + np.square(1.2 * x2 - u) - 4.0

    def grad(x: Array) -> Array:
        x1, x2 = x[..., 0], x[..., 1]
        a = np.maximum(np.abs(x1), clamp)
        u = np.cbrt(np.square(x1))
        du = (2.0 / 3.0) * np.sign(x1) / np.cbrt(a)
        w = 1.2 * x2 - u
        return np.stack([2.0 * x1 - 2.0 * w * du, 2.4 * w], axis=-1)

    def lap(x: Array) -> Array:
        x1, x2 = x[..., 0], x[..., 1]
        a = np.maximum(np.abs(x1), clamp)
        u = np.cbrt(np.square(x1))
        du = (2.0 / 3.0) * np.sign(x1) / np.cbrt(a)
        ddu = -(2.0 / 9.0) * a ** (-4.0 / 3.0)
        w = 1.2 * x2 - u
        return 2.0 + 2.0 * np.square(du) - 2.0 * w * ddu + 2.88

    return ConstraintDomain("cardioid", 2, g, grad, lap)


def make_double_moon() -> ConstraintDomain:
    """Two-lobe set {-log q(x) <= 2} with q the double-moon density.

    q(x) = (exp(-2 (x1-3)^2) + exp(-2 (x1+3)^2)) / exp(2 (||x|| - 3)^2).
    ||x|| is clamped below at 1e-8 so the smooth extension is total.
    The Laplacian is central differences of the analytic gradient.
    """
    clamp = 1e-8

    def g(x: Array) -> Array:
        x1 = x[..., 0]
        r = np.maximum(np.sqrt(np.sum(np.square(x), axis=-1)), clamp)
        lse = np.logaddexp(-2.0 * np.square(x1 - 3.0), -2.0 * np.square(x1 + 3.0))
        return 2.0 * np.square(r - 3.0) - lse - 2.0

    def grad(x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        x1 = x[..., 0]
        r = np.maximum(np.sqrt(np.sum(np.square(x), axis=-1)), clamp)
        a1 = -2.0 * np.square(x1 - 3.0)
        a2 = -2.0 * np.square(x1 + 3.0)
        m = np.maximum(a1, a2)
        e1 = np.exp(a1 - m)
        e2 = np.exp(a2 - m)
        w1 = e1 / (e1 + e2)
        w2 = 1.0 - w1
        out = (4.0 * (r - 3.0) / r)[..., None] * x
        out[..., 0] += 4.0 * (w1 * (x1 - 3.0) + w2 * (x1 + 3.0))
        return out

    return ConstraintDomain("double_moon", 2, g, grad,
                            fd_laplacian_from_grad(grad))


def make_block() -> ConstraintDomain:
    """Square {|x1| <= 2 and |x2| <= 2} via the sup norm.

    g(x) = max_i |x_i| - 2.  The a.e. gradient is sign(x_i) e_i for the
    maximizing coordinate (ties broken by lowest index, sign(0) taken as
    +1 so the band probe is defined everywhere); the Laplacian is 0.
    """

    def g(x: Array) -> Array:
        return np.max(np.abs(x), axis=-1) - 2.0

    def grad(x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        idx = np.argmax(np.abs(x), axis=-1)
        xi = np.take_along_axis(x, idx[..., None], axis=-1)
        out = np.zeros_like(x)
        np.put_along_axis(out, idx[..., None], np.where(xi >= 0, 1.0, -1.0), axis=-1)
        return out

    def lap(x: Array) -> Array:
        return np.zeros(np.asarray(x).shape[:-1])

    return ConstraintDomain("block", 2, g, grad, lap)


def make_lq_ball(q: float, r: float, dim: int) -> ConstraintDomain:
    """lq-norm ball {||x||_q <= r} in the given dimension.

    q = 1 uses the a.e. subgradient sign(x) (zero components contribute 0)
    and Laplacian 0.  For q > 1 the analytic derivatives of
    (sum |x_i|^q)^(1/q) are used with |x_i| clamped below at 1e-10.
    """
    if q < 1:
        raise ValueError(f"lq_ball requires q >= 1, got q={q}")
    if r <= 0:
        raise ValueError(f"lq_ball requires r > 0, got r={r}")
    if dim < 1:
        raise ValueError(f"lq_ball requires dim >= 1, got dim={dim}")
    clamp = 1e-10

    if q == 1:

        def g(x: Array) -> Array:
            return np.sum(np.abs(x), axis=-1) - r

        def grad(x: Array) -> Array:
            return np.sign(np.asarray(x, dtype=float))

        def lap(x: Array) -> Array:
            return np.zeros(np.asarray(x).shape[:-1])

    else:

        def g(x: Array) -> Array:
            return np.sum(np.abs(x) ** q, axis=-1) ** (1.0 / q) - r

        def grad(x: Array) -> Array:
            x = np.asarray(x, dtype=float)
            a = np.abs(x)
            nq = np.maximum(np.sum(a ** q, axis=-1, keepdims=True) ** (1.0 / q), clamp)
            return np.sign(x) * (a / nq) ** (q - 1.0)

        def lap(x: Array) -> Array:
            a = np.maximum(np.abs(x), clamp)
            s = np.sum(a ** q, axis=-1)
            t1 = s ** (1.0 / q - 1.0) * np.sum(a ** (q - 2.0), axis=-1)
            t2 = s ** (1.0 / q - 2.0) * np.sum(a ** (2.0 * q - 2.0), axis=-1)
            return (q - 1.0) * (t1 - t2)

    return ConstraintDomain(f"lq_ball(q={q},r={r},d={dim})", dim, g, grad, lap)


def in_band(domain: ConstraintDomain, x: Array, h: float) -> Array:
    """Membership in the inner collar of width h along the boundary.

    Uses the probe conditions g(x) <= 0 and g(x + h grad g/||grad g||) >= 0,
    which imply dist(x, boundary) <= h.  Points where ||grad g|| falls below
    grad_floor have no reliable outward direction and are excluded.
    """
    if h <= 0:
        raise ValueError(f"bandwidth must be positive, got h={h}")
    x = np.asarray(x, dtype=float)
    gx = domain.g(x)
    gr = domain.grad_g(x)
    nrm = np.linalg.norm(gr, axis=-1)
    unit = gr / np.maximum(nrm, domain.grad_floor)[..., None]
    probe = domain.g(x + h * unit)
    return (gx <= 0.0) & (probe >= 0.0) & (nrm >= domain.grad_floor)


def adaptive_bandwidth(h0: float, d: int, n: int) -> float:
    """Bandwidth schedule h = h0 (d n)^(-1/3)."""
    if h0 <= 0 or d <= 0 or n <= 0:
        raise ValueError("adaptive_bandwidth requires positive h0, d, n")
    return h0 * float(d * n) ** (-1.0 / 3.0)


_BUILDERS: dict[str, Callable[..., ConstraintDomain]] = {
    "ring": make_ring,
    "cardioid": make_cardioid,
    "double_moon": make_double_moon,
    "block": make_block,
}


def from_config(spec: dict) -> ConstraintDomain:
    """Build a domain from its config entry, e.g. {"name": "ring"} or
    {"name": "lq_ball", "q": 1, "r": 2.0, "dim": 20}."""
    spec = dict(spec)
    try:
        name = spec.pop("name")
    except KeyError:
        raise ValueError("domain config requires a 'name' key") from None
    if name == "lq_ball":
        missing = [k for k in ("q", "r", "dim") if k not in spec]
        if missing:
            raise ValueError(f"lq_ball domain config requires keys {missing}")
        q, r, dim = spec.pop("q"), spec.pop("r"), spec.pop("dim")
        if spec:
            raise ValueError(f"unknown domain config keys: {sorted(spec)}")
        return make_lq_ball(q, r, dim)
    if name not in _BUILDERS:
        raise ValueError(f"unknown domain '{name}' (known: "
                         f"{sorted(_BUILDERS) + ['lq_ball']})")
    if spec:
        raise ValueError(f"domain '{name}' takes no parameters, got {sorted(spec)}")
    return _BUILDERS[name]()
