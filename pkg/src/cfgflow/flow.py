"""Piecewise velocity field and the boundary-corrected training loss.

Particles strictly inside the domain move along the learned drift h;
particles with g >= 0 (boundary included) are pushed inward along the
normalized constraint gradient scaled by lambda.  The drift is trained by
descending an empirical discrepancy over inside particles,

    (1/m) sum [ -score(x).h(x) - div h(x) + ||h(x)||^2 / 2 ]
        + (1/(m h_band)) sum_band h(x).grad_g(x)/||grad_g(x)||,

whose last sum estimates the surface integral that integration by parts
leaves behind on a bounded domain.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import net
from .domains import ConstraintDomain, in_band
from .net import Grads, MlpParams
from .targets import TargetDistribution

Array = np.ndarray


@dataclass(frozen=True)
class ParticlePartition:
    """Index lists by constraint sign: inside g < 0, outside g >= 0, and
    the in-band subset (band membership requires g <= 0)."""

    inside: Array
    band: Array
    outside: Array
    m: int
    n: int


def _positions(ensemble) -> Array:
    return np.asarray(getattr(ensemble, "positions", ensemble), dtype=float)


def partition(domain: ConstraintDomain, ensemble, h: float) -> ParticlePartition:
    """Classify particles by sign of g and band membership."""
    x = _positions(ensemble)
    gx = domain.g(x)
    inside = np.flatnonzero(gx < 0.0)
    outside = np.flatnonzero(gx >= 0.0)
    band = np.flatnonzero(in_band(domain, x, h))
    return ParticlePartition(inside=inside, band=band, outside=outside,
                             m=inside.size, n=band.size)


def velocity(fp: MlpParams, zp: Optional[MlpParams], domain: ConstraintDomain,
             lam: float, x: Array) -> Array:
    """v(x) = h(x) on {g < 0}, -lambda grad_g/||grad_g|| on {g >= 0}."""
    xs = np.asarray(x, dtype=float)
    single = xs.ndim == 1
    xb = xs[None, :] if single else xs
    gx = domain.g(xb)
    ins = gx < 0.0
    v = np.empty_like(xb)
    if ins.any():
        v[ins] = net.h_net_eval(fp, zp, domain, xb[ins])
    outs = ~ins
    if outs.any():
        v[outs] = -lam * domain.unit_grad(xb[outs])
    return v[0] if single else v


@dataclass(frozen=True)
class _LossBatch:
    """Per-outer-iteration constants of the loss: particle positions and
    the target/constraint quantities evaluated there.  The inner training
    loop reuses one batch because particles do not move during it."""

    x_in: Array
    score_in: Array
    grad_g_in: Array
    lap_g_in: Array
    x_band: Array
    unit_band: Array
    grad_g_band: Array
    m: int
    h: float


def make_loss_batch(domain: ConstraintDomain, target: TargetDistribution,
                    part: ParticlePartition, ensemble, h: float) -> _LossBatch:
    if part.m < 1:
        raise ValueError("no inside particles: skip drift training this step")
    x = _positions(ensemble)
    xi = x[part.inside]
    xb = x[part.band]
    gb = domain.grad_g(xb)
    nrm = np.linalg.norm(gb, axis=-1, keepdims=True)
    unit = gb / np.maximum(nrm, domain.grad_floor)
    return _LossBatch(x_in=xi, score_in=target.score(xi),
                      grad_g_in=domain.grad_g(xi),
                      lap_g_in=domain.laplacian_g(xi),
                      x_band=xb, unit_band=unit, grad_g_band=gb,
                      m=part.m, h=h)


def _batch_loss(fp: MlpParams, zp: Optional[MlpParams], batch: _LossBatch,
                include_boundary: bool, want_grads: bool
                ) -> tuple[float, Optional[Grads], Optional[Grads]]:
    m = batch.m
    gg = batch.grad_g_in
    f_out, f_cache = net._forward(fp, batch.x_in)

    if zp is not None:
        z_out, z_cache = net._forward(zp, batch.x_in)
        z = z_out[:, 0]
        grad_z = net._input_grad_scalar(zp, z_cache)
        c = np.sum(grad_z * gg, axis=-1)
        h_vec = f_out - np.square(z)[:, None] * gg
    else:
        z = c = None
        h_vec = f_out

    # Divergence pieces; the trace call also yields its parameter gradient.
    d = fp.in_dim
    eye = np.broadcast_to(np.eye(d), (m, d, d))
    tr_weights = np.full(m, -1.0 / m) if want_grads else None
    tr_j, f_grads = net._jac_contraction(fp, f_cache, eye, tr_weights)
    div = tr_j.copy()
    if zp is not None:
        div -= 2.0 * z * c + np.square(z) * batch.lap_g_in

    per = (-np.sum(batch.score_in * h_vec, axis=-1) - div
           + 0.5 * np.sum(np.square(h_vec), axis=-1))
    loss = float(per.mean())

    boundary_active = include_boundary and batch.x_band.shape[0] > 0
    if boundary_active:
        fb_out, fb_cache = net._forward(fp, batch.x_band)
        if zp is not None:
            zb_out, zb_cache = net._forward(zp, batch.x_band)
            zb = zb_out[:, 0]
            hb = fb_out - np.square(zb)[:, None] * batch.grad_g_band
        else:
            hb = fb_out
        kappa = 1.0 / (m * batch.h)
        loss += kappa * float(np.sum(hb * batch.unit_band))

    if not want_grads:
        return loss, None, None

    # Interior cotangent on h: d/dh [-s.h + ||h||^2/2] = h - s, averaged.
    u = (h_vec - batch.score_in) / m
    net.grads_add(f_grads, net._vjp(fp, f_cache, u))

    z_grads: Optional[Grads] = None
    if zp is not None:
        # z appears through h = f - z^2 grad_g and through
        # -div = ... + 2 z c + z^2 lap_g; grad_z only through c.
        z_cot = -2.0 * z * np.sum(u * gg, axis=-1) \
            + (2.0 * c + 2.0 * z * batch.lap_g_in) / m
        z_grads = net._vjp(zp, z_cache, z_cot[:, None])
        _, c_grads = net._jac_contraction(zp, z_cache, gg[:, :, None],
                                          2.0 * z / m)
        net.grads_add(z_grads, c_grads)

    if boundary_active:
        ub = batch.unit_band / (m * batch.h)
        net.grads_add(f_grads, net._vjp(fp, fb_cache, ub))
        if zp is not None:
            zb_cot = -2.0 * zb * np.sum(ub * batch.grad_g_band, axis=-1)
            net.grads_add(z_grads, net._vjp(zp, zb_cache, zb_cot[:, None]))

    return loss, f_grads, z_grads


def boundary_term(fp: MlpParams, zp: Optional[MlpParams],
                  domain: ConstraintDomain, part: ParticlePartition,
                  ensemble, h: float) -> float:
    """(1/(m h)) sum over band particles of h(x).grad_g(x)/||grad_g(x)||."""
    if part.m < 1:
        raise ValueError("no inside particles: boundary term undefined")
    if part.n == 0:
        return 0.0
    x = _positions(ensemble)
    xb = x[part.band]
    hb = net.h_net_eval(fp, zp, domain, xb)
    unit = domain.unit_grad(xb)
    return float(np.sum(hb * unit)) / (part.m * h)


def rsd_loss(fp: MlpParams, zp: Optional[MlpParams], domain: ConstraintDomain,
             target: TargetDistribution, part: ParticlePartition,
             ensemble, h: float) -> float:
    """Empirical discrepancy over inside particles plus the band estimate
    of the boundary surface term."""
    batch = make_loss_batch(domain, target, part, ensemble, h)
    loss, _, _ = _batch_loss(fp, zp, batch, include_boundary=True,
                             want_grads=False)
    return loss


def rsd_loss_grad(fp: MlpParams, zp: Optional[MlpParams],
                  domain: ConstraintDomain, target: TargetDistribution,
                  part: ParticlePartition, ensemble, h: float
                  ) -> tuple[Grads, Optional[Grads]]:
    """Exact a.e. parameter gradient of rsd_loss for both networks."""
    batch = make_loss_batch(domain, target, part, ensemble, h)
    _, f_grads, z_grads = _batch_loss(fp, zp, batch, include_boundary=True,
                                      want_grads=True)
    return f_grads, z_grads
