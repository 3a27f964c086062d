"""Velocity networks: LeakyReLU MLPs with hand-rolled derivatives.

The drift inside the domain is h(x) = f(x) - z(x)^2 * grad_g(x), built
from two MLPs f: R^d -> R^d and z: R^d -> R.  Training needs, besides
ordinary parameter backprop, the exact input-divergence of h and its
parameter gradient.  LeakyReLU has zero second derivative almost
everywhere, so at any given input the activation-pattern diagonals are
constants; treating them as such gives the exact a.e. gradients of the
Jacobian-trace terms by plain matrix calculus.

All heavy contractions are reshaped into single BLAS matmuls; every
function accepts a batch of inputs (n, d) and most also accept a single
point (d,).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .domains import ConstraintDomain

Array = np.ndarray

# Parameter gradients travel as two lists (per-layer weight grads,
# per-layer bias grads) aligned with MlpParams.weights / .biases.
Grads = tuple[list[Array], list[Array]]


@dataclass
class MlpParams:
    """Weights of an MLP with LeakyReLU hidden activations."""

    weights: list[Array]          # layer k maps (fan_in_k,) -> (fan_out_k,)
    biases: list[Array]
    negative_slope: float = 0.1

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]


def init_mlp(layer_sizes: list[int], seed: int) -> MlpParams:
    """Uniform fan-in initialization, zero biases, deterministic per seed.

    The output layer is scaled by an extra 0.1 so freshly initialized
    velocities are small and do not eject particles.
    """
    if len(layer_sizes) < 2:
        raise ValueError("layer_sizes needs at least input and output sizes")
    if any(s < 1 for s in layer_sizes):
        raise ValueError(f"layer sizes must be positive, got {layer_sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    weights[-1] *= 0.1
    return MlpParams(weights, biases)


@dataclass
class _Cache:
    """Forward-pass intermediates: layer inputs and activation slopes."""

    acts: list[Array]     # acts[k] is the input to weight layer k, (n, fan_in_k)
    slopes: list[Array]   # slopes[k] = phi'(Z_k) for hidden layer k, (n, fan_out_k)


def _forward(params: MlpParams, x: Array) -> tuple[Array, _Cache]:
    a = x
    acts = [a]
    slopes = []
    ns = params.negative_slope
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        if k < last:
            s = np.where(z > 0, 1.0, ns)
            a = z * s
            slopes.append(s)
            acts.append(a)
        else:
            a = z
    return a, _Cache(acts, slopes)


def _as_batch(x: Array) -> tuple[Array, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def forward_f(params: MlpParams, x: Array) -> Array:
    """MLP forward pass; LeakyReLU(0.1) on hidden layers, linear output."""
    xb, single = _as_batch(x)
    if xb.shape[-1] != params.in_dim:
        raise ValueError(f"input has dimension {xb.shape[-1]}, "
                         f"net expects {params.in_dim}")
    y, _ = _forward(params, xb)
    return y[0] if single else y


def _vjp(params: MlpParams, cache: _Cache, cot: Array) -> Grads:
    """Parameter gradients of sum_i <cot_i, output_i>."""
    nlayers = len(params.weights)
    gw: list[Array] = [None] * nlayers  # type: ignore[list-item]
    gb: list[Array] = [None] * nlayers  # type: ignore[list-item]
    delta = cot
    for k in range(nlayers - 1, -1, -1):
        gw[k] = delta.T @ cache.acts[k]
        gb[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ params.weights[k]) * cache.slopes[k - 1]
    return gw, gb


def _input_grad_scalar(params: MlpParams, cache: _Cache) -> Array:
    """Gradient of a scalar-output net w.r.t. its input, batched (n, d)."""
    n = cache.acts[0].shape[0]
    delta = np.ones((n, params.out_dim))
    for k in range(len(params.weights) - 1, 0, -1):
        delta = (delta @ params.weights[k]) * cache.slopes[k - 1]
    return delta @ params.weights[0]


def _left_mm(w: Array, x3: Array) -> Array:
    """w @ x3 over a stack: (a, b) x (n, b, o) -> (n, a, o) via one GEMM."""
    n, b, o = x3.shape
    flat = x3.transpose(1, 0, 2).reshape(b, n * o)
    return (w @ flat).reshape(w.shape[0], n, o).transpose(1, 0, 2)


def _jacobian_chain(params: MlpParams, cache: _Cache, right: Array
                    ) -> tuple[Array, list[Array]]:
    """Forward-accumulate J @ B per sample.

    right: (n, d, o) stack of right factors B_i.  Returns the final
    products (n, out, o) and the per-layer right factors Q_k appearing in
    tr(P_k W_k Q_k), with Q_0 = B and Q_k = D_{k-1} W_{k-1} ... W_0 B.
    """
    qs = [right]
    r = _left_mm(params.weights[0], right)
    for k in range(1, len(params.weights)):
        qk = cache.slopes[k - 1][:, :, None] * r
        qs.append(qk)
        r = _left_mm(params.weights[k], qk)
    return r, qs


def _weighted_pq(p: Array, q: Array, w: Array) -> Array:
    """sum_i w_i P_i^T Q_i^T for stacks P (n, o, a), Q (n, b, o) -> (a, b)."""
    n, o, a = p.shape
    pr = (p * w[:, None, None]).reshape(n * o, a)
    qr = q.transpose(0, 2, 1).reshape(n * o, q.shape[1])
    return pr.T @ qr


def _jac_contraction(params: MlpParams, cache: _Cache, right: Array,
                     weights_vec: Optional[Array]) -> tuple[Array, Optional[Grads]]:
    """Per-sample t_i = tr(J(x_i) B_i) and optionally grad of sum w_i t_i.

    The Jacobian of the net at x factors as W_L D_{L-1} ... D_0 W_0 with
    the activation-slope diagonals D_k frozen at x.  Bias gradients of
    t are identically zero a.e.
    """
    r, qs = _jacobian_chain(params, cache, right)
    t = np.trace(r, axis1=1, axis2=2)
    if weights_vec is None:
        return t, None
    n = right.shape[0]
    out = params.out_dim
    nlayers = len(params.weights)
    gw: list[Array] = [None] * nlayers  # type: ignore[list-item]
    p = np.broadcast_to(np.eye(out), (n, out, out))
    for k in range(nlayers - 1, -1, -1):
        gw[k] = _weighted_pq(p, qs[k], weights_vec)
        if k > 0:
            pw = (p.reshape(n * out, -1) @ params.weights[k]).reshape(n, out, -1)
            p = pw * cache.slopes[k - 1][:, None, :]
    gb = [np.zeros_like(b) for b in params.biases]
    return t, (gw, gb)


def _jacobian_trace(params: MlpParams, cache: _Cache) -> Array:
    """tr J of a square-output net, per sample."""
    d = params.in_dim
    n = cache.acts[0].shape[0]
    eye = np.broadcast_to(np.eye(d), (n, d, d))
    t, _ = _jac_contraction(params, cache, eye, None)
    return t


def h_net_eval(fp: MlpParams, zp: Optional[MlpParams],
               domain: ConstraintDomain, x: Array) -> Array:
    """Drift h(x) = f(x) - z(x)^2 grad_g(x); zp=None means z is absent."""
    xb, single = _as_batch(x)
    y, _ = _forward(fp, xb)
    if zp is not None:
        z, _ = _forward(zp, xb)
        y = y - np.square(z) * domain.grad_g(xb)
    return y[0] if single else y


def divergence_h(fp: MlpParams, zp: Optional[MlpParams],
                 domain: ConstraintDomain, x: Array) -> Array:
    """Exact input-divergence of h at x.

    div h = tr J_f - (2 z grad_z . grad_g + z^2 lap_g), with tr J_f from
    the layerwise Jacobian product and grad_z by backprop through z.
    """
    xb, single = _as_batch(x)
    _, fc = _forward(fp, xb)
    div = _jacobian_trace(fp, fc)
    if zp is not None:
        zout, zc = _forward(zp, xb)
        z = zout[:, 0]
        grad_z = _input_grad_scalar(zp, zc)
        gg = domain.grad_g(xb)
        div = div - 2.0 * z * np.sum(grad_z * gg, axis=-1) \
            - np.square(z) * domain.laplacian_g(xb)
    return float(div[0]) if single else div


@dataclass
class AdamState:
    """First/second moment accumulators, aligned with weights then biases."""

    m: list[Array]
    v: list[Array]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: MlpParams, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    tensors = params.weights + params.biases
    return AdamState(m=[np.zeros_like(t) for t in tensors],
                     v=[np.zeros_like(t) for t in tensors],
                     beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: MlpParams, grads: Grads, state: AdamState,
              lr: float) -> tuple[MlpParams, AdamState]:
    """One Adam update with bias correction; returns new params and state."""
    gw, gb = grads
    tensors = params.weights + params.biases
    glist = list(gw) + list(gb)
    if len(glist) != len(tensors) or any(
            g.shape != t.shape for g, t in zip(glist, tensors)):
        raise ValueError("gradient shapes do not match parameters")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_m, new_v, new_t = [], [], []
    for p, g, m, v in zip(tensors, glist, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * np.square(g)
        new_m.append(m)
        new_v.append(v)
        new_t.append(p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
    nl = len(params.weights)
    new_params = MlpParams(new_t[:nl], new_t[nl:], params.negative_slope)
    new_state = AdamState(new_m, new_v, t, b1, b2, state.eps)
    return new_params, new_state


def grads_zeros_like(params: MlpParams) -> Grads:
    return ([np.zeros_like(w) for w in params.weights],
            [np.zeros_like(b) for b in params.biases])


def grads_add(acc: Grads, other: Grads) -> Grads:
    """In-place accumulate `other` into `acc`; returns acc."""
    for a, o in zip(acc[0], other[0]):
        a += o
    for a, o in zip(acc[1], other[1]):
        a += o
    return acc
