"""Run loop: alternately train the drift networks and move the particles.

Each outer iteration partitions the ensemble, runs a fixed number of Adam
steps on the training loss when at least one particle is inside (network
parameters and optimizer state warm-start across iterations), assembles
the piecewise velocity at the updated parameters, and applies one
synchronous Euler step to every particle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import flow, net, targets
from .domains import ConstraintDomain, adaptive_bandwidth

Array = np.ndarray


class ConfigError(ValueError):
    """Invalid run configuration; `field` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"config field '{field_name}': {message}")
        self.field = field_name


class FlowDivergedError(RuntimeError):
    """Positions or loss became non-finite at some outer iteration."""

    def __init__(self, iteration: int, what: str):
        super().__init__(f"non-finite {what} at iteration {iteration}")
        self.iteration = iteration


_REQUIRED = ("domain", "target", "N", "init", "f_hidden", "lambda",
             "bandwidth", "L", "L_prime", "alpha", "eta", "seed")
_OPTIONAL = {"z_hidden": None, "snapshot_every": 100, "out_dir": None,
             "truth_path": None, "boundary_term": True, "use_z_net": True,
             "adam_reset": False}


@dataclass
class RunConfig:
    """Full experiment specification; mirrors the JSON config schema."""

    domain: dict
    target: dict
    n_particles: int
    init: dict
    f_hidden: list[int]
    lam: float
    bandwidth: object            # fixed float or {"h0": ..., "adaptive": true}
    n_outer: int                 # L
    n_inner: int                 # L'
    alpha: float
    eta: float
    seed: int
    z_hidden: Optional[list[int]] = None
    snapshot_every: int = 100
    out_dir: Optional[str] = None
    truth_path: Optional[str] = None
    boundary_term: bool = True
    use_z_net: bool = True
    adam_reset: bool = False

    def __post_init__(self):
        checks = [("N", self.n_particles >= 1, "must be >= 1"),
                  ("L", self.n_outer >= 1, "must be >= 1"),
                  ("L_prime", self.n_inner >= 0, "must be >= 0"),
                  ("alpha", self.alpha > 0, "must be > 0"),
                  ("eta", self.eta > 0, "must be > 0"),
                  ("lambda", self.lam > 0, "must be > 0"),
                  ("snapshot_every", self.snapshot_every >= 1, "must be >= 1")]
        for name, ok, msg in checks:
            if not ok:
                raise ConfigError(name, msg)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        unknown = set(raw) - set(_REQUIRED) - set(_OPTIONAL)
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown key")
        missing = [k for k in _REQUIRED if k not in raw]
        if missing:
            raise ConfigError(missing[0], "missing required key")
        d = {**_OPTIONAL, **raw}
        return cls(domain=d["domain"], target=d["target"], n_particles=d["N"],
                   init=d["init"], f_hidden=list(d["f_hidden"]),
                   lam=d["lambda"], bandwidth=d["bandwidth"], n_outer=d["L"],
                   n_inner=d["L_prime"], alpha=d["alpha"], eta=d["eta"],
                   seed=d["seed"],
                   z_hidden=None if d["z_hidden"] is None else list(d["z_hidden"]),
                   snapshot_every=d["snapshot_every"], out_dir=d["out_dir"],
                   truth_path=d["truth_path"],
                   boundary_term=bool(d["boundary_term"]),
                   use_z_net=bool(d["use_z_net"]),
                   adam_reset=bool(d["adam_reset"]))

    def to_dict(self) -> dict:
        return {"domain": self.domain, "target": self.target,
                "N": self.n_particles, "init": self.init,
                "f_hidden": self.f_hidden, "z_hidden": self.z_hidden,
                "lambda": self.lam, "bandwidth": self.bandwidth,
                "L": self.n_outer, "L_prime": self.n_inner,
                "alpha": self.alpha, "eta": self.eta, "seed": self.seed,
                "snapshot_every": self.snapshot_every, "out_dir": self.out_dir,
                "truth_path": self.truth_path,
                "boundary_term": self.boundary_term,
                "use_z_net": self.use_z_net, "adam_reset": self.adam_reset}

    def resolve_bandwidth(self, dim: int) -> float:
        bw = self.bandwidth
        if isinstance(bw, dict):
            extra = set(bw) - {"h0", "adaptive"}
            if extra:
                raise ConfigError("bandwidth", f"unknown keys {sorted(extra)}")
            if not bw.get("adaptive", False):
                raise ConfigError("bandwidth", "dict form requires adaptive: true")
            if "h0" not in bw:
                raise ConfigError("bandwidth", "adaptive form requires h0")
            return adaptive_bandwidth(bw["h0"], dim, self.n_particles)
        h = float(bw)
        if h <= 0:
            raise ConfigError("bandwidth", "must be > 0")
        return h


@dataclass
class Ensemble:
    positions: Array
    iteration: int
    seed: int

    def __post_init__(self):
        if not np.isfinite(self.positions).all():
            raise ValueError("ensemble positions must be finite")


def _derived_seeds(seed: int) -> tuple[int, int, int]:
    state = np.random.SeedSequence(seed).generate_state(3)
    return int(state[0]), int(state[1]), int(state[2])


def init_ensemble(config: RunConfig, dim: int) -> Ensemble:
    """Draw the initial particle cloud, deterministic per config seed."""
    ens_seed, _, _ = _derived_seeds(config.seed)
    rng = np.random.default_rng(ens_seed)
    spec = dict(config.init)
    kind = spec.pop("kind", None)
    if kind == "gaussian":
        mean = np.broadcast_to(np.asarray(spec.pop("mean", 0.0), dtype=float), (dim,))
        std = spec.pop("std", 1.0)
        pos = mean + std * rng.standard_normal((config.n_particles, dim))
    elif kind == "uniform":
        low = np.broadcast_to(np.asarray(spec.pop("low"), dtype=float), (dim,))
        high = np.broadcast_to(np.asarray(spec.pop("high"), dtype=float), (dim,))
        pos = rng.uniform(size=(config.n_particles, dim)) * (high - low) + low
    else:
        raise ConfigError("init", f"unknown initializer kind {kind!r}")
    if spec:
        raise ConfigError("init", f"unknown keys {sorted(spec)}")
    return Ensemble(positions=pos, iteration=0, seed=config.seed)


def step_particles(ensemble: Ensemble, velocity_closure, alpha: float) -> Ensemble:
    """Synchronous Euler update x <- x + alpha v(x), velocity frozen."""
    if alpha <= 0:
        raise ValueError(f"step size must be positive, got {alpha}")
    v = velocity_closure(ensemble.positions)
    return Ensemble(positions=ensemble.positions + alpha * v,
                    iteration=ensemble.iteration + 1, seed=ensemble.seed)


@dataclass
class RunResult:
    config: RunConfig
    h: float
    ensemble: Ensemble
    snapshots: list[tuple[int, Array]]
    metrics: list[dict]
    domain: ConstraintDomain = field(repr=False, default=None)
    target: object = field(repr=False, default=None)


def cfg_run(config: RunConfig, truth: Optional[Array] = None) -> RunResult:
    """Execute the full outer/inner loop and collect snapshots and metrics.

    `truth` optionally supplies ground-truth samples for per-snapshot
    distance metrics (the CLI loads it from config.truth_path).
    """
    from . import metrics as metrics_mod

    domain, target = targets.build_pair(config.domain, config.target)
    dim = domain.dim
    h = config.resolve_bandwidth(dim)
    _, f_seed, z_seed = _derived_seeds(config.seed)
    z_hidden = config.z_hidden if config.z_hidden is not None else config.f_hidden
    fp = net.init_mlp([dim, *config.f_hidden, dim], f_seed)
    zp = net.init_mlp([dim, *z_hidden, 1], z_seed) if config.use_z_net else None
    f_state = net.init_adam(fp)
    z_state = net.init_adam(zp) if zp is not None else None

    ens = init_ensemble(config, dim)
    snapshots: list[tuple[int, Array]] = []
    rows: list[dict] = []

    def record(loss_val: Optional[float]):
        snapshots.append((ens.iteration, ens.positions.copy()))
        row = {"iter": ens.iteration, "rsd_loss": loss_val,
               "ratio_out": metrics_mod.ratio_out(domain, ens),
               "w2_sinkhorn": None, "energy": None}
        if truth is not None:
            row["w2_sinkhorn"] = metrics_mod.sinkhorn_w2(
                *metrics_mod.equalize_sizes(ens.positions, truth, config.seed))
            row["energy"] = metrics_mod.energy_distance(ens.positions, truth)
        rows.append(row)

    record(None)
    last_loss: Optional[float] = None
    for k in range(config.n_outer):
        part = flow.partition(domain, ens, h)
        loss_val = None
        if part.m >= 1 and config.n_inner > 0:
            batch = flow.make_loss_batch(domain, target, part, ens, h)
            if config.adam_reset:
                f_state = net.init_adam(fp)
                z_state = net.init_adam(zp) if zp is not None else None
            for _ in range(config.n_inner):
                loss_val, f_grads, z_grads = flow._batch_loss(
                    fp, zp, batch, include_boundary=config.boundary_term,
                    want_grads=True)
                fp, f_state = net.adam_step(fp, f_grads, f_state, config.eta)
                if zp is not None:
                    zp, z_state = net.adam_step(zp, z_grads, z_state, config.eta)
            if not np.isfinite(loss_val):
                raise FlowDivergedError(k, "training loss")
        v = flow.velocity(fp, zp, domain, config.lam, ens.positions)
        new_pos = ens.positions + config.alpha * v
        if not np.isfinite(new_pos).all():
            raise FlowDivergedError(k, "particle positions")
        ens = Ensemble(positions=new_pos, iteration=k + 1, seed=config.seed)
        last_loss = loss_val
        if ens.iteration % config.snapshot_every == 0 and ens.iteration < config.n_outer:
            record(loss_val)
    record(last_loss)

    return RunResult(config=config, h=h, ensemble=ens, snapshots=snapshots,
                     metrics=rows, domain=domain, target=target)
