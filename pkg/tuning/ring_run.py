import json, sys, time
import numpy as np
from cfgflow import engine, metrics, oracle, targets, domains

seed = int(sys.argv[1])
variant = sys.argv[2] if len(sys.argv) > 2 else "full"
raw = {
    "domain": {"name": "ring"}, "target": {"name": "trunc_gauss"},
    "N": 1000, "init": {"kind": "gaussian", "mean": 0.0, "std": 1.0},
    "f_hidden": [256, 256], "z_hidden": [256, 256],
    "lambda": 1.0, "bandwidth": 0.05, "L": 2000, "L_prime": 3,
    "alpha": 0.01, "eta": 0.005, "seed": seed, "snapshot_every": 100,
    "out_dir": None,
}
if variant == "noboundary":
    raw["boundary_term"] = False
if variant == "noz":
    raw["use_z_net"] = False
config = engine.RunConfig.from_dict(raw)
t0 = time.perf_counter()
res = engine.cfg_run(config)
elapsed = time.perf_counter() - t0
np.save(f"tuning/ring_{variant}_seed{seed}.npy", res.ensemble.positions)

ring = domains.make_ring()
tgt = targets.truncated_std_gaussian(ring)
truth = oracle.rejection_sample(tgt, 10000, seed=77000)
final = res.ensemble.positions
import warnings
out = {"seed": seed, "variant": variant, "elapsed_s": round(elapsed, 1),
       "ratio_out": metrics.ratio_out(ring, final),
       "energy": metrics.energy_distance(final, truth),
       "inside_fracs": [1.0 - r["ratio_out"] for r in res.metrics]}
with warnings.catch_warnings(record=True) as wl:
    warnings.simplefilter("always")
    xw, yw = metrics.equalize_sizes(final, truth, seed=0)
    out["w2_sub_defaulteps"] = metrics.sinkhorn_w2(xw, yw)
    out["w2_sub_eps002"] = metrics.sinkhorn_w2(xw, yw, eps_rel=0.002, max_iter=4000)
    out["warnings"] = len(wl)
print(json.dumps(out))
