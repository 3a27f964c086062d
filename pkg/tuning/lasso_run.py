import json, sys, time
import numpy as np
from cfgflow import engine, metrics, oracle, targets, domains

n_particles = int(sys.argv[1])
L = int(sys.argv[2]); Lp = int(sys.argv[3]); eta = float(sys.argv[4])
alpha = float(sys.argv[5]); hidden = int(sys.argv[6])
init_std = float(sys.argv[7]) if len(sys.argv) > 7 else 0.3
data_seed, run_seed = 0, 11

prob = targets.make_synthetic_lasso(data_seed)
h0 = 0.1 * 20 ** (1.0 / 3.0)
config = engine.RunConfig.from_dict({
    "domain": {"name": "from_target"},
    "target": {"name": "lasso", "seed": data_seed, "s": 1.0, "q": 1},
    "N": n_particles,
    "init": {"kind": "gaussian", "mean": list(prob.beta_star), "std": init_std},
    "f_hidden": [hidden, hidden], "lambda": 1.0,
    "bandwidth": {"h0": h0, "adaptive": True},
    "L": L, "L_prime": Lp, "alpha": alpha, "eta": eta,
    "seed": run_seed, "snapshot_every": 200,
})
t0 = time.perf_counter()
res = engine.cfg_run(config)
elapsed = time.perf_counter() - t0
final = res.ensemble.positions
np.save(f"tuning/lasso_N{n_particles}.npy", final)

tgt = targets.lasso_posterior(prob)
truth = oracle.rejection_sample(tgt, 100000, seed=55000)
l1 = np.sum(np.abs(final), axis=1)
en = metrics.energy_distance(final, truth)
tm, ts = truth.mean(0), truth.std(0, ddof=1)
pm, ps = final.mean(0), final.std(0, ddof=1)
se = np.sqrt(ts**2 / len(truth) + ps**2 / len(final))
zmax = float(np.max(np.abs(pm - tm) / se))
print(json.dumps({
    "N": n_particles, "L": L, "Lp": Lp, "eta": eta, "alpha": alpha,
    "hidden": hidden, "elapsed_s": round(elapsed, 1),
    "max_l1_minus_r": float(l1.max() - prob.r),
    "ratio_out": float(np.mean(l1 > prob.r)),
    "energy": en, "zmax": zmax,
    "mean_err_max": float(np.max(np.abs(pm - tm))),
    "h": res.h,
}))
