import sys, time
import numpy as np
from dynst.autodiff import tune_allocator
tune_allocator()
import dynst.model as M
from dynst.pipeline import TrainConfig, split_cohort, train, evaluate_mae
from dynst.simulator import SimConfig, generate

bias = float(sys.argv[1]); lr = float(sys.argv[2]); epochs = int(sys.argv[3])
M.HEAD_BIAS_INIT = bias
for seed in (1, 2):
    sim = generate(SimConfig(n_patients=5000, seed=seed))
    tr, va, te = split_cohort(sim.cohort, (0.7, 0.15, 0.15), seed)
    row = {}
    for kind in ("dynst", "static", "linear"):
        cfg = TrainConfig(epochs=epochs, seed=seed, lr=lr, alpha=0.1)
        if kind == "linear":
            cfg = cfg.with_(epochs=40, lr=0.03)
        res = train(kind, tr, va, cfg)
        row[kind] = (evaluate_mae(res.model, te), res.best_epoch)
    print(f"bias={bias} lr={lr} ep={epochs} seed={seed}: "
          + "  ".join(f"{k}={v[0]:.3f}(ep{v[1]})" for k, v in row.items()), flush=True)
