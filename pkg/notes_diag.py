import sys, time
import numpy as np
from dynst.autodiff import tune_allocator
tune_allocator()
import dynst.model as M
from dynst.pipeline import TrainConfig, split_cohort, train, evaluate_mae
from dynst.simulator import SimConfig, generate

sim = generate(SimConfig(n_patients=2500, seed=1))
tr, va, te = split_cohort(sim.cohort, (0.7, 0.15, 0.15), 1)

for bias in (5.0, 7.0):
    M.HEAD_BIAS_INIT = bias
    for batch, lr in ((16, 0.003), (16, 0.006), (32, 0.006)):
        row = {}
        hist = {}
        for kind in ("static", "dynst"):
            cfg = TrainConfig(epochs=5, seed=1, lr=lr, alpha=0.1, batch_size=batch)
            res = train(kind, tr, va, cfg)
            row[kind] = (evaluate_mae(res.model, te), res.best_epoch)
            hist[kind] = [round(h["val_mae"], 2) for h in res.history]
        lin = train("linear", tr, va, TrainConfig(epochs=40, lr=0.03, seed=1))
        lm = evaluate_mae(lin.model, te)
        print(f"bias={bias} b={batch} lr={lr}: dynst={row['dynst'][0]:.2f}(ep{row['dynst'][1]}) "
              f"static={row['static'][0]:.2f}(ep{row['static'][1]}) linear={lm:.2f} | "
              f"val dynst={hist['dynst']} static={hist['static']}", flush=True)
