"""Average MSE over [1, window] vs attack magnitude, attack from t = 1 on subregions 1-2."""
import argparse

import numpy as np

from gridsec.simnet import AttackSpec, Scenario, run_batch
from gridsec.simnet.metrics import post_detection_average, window_average

p = argparse.ArgumentParser()
p.add_argument("--trials", type=int, default=200)
p.add_argument("--window", type=int, default=50)
p.add_argument("--rhos", type=float, nargs="+", default=[0.05, 0.1, 0.2, 0.3, 0.4, 0.5])
args = p.parse_args()

print(f"{'rho':>5s} {'proposed':>10s} {'after alarm':>11s} {'centralized':>11s} {'robust':>9s} {'no detect':>9s}")
for rho in args.rhos:
    sc = Scenario(T=args.window, attacks=(AttackSpec((1, 2), 1, rho),))
    b = run_batch(sc, range(args.trials))
    w = {k: window_average(v, 1, args.window) for k, v in b.mse.items()}
    post = post_detection_average(b.mse["proposed"], b.gamma_net, args.window)
    print(f"{rho:5.2f} {w['proposed']:10.5f} {post:11.5f} {w['centralized']:11.5f} {w['robust']:9.5f} {w['nominal']:9.5f}")
