"""
Noisy labels make per-example losses jumpy
===========================================

Track thirty training points through two runs that differ only in whether
20% of each minibatch's outer-loss labels are flipped. A flipped epoch shows
up as a spike in that point's loss, so its trace varies more.
"""

import numpy as np

from noilin import AttackConfig, NoiseSpec, SplitSpec, TrainConfig, make_ternary_gaussian, run, split
from noilin.data import DEFAULT_CENTERS
from noilin.metrics import DiversityTracker

ds = make_ternary_gaussian(200, DEFAULT_CENTERS, sigma=0.3, seed=0)
rest, test = split(ds, SplitSpec(150, seed=0))
train, valid = split(rest, SplitSpec(90, seed=1))
rows = np.random.default_rng(0).choice(len(train), 30, replace=False)

variances = {}
for site in ("none", "outer"):
    tracker = DiversityTracker(rows)
    cfg = TrainConfig(epochs=20, batch_size=32, base_lr=0.05, seed=0,
                      attack=AttackConfig(0.3, 0.075, 10),
                      injection_site=site, noise=NoiseSpec("symmetric", 0.2))
    run(cfg, train, valid, test, hidden=(64,), tracker=tracker)
    variances[site] = tracker.loss_variances()
    print(f"{site:5s}: median loss variance {np.median(variances[site]):.3g}, "
          f"median grad-norm variance {np.median(tracker.grad_norm_variances()):.3g}")

print("rows with larger variance under outer noise:", int(np.sum(variances["outer"] > variances["none"])), "of 30")
