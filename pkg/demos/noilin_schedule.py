"""
Raising the noise rate when validation robustness stalls
========================================================

``NoilinState`` keeps the robust validation accuracy history. Whenever the
latest window is worse than the one an epoch earlier, the label-noise rate
grows by a factor ``1 + gamma`` until it hits ``eta_max``.
"""

from noilin import AttackConfig, NoilinState, SplitSpec, TrainConfig, make_ternary_gaussian, run, split
from noilin.data import DEFAULT_CENTERS

# the rule on its own, fed a made-up accuracy stream
state = NoilinState(eta_min=0.05, eta_max=0.6, tau=2, gamma=0.1)
for acc in [0.50, 0.55, 0.60, 0.58, 0.61, 0.57, 0.56, 0.59]:
    boosted = state.observe(acc)
    print(f"acc {acc:.2f} -> eta {state.eta:.4f}{'  (boost)' if boosted else ''}")

# inside training: the whole training set is relabelled each epoch at the current rate
ds = make_ternary_gaussian(150, DEFAULT_CENTERS, sigma=0.35, seed=1)
rest, test = split(ds, SplitSpec(90, seed=1))
train, valid = split(rest, SplitSpec(90, seed=2))
cfg = TrainConfig(
    epochs=20, batch_size=32, base_lr=0.05, seed=1,
    attack=AttackConfig(0.3, 0.075, 5),
    injection_site="noilin", noilin=NoilinState(0.05, 0.6, tau=2, gamma=0.1),
)
result = run(cfg, train, valid, test, hidden=(32,))
print("epoch  eta     rob_valid")
for r in result.records:
    print(f"{r.epoch:5d}  {r.eta:.4f}  {r.rob_valid_acc:.3f}")
