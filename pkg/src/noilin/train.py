"""SAT and TRADES training with configurable label-noise injection."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import losses
from . import tensor as T
from .attacks import AttackConfig, pgd
from .data import LabeledDataset
from .metrics import EVAL_ATTACKS, accuracy, eval_attack
from .models import MlpClassifier, save_checkpoint
from .noise import NoiseSpec, flip, flip_minibatch
from .scheduler import NoilinState

METHODS = ("sat", "trades")
SITES = ("none", "inner", "outer", "both", "mismatched", "noilin")
SCHEDULES = ("piecewise", "multiple_decay", "cosine", "cyclic")
SMOOTHING = ("none", "outer", "both", "adaptive")

CSV_COLUMNS = [
    "epoch", "lr", "eta", "train_loss", "nat_train_acc", "nat_test_acc",
    "rob_valid_acc", "rob_test_pgd40", "rob_test_cw30", "boosted",
]

# independent random streams per (seed, epoch, batch)
_SHUFFLE, _ATTACK_FLIP, _LOSS_FLIP, _START = 0, 1, 2, 3


class NumericError(FloatingPointError):
    pass


def lr_at(schedule: str, base_lr: float, epoch, total_epochs: int) -> float:
    """Learning rate for ``epoch`` (0-based) of a ``total_epochs`` run."""
    if schedule not in SCHEDULES:
        raise ValueError(f"unknown LR schedule {schedule!r}; expected one of {SCHEDULES}")
    E = total_epochs
    if schedule == "piecewise":
        # decays at 60 and 90 of 120 epochs, scaled to E
        k = int(epoch >= E * 60 // 120) + int(epoch >= E * 90 // 120)
        return base_lr / 10**k
    if schedule == "multiple_decay":
        k = min(3, int(math.floor(epoch * 4 / E)))
        return base_lr / 10**k
    if schedule == "cosine":
        return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / E))
    half = E / 2
    if epoch <= half:
        return base_lr * epoch / half
    return base_lr * (E - epoch) / half


def sgd_step(params, grads, buffers, lr: float, momentum: float, weight_decay: float) -> None:
    """In-place SGD with momentum and L2 weight decay folded into the gradient.

    ``params`` and ``buffers`` are float arrays updated in place.
    """
    for p, g, v in zip(params, grads, buffers):
        if p.shape != g.shape or p.shape != v.shape:
            raise ValueError(f"parameter {p.shape}, gradient {g.shape} and buffer {v.shape} disagree")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient; aborting epoch")
    for p, g, v in zip(params, grads, buffers):
        v *= momentum
        v += g + weight_decay * p
        p -= lr * v


@dataclass
class TrainConfig:
    method: str = "sat"
    injection_site: str = "none"
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    epochs: int = 10
    batch_size: int = 128
    lr_schedule: str = "piecewise"
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    attack: AttackConfig = field(default_factory=lambda: AttackConfig(8 / 255, 2 / 255, 10, clamp=(0.0, 1.0)))
    trades_beta: float = 6.0
    label_smoothing: str = "none"
    smoothing_rho: float = 0.1
    noilin: NoilinState | None = None
    eval_epsilon: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.injection_site not in SITES:
            raise ValueError(f"unknown injection site {self.injection_site!r}; expected one of {SITES}")
        if self.lr_schedule not in SCHEDULES:
            raise ValueError(f"unknown LR schedule {self.lr_schedule!r}; expected one of {SCHEDULES}")
        if self.label_smoothing not in SMOOTHING:
            raise ValueError(f"unknown label smoothing {self.label_smoothing!r}; expected one of {SMOOTHING}")
        if self.label_smoothing != "none" and self.method != "sat":
            raise ValueError("label smoothing is only defined for method 'sat'")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if self.noise.seed is None:
            self.noise = NoiseSpec(self.noise.kind, self.noise.rate, self.seed, self.noise.pair_map)
        if self.noilin is None and (self.injection_site == "noilin" or self.label_smoothing == "adaptive"):
            self.noilin = NoilinState.for_method(self.method)

    @property
    def eval_eps(self) -> float:
        return self.attack.epsilon if self.eval_epsilon is None else self.eval_epsilon


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    eta: float
    train_loss: float
    nat_train_acc: float
    nat_test_acc: float
    rob_valid_acc: float
    rob_test_pgd40: float
    rob_test_cw30: float
    boosted: bool

    def row(self) -> list[str]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append(str(int(v)) if isinstance(v, (bool, int, np.integer)) else repr(float(v)))
        return out


@dataclass
class BatchLabels:
    """Labels used for one minibatch, kept for provenance checks."""

    epoch: int
    rows: np.ndarray
    clean: np.ndarray
    attack: np.ndarray
    loss: np.ndarray
    attack_flipped: np.ndarray
    loss_flipped: np.ndarray


def _batch_labels(cfg: TrainConfig, ds: LabeledDataset, rows, epoch, b, view) -> BatchLabels:
    clean = ds.labels[rows]
    none = np.zeros(len(rows), dtype=bool)
    site = cfg.injection_site
    C = ds.num_classes
    if site == "noilin":
        noisy, mask = view.noisy_labels[rows], view.flipped_mask[rows]
        return BatchLabels(epoch, rows, clean, noisy, noisy, mask, mask)
    if site == "none" or cfg.noise.rate == 0:
        return BatchLabels(epoch, rows, clean, clean, clean, none, none)
    first = flip_minibatch(clean, cfg.noise, [cfg.noise.seed or 0, cfg.seed, epoch, b, _ATTACK_FLIP], C)
    if site == "inner":
        return BatchLabels(epoch, rows, clean, first[0], clean, first[1], none)
    if site == "outer":
        return BatchLabels(epoch, rows, clean, clean, first[0], none, first[1])
    if site == "both":
        return BatchLabels(epoch, rows, clean, first[0], first[0], first[1], first[1])
    second = flip_minibatch(clean, cfg.noise, [cfg.noise.seed or 0, cfg.seed, epoch, b, _LOSS_FLIP], C)
    return BatchLabels(epoch, rows, clean, first[0], second[0], first[1], second[1])


def _smoothed(labels, C, rho):
    return losses.smooth_labels(labels, C, rho)


def train_epoch(
    model: MlpClassifier,
    ds: LabeledDataset,
    cfg: TrainConfig,
    epoch: int,
    buffers: list[np.ndarray],
    eta: float | None = None,
    probe: Callable[[BatchLabels], None] | None = None,
    tracker=None,
) -> float:
    """One pass over ``ds``; returns the mean training loss.

    ``eta`` is the epoch's noise rate for the ``noilin`` site (the whole set is
    flipped once) and the smoothing level for adaptive label smoothing.
    """
    if ds.dim != model.input_dim:
        raise ValueError(f"model expects {model.input_dim} features, dataset has {ds.dim}")
    lr = lr_at(cfg.lr_schedule, cfg.base_lr, epoch, cfg.epochs)
    view = None
    if cfg.injection_site == "noilin":
        view = flip(ds, cfg.noise.with_rate(eta), epoch)
    rho = {"outer": cfg.smoothing_rho, "both": cfg.smoothing_rho, "adaptive": eta}.get(cfg.label_smoothing)
    smooth_attack = cfg.label_smoothing in ("both", "adaptive")

    order = np.random.default_rng([cfg.seed, epoch, _SHUFFLE]).permutation(len(ds))
    params = model.parameters()
    total, count = 0.0, 0
    tape = T.current_tape()
    for b, start in enumerate(range(0, len(ds), cfg.batch_size)):
        rows = order[start : start + cfg.batch_size]
        xb = ds.features[rows]
        lab = _batch_labels(cfg, ds, rows, epoch, b, view)
        if probe is not None:
            probe(lab)
        start_rng = np.random.default_rng([cfg.seed, epoch, b, _START])
        tape.clear()

        if cfg.method == "trades":
            x_adv = pgd(model, xb, None, cfg.attack.replace(objective="kl"), start_rng)
            if tracker is not None:
                tracker.observe(model, rows, x_adv, lab.loss, epoch)
            loss = losses.trades_loss(model, xb, x_adv, lab.loss, cfg.trades_beta)
        else:
            y_att = _smoothed(lab.attack, ds.num_classes, rho) if smooth_attack else lab.attack
            x_adv = pgd(model, xb, y_att, cfg.attack, start_rng)
            if tracker is not None:
                tracker.observe(model, rows, x_adv, lab.loss, epoch)
            logits = model(x_adv)
            if rho is None:
                loss = losses.cross_entropy(logits, lab.loss)
            else:
                loss = losses.soft_cross_entropy(logits, _smoothed(lab.loss, ds.num_classes, rho))

        value = loss.item()
        if not math.isfinite(value):
            tape.clear()
            raise NumericError(f"non-finite training loss at epoch {epoch}, batch {b}")
        model.zero_grad()
        T.backward(loss)
        sgd_step([p.values for p in params], [p.grad for p in params], buffers,
                 lr, cfg.momentum, cfg.weight_decay)
        total += value * len(rows)
        count += len(rows)
    return total / count


@dataclass
class RunResult:
    final: MlpClassifier
    best: MlpClassifier
    records: list[EpochRecord]
    best_epoch: int


def write_log(records: list[EpochRecord], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow(r.row())


def evaluate_epoch(model, train, valid, test, cfg: TrainConfig) -> dict[str, float]:
    eps = cfg.eval_eps
    clamp = cfg.attack.clamp
    return {
        "nat_train_acc": accuracy(model, train),
        "nat_test_acc": accuracy(model, test),
        "rob_valid_acc": accuracy(model, valid, eval_attack("pgd10", eps, clamp), seed=[cfg.seed, 10]),
        "rob_test_pgd40": accuracy(model, test, eval_attack("pgd40", eps, clamp), seed=[cfg.seed, 40]),
        "rob_test_cw30": accuracy(model, test, eval_attack("cw30", eps, clamp), seed=[cfg.seed, 30]),
    }


def run(
    cfg: TrainConfig,
    train: LabeledDataset,
    valid: LabeledDataset,
    test: LabeledDataset,
    hidden=(64,),
    out_dir=None,
    config_hash: str = "",
    validation_feed: Callable[[int, float], float] | None = None,
    probe=None,
    tracker=None,
    on_epoch: Callable[[MlpClassifier, EpochRecord], None] | None = None,
) -> RunResult:
    """Train for ``cfg.epochs`` epochs and keep the best robust-validation checkpoint.

    ``validation_feed(epoch, measured)`` may replace the accuracy handed to the
    noise scheduler (used for scripted tests).
    """
    model = MlpClassifier.init([train.dim, *hidden, train.num_classes], seed=cfg.seed)
    buffers = [np.zeros_like(p.values) for p in model.parameters()]
    sched = cfg.noilin
    if sched is not None:
        sched = NoilinState(sched.eta_min, sched.eta_max, sched.tau, sched.gamma)
    records: list[EpochRecord] = []
    best, best_acc, best_epoch = model.copy(), -1.0, -1
    for epoch in range(cfg.epochs):
        eta = sched.current_eta if sched is not None else (
            cfg.noise.rate if cfg.injection_site != "none" else 0.0)
        lr = lr_at(cfg.lr_schedule, cfg.base_lr, epoch, cfg.epochs)
        loss = train_epoch(model, train, cfg, epoch, buffers, eta=eta, probe=probe, tracker=tracker)
        stats = evaluate_epoch(model, train, valid, test, cfg)
        boosted = False
        if sched is not None:
            feed = stats["rob_valid_acc"]
            if validation_feed is not None:
                feed = validation_feed(epoch, feed)
            boosted = sched.observe(feed)
        rec = EpochRecord(epoch, lr, eta, loss, boosted=boosted, **stats)
        records.append(rec)
        if stats["rob_valid_acc"] > best_acc:
            best, best_acc, best_epoch = model.copy(), stats["rob_valid_acc"], epoch
        if on_epoch is not None:
            on_epoch(model, rec)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        meta = {"eval_epsilon": cfg.eval_eps, "clamp": cfg.attack.clamp, "best_epoch": best_epoch}
        save_checkpoint(best, out / "best.ckpt", config_hash, meta)
        save_checkpoint(model, out / "last.ckpt", config_hash, meta)
        write_log(records, out / "epochs.csv")
    return RunResult(model, best, records, best_epoch)


__all__ = [
    "EVAL_ATTACKS", "BatchLabels", "EpochRecord", "NumericError", "RunResult", "TrainConfig",
    "lr_at", "run", "sgd_step", "train_epoch", "write_log",
]
