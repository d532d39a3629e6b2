"""Accuracy, logit margins, NL-vs-CL similarity and per-example diversity traces."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import losses
from . import tensor as T
from .attacks import AttackConfig, pgd, pgd_chunked
from .data import LabeledDataset
from .noise import NoiseSpec, flip_labels

# name -> (objective, steps); step size is epsilon / 4 for all of them
EVAL_ATTACKS = {
    "pgd10": ("ce", 10),
    "pgd20": ("ce", 20),
    "pgd40": ("ce", 40),
    "cw30": ("cw", 30),
}


def eval_attack(name: str, epsilon: float, clamp=None, kappa: float = 0.0) -> AttackConfig:
    if name not in EVAL_ATTACKS:
        raise ValueError(f"unknown attack {name!r}; valid names: {', '.join(sorted(EVAL_ATTACKS))}")
    objective, steps = EVAL_ATTACKS[name]
    return AttackConfig(epsilon, epsilon / 4, steps, objective=objective, kappa=kappa,
                        random_start=True, clamp=clamp)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def accuracy(model, ds: LabeledDataset, attack: AttackConfig | None = None, seed=0) -> float:
    """Fraction classified correctly, on natural inputs or on PGD outputs against the true labels."""
    if len(ds) == 0:
        raise ValueError("accuracy of an empty dataset")
    x = ds.features
    if attack is not None:
        x = pgd_chunked(model, x, ds.labels, attack, seed)
    pred = model.predict_logits(x).argmax(axis=1)
    return float(np.mean(pred == ds.labels))


def logit_margins(logits: np.ndarray, labels) -> np.ndarray:
    """``f_y - max_{j != y} f_j`` per row."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.arange(len(labels))
    others = logits.copy()
    others[rows, labels] = -np.inf
    return logits[rows, labels] - others.max(axis=1)


def logit_margin_stats(model, ds: LabeledDataset) -> tuple[float, float]:
    """Median and standard deviation of natural-data logit margins."""
    if len(ds) == 0:
        raise ValueError("margin statistics of an empty dataset")
    m = logit_margins(model.predict_logits(ds.features), ds.labels)
    return float(np.median(m)), float(np.std(m))


def _kl_rows(p_logits: np.ndarray, q_logits: np.ndarray) -> np.ndarray:
    lp, lq = _log_softmax(p_logits), _log_softmax(q_logits)
    return np.sum(np.exp(lp) * (lp - lq), axis=1)


def _ce_rows(logits: np.ndarray, y: np.ndarray) -> np.ndarray:
    return -_log_softmax(logits)[np.arange(len(y)), y]


@dataclass
class SimilarityReport:
    """Per-sample comparison of clean-label and noisy-label adversarial examples."""

    index: np.ndarray
    true_label: np.ndarray
    noisy_label: np.ndarray
    kl_nl: np.ndarray
    kl_cl: np.ndarray
    ce_nat: np.ndarray
    ce_cl: np.ndarray
    ce_nl: np.ndarray
    x_cl: np.ndarray = field(repr=False)
    x_nl: np.ndarray = field(repr=False)

    def medians(self) -> dict[str, float]:
        return {k: float(np.median(getattr(self, k))) for k in ("kl_nl", "kl_cl", "ce_nat", "ce_cl", "ce_nl")}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["index", "true_label", "noisy_label", "kl_nl", "kl_cl", "ce_nat", "ce_cl", "ce_nl"])
            for i in range(len(self.index)):
                w.writerow([int(self.index[i]), int(self.true_label[i]), int(self.noisy_label[i])]
                           + [repr(float(getattr(self, k)[i])) for k in ("kl_nl", "kl_cl", "ce_nat", "ce_cl", "ce_nl")])


def nl_similarity_report(
    model,
    samples: LabeledDataset,
    attack: AttackConfig,
    kind: str = "symmetric",
    seed: int = 0,
    direction: str = "adv_nat",
) -> SimilarityReport:
    """Attack every sample twice, once with its true label and once with a flipped one.

    ``direction="adv_nat"`` reports KL(f(x_adv) || f(x_nat)); ``"nat_adv"``
    reverses the arguments.
    """
    if samples.num_classes < 2:
        raise ValueError("similarity report needs at least two classes")
    if direction not in ("adv_nat", "nat_adv"):
        raise ValueError(f"unknown KL direction {direction!r}")
    y = samples.labels
    y_nl, _ = flip_labels(y, samples.num_classes, NoiseSpec(kind, 1.0), np.random.default_rng([seed, 0]))
    x = samples.features
    x_cl = pgd(model, x, y, attack, np.random.default_rng([seed, 1]))
    x_nl = pgd(model, x, y_nl, attack, np.random.default_rng([seed, 1]))
    f_nat, f_cl, f_nl = (model.predict_logits(v) for v in (x, x_cl, x_nl))
    if direction == "adv_nat":
        kl_nl, kl_cl = _kl_rows(f_nl, f_nat), _kl_rows(f_cl, f_nat)
    else:
        kl_nl, kl_cl = _kl_rows(f_nat, f_nl), _kl_rows(f_nat, f_cl)
    return SimilarityReport(samples.index.copy(), y.copy(), y_nl, kl_nl, kl_cl,
                            _ce_rows(f_nat, y), _ce_rows(f_cl, y), _ce_rows(f_nl, y), x_cl, x_nl)


def example_stats(model, x: np.ndarray, y) -> tuple[np.ndarray, np.ndarray]:
    """Per-example loss and L2 norm of the weight gradient of that loss."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    params = model.parameters()
    loss_vals, norms = np.empty(len(y)), np.empty(len(y))
    tape = T.current_tape()
    for i in range(len(y)):
        tape.clear()
        loss = losses.cross_entropy(model(x[i : i + 1]), y[i : i + 1])
        grads = T.grad(loss, params)
        loss_vals[i] = loss.item()
        norms[i] = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    return loss_vals, norms


@dataclass
class DiversityTrace:
    index: int
    losses: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    labels: list[int] = field(default_factory=list)
    epochs: list[int] = field(default_factory=list)


class DiversityTracker:
    """Collects outer loss and weight-gradient norm for a fixed set of training rows.

    The training loop calls :meth:`observe` with each batch's adversarial
    inputs and the labels used for learning, before the parameter update.
    """

    def __init__(self, rows):
        self.rows = [int(r) for r in rows]
        self.traces = {r: DiversityTrace(r) for r in self.rows}
        self._lookup = set(self.rows)

    def observe(self, model, batch_rows, x_adv, loss_labels, epoch: int) -> None:
        hits = [k for k, r in enumerate(batch_rows) if int(r) in self._lookup]
        if not hits:
            return
        lv, gn = example_stats(model, x_adv[hits], np.asarray(loss_labels)[hits])
        for k, l, g in zip(hits, lv, gn):
            t = self.traces[int(batch_rows[k])]
            t.losses.append(float(l))
            t.grad_norms.append(float(g))
            t.labels.append(int(loss_labels[k]))
            t.epochs.append(int(epoch))

    def loss_variances(self) -> np.ndarray:
        return np.array([np.var(self.traces[r].losses) for r in self.rows])

    def grad_norm_variances(self) -> np.ndarray:
        return np.array([np.var(self.traces[r].grad_norms) for r in self.rows])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["row", "epoch", "label", "outer_loss", "grad_norm"])
            for r in self.rows:
                t = self.traces[r]
                for e, y, l, g in zip(t.epochs, t.labels, t.losses, t.grad_norms):
                    w.writerow([r, e, y, repr(l), repr(g)])


def write_report(path, rows: dict[str, float]) -> None:
    """One-row CSV of named metrics."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(list(rows))
        w.writerow([repr(float(v)) for v in rows.values()])
