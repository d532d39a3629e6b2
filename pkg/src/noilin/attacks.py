"""L-infinity PGD under cross-entropy, CW-hinge, or KL objectives."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import losses
from . import tensor as T
from .tensor import ShapeError, Tensor

OBJECTIVES = ("ce", "cw", "kl")
TRADES_START_SCALE = 1e-3


class AttackError(RuntimeError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    """PGD settings.

    ``objective`` is ``"ce"`` (cross-entropy on the attack labels, or soft
    cross-entropy when 2-D targets are given), ``"cw"`` (hinge with margin
    ``kappa``) or ``"kl"`` (KL from the natural prediction, used by TRADES).
    ``clamp`` is the ``(lo, hi)`` domain box or None.
    """

    epsilon: float
    alpha: float
    steps: int
    objective: str = "ce"
    kappa: float = 0.0
    random_start: bool = True
    clamp: tuple[float, float] | None = None

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.steps > 0 and not self.alpha > 0:
            raise ValueError("alpha must be positive when steps > 0")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}; expected one of {OBJECTIVES}")
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")
        if self.clamp is not None:
            lo, hi = self.clamp
            if not lo < hi:
                raise ValueError(f"empty clamp box {self.clamp}")
            object.__setattr__(self, "clamp", (float(lo), float(hi)))

    def replace(self, **changes) -> "AttackConfig":
        return AttackConfig(**{**asdict(self), **changes})


def cw_objective(logits, y, kappa: float) -> Tensor:
    """Per-sample ``max(max_{j != y} f_j - f_y - kappa, 0)``."""
    logits = T.as_tensor(logits)
    if logits.values.ndim != 2 or logits.shape[1] < 2:
        raise ValueError(f"CW objective needs at least two classes, got logits {logits.shape}")
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (logits.shape[0],):
        raise ShapeError(f"labels of shape {y.shape} do not match logits {logits.shape}")
    mask = np.zeros(logits.shape)
    mask[np.arange(len(y)), y] = -np.inf
    other = T.amax(T.add(logits, Tensor(mask)), axis=1)
    true = T.take_rows(logits, y)
    return T.relu(T.sub(T.sub(other, true), float(kappa)))


def project(x: np.ndarray, x0: np.ndarray, epsilon: float, clamp=None) -> np.ndarray:
    """Clip into the epsilon-ball around ``x0``, then into the domain box."""
    out = np.clip(x, x0 - epsilon, x0 + epsilon)
    if clamp is not None:
        out = np.clip(out, clamp[0], clamp[1])
    return out


def _objective(model, x: Tensor, y, cfg: AttackConfig, ref_log_p: np.ndarray | None) -> Tensor:
    logits = model.forward(x, frozen=True)
    if cfg.objective == "cw":
        per = cw_objective(logits, y, cfg.kappa)
    elif cfg.objective == "kl":
        # KL(p_nat || p_adv) with p_nat held fixed
        p = Tensor(np.exp(ref_log_p))
        per = T.sum(T.mul(p, T.sub(Tensor(ref_log_p), T.log_softmax(logits))), axis=1)
    elif np.ndim(y) == 2:
        per = losses.soft_cross_entropy_per_sample(logits, y)
    else:
        per = losses.cross_entropy_per_sample(logits, y)
    return per


def pgd(model, x0, y_attack, cfg: AttackConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Iterate ``x <- Proj(x + alpha * sign(grad))`` for ``cfg.steps`` steps.

    ``y_attack`` drives the objective and is used as given, so flipped labels
    can be passed in deliberately. ``rng`` is only consulted for the random
    start. Returns a new array; the model and ``x0`` are left untouched.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 2:
        raise ShapeError(f"attack inputs must be 2-D, got {x0.shape}")
    if cfg.objective != "kl" and np.shape(y_attack)[0] != x0.shape[0]:
        raise ShapeError(f"{np.shape(y_attack)[0]} attack labels for a batch of {x0.shape[0]}")
    ref_log_p = None
    if cfg.objective == "kl":
        logits = model.predict_logits(x0)
        ref_log_p = logits - logits.max(axis=1, keepdims=True)
        ref_log_p = ref_log_p - np.log(np.exp(ref_log_p).sum(axis=1, keepdims=True))

    x = x0.copy()
    if cfg.random_start and cfg.epsilon > 0:
        rng = rng if rng is not None else np.random.default_rng()
        if cfg.objective == "kl":
            x = x + TRADES_START_SCALE * rng.standard_normal(x0.shape)
        else:
            x = x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x0.shape)
        x = project(x, x0, cfg.epsilon, cfg.clamp)

    tape = T.current_tape()
    # rows still being updated; a CW row whose hinge reaches 0 has zero gradient
    # from then on, so it can never move again and is dropped
    active = np.arange(x0.shape[0])
    y_all = y_attack if y_attack is None else np.asarray(y_attack)
    for step in range(cfg.steps):
        if active.size == 0:
            break
        full = active.size == x0.shape[0]
        xt = Tensor(x if full else x[active], requires_grad=True)
        ys = y_all if (full or y_all is None) else y_all[active]
        ref = ref_log_p if (full or ref_log_p is None) else ref_log_p[active]
        per = _objective(model, xt, ys, cfg, ref)
        # summing keeps each sample's gradient independent of batch size
        (g,) = T.grad(T.sum(per), [xt])
        if not np.all(np.isfinite(g)):
            bad = active[~np.isfinite(g).all(axis=1)]
            tape.clear()
            raise AttackError(f"non-finite input gradient at PGD step {step} for samples {bad[:10].tolist()}")
        x[active] = project(xt.values + cfg.alpha * np.sign(g), x0[active], cfg.epsilon, cfg.clamp)
        if cfg.objective == "cw":
            active = active[per.values > 0]
    return x


def worker_count() -> int:
    raw = os.environ.get("NOILIN_THREADS")
    if raw:
        return max(1, int(raw))
    return os.cpu_count() or 1


def pgd_chunked(model, x0, y_attack, cfg: AttackConfig, seed, chunk_size: int = 256) -> np.ndarray:
    """Run :func:`pgd` over fixed-size chunks, possibly on several threads.

    Each chunk draws its random start from ``default_rng([*seed, chunk])``, so
    the output does not depend on the thread count.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    seed = list(np.atleast_1d(seed).astype(np.int64))
    starts = list(range(0, x0.shape[0], chunk_size))
    y_attack = None if y_attack is None else np.asarray(y_attack)

    def run(i):
        s = starts[i]
        ys = None if y_attack is None else y_attack[s : s + chunk_size]
        return pgd(model, x0[s : s + chunk_size], ys, cfg, np.random.default_rng(seed + [i]))

    workers = min(worker_count(), len(starts))
    if workers <= 1:
        parts = [run(i) for i in range(len(starts))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(len(starts))))
    return np.concatenate(parts, axis=0) if parts else x0.copy()
