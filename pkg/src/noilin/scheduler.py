"""Adaptive noise-rate schedule driven by robust validation accuracy."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

SAT_DEFAULTS = {"eta_min": 0.05, "eta_max": 0.6, "tau": 10, "gamma": 0.1}
TRADES_DEFAULTS = {"eta_min": 0.05, "eta_max": 0.4, "tau": 10, "gamma": 0.05}


@dataclass
class NoilinState:
    """Current noise rate plus the accuracy history that drives it.

    After each epoch, :meth:`observe` compares the sum of the latest
    ``tau + 1`` accuracies with the same-length window one epoch earlier and
    multiplies ``eta`` by ``1 + gamma`` (capped at ``eta_max``) when the newer
    window is strictly smaller. Until both windows exist, i.e. before
    ``tau + 2`` observations, nothing fires.
    """

    eta_min: float = 0.05
    eta_max: float = 0.6
    tau: int = 10
    gamma: float = 0.1
    eta: float = field(default=None)
    history: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.eta_min <= self.eta_max <= 1.0:
            raise ValueError(f"need 0 <= eta_min <= eta_max <= 1, got {self.eta_min}, {self.eta_max}")
        if int(self.tau) != self.tau or self.tau < 1:
            raise ValueError(f"tau must be a positive integer, got {self.tau}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        self.tau = int(self.tau)
        if self.eta is None:
            self.eta = self.eta_min

    @classmethod
    def for_method(cls, method: str) -> "NoilinState":
        return cls(**(TRADES_DEFAULTS if method == "trades" else SAT_DEFAULTS))

    @property
    def current_eta(self) -> float:
        return self.eta

    def degraded(self) -> bool:
        """Window test on the history as it stands."""
        e, tau = len(self.history), self.tau
        if e < tau + 2:
            return False
        recent = self.history[e - tau - 1 :]
        earlier = self.history[e - tau - 2 : e - 1]
        # fsum of the signed terms is exact, so shared entries cancel exactly
        return math.fsum(recent + [-a for a in earlier]) < 0.0

    def observe(self, accuracy: float) -> bool:
        """Record one epoch's robust validation accuracy; return whether eta was boosted."""
        if not 0.0 <= accuracy <= 1.0:
            raise ValueError(f"accuracy must lie in [0, 1], got {accuracy}")
        self.history.append(float(accuracy))
        if self.degraded():
            self.eta = min(self.eta * (1.0 + self.gamma), self.eta_max)
            return True
        return False
