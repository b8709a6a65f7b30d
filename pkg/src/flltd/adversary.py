"""Scripted malicious-client behaviours.

Attacks are deterministic schedules over rounds. Every kind manipulates what
the client reports (the loss) and, optionally, what it contributes (the
update). ``update_magnitude`` couples an update scaling onto any loss attack
and follows the same on/off schedule.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ATTACK_KINDS = ("honest", "loss_spike", "loss_stagnate", "loss_oscillate", "update_scale")


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "honest"
    start_round: int = 1
    magnitude: float = 5.0
    constant_loss: float = 1.0
    period_on: int = 2
    period_off: int = 2
    update_magnitude: float | None = None

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}; expected one of {ATTACK_KINDS}")
        if self.kind == "honest":
            return
        if self.start_round < 1:
            raise ValueError(f"start_round must be >= 1, got {self.start_round}")
        if self.kind in ("loss_spike", "loss_oscillate") and not self.magnitude > 0:
            raise ValueError(f"magnitude must be > 0 for {self.kind}, got {self.magnitude}")
        if self.kind == "update_scale" and self.magnitude == 0:
            raise ValueError("update_scale magnitude must be non-zero")
        if self.constant_loss < 0:
            raise ValueError(f"constant_loss must be >= 0, got {self.constant_loss}")
        if self.period_on < 1 or self.period_off < 1:
            raise ValueError("period_on and period_off must be >= 1")

    @classmethod
    def coupled_default(cls, start_round: int = 5) -> "AttackSpec":
        """Reported loss x5 plus an inverted, 10x amplified update."""
        return cls("loss_spike", start_round=start_round, magnitude=5.0, update_magnitude=-10.0)

    def active(self, round: int) -> bool:
        if self.kind == "honest" or round < self.start_round:
            return False
        if self.kind == "loss_oscillate":
            return (round - self.start_round) % (self.period_on + self.period_off) < self.period_on
        return True


def attack_loss(true_loss: float, spec: AttackSpec, round: int) -> float:
    if true_loss < 0:
        raise ValueError(f"true_loss must be non-negative, got {true_loss}")
    if not spec.active(round):
        return true_loss
    if spec.kind in ("loss_spike", "loss_oscillate"):
        return true_loss * spec.magnitude
    if spec.kind == "loss_stagnate":
        return spec.constant_loss
    return true_loss  # update_scale leaves the report alone


def attack_update(delta, spec: AttackSpec, round: int) -> np.ndarray:
    if not spec.active(round):
        return delta
    if spec.kind == "update_scale":
        return spec.magnitude * np.asarray(delta)
    if spec.update_magnitude is not None:
        return spec.update_magnitude * np.asarray(delta)
    return delta
