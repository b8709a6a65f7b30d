"""Loss-trend deviation detection with short-term trust memory.

The server only sees the scalar training loss each client reports. A client is
flagged when its relative round-to-round loss change is either suspiciously
small while the loss is still high (stagnation) or suspiciously large (spike).
A flag pins the client's memory counter at ``memory_rounds``; each clean round
decrements it, and any client with a positive counter is aggregated with the
penalty weight ``alpha_low`` instead of 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, MutableMapping


class ProtocolError(RuntimeError):
    """A client violated the one-report-per-round protocol."""


@dataclass(frozen=True)
class DetectorConfig:
    tau_low: float = 0.01
    tau_high: float = 0.5
    loss_min: float = 0.3
    epsilon: float = 1e-8
    memory_rounds: int = 3
    alpha_low: float = 0.1
    warmup_rounds: int = 2

    def __post_init__(self):
        # tau_low = 0 and tau_high = inf are accepted so either branch can be disabled
        if not self.tau_low >= 0:
            raise ValueError(f"tau_low must be >= 0, got {self.tau_low}")
        if not self.tau_low < self.tau_high:
            raise ValueError(
                f"tau_low ({self.tau_low}) must be < tau_high ({self.tau_high})"
            )
        if not self.loss_min >= 0:
            raise ValueError(f"loss_min must be >= 0, got {self.loss_min}")
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.memory_rounds < 1 or int(self.memory_rounds) != self.memory_rounds:
            raise ValueError(f"memory_rounds must be a positive integer, got {self.memory_rounds}")
        if not 0 < self.alpha_low < 1:
            raise ValueError(f"alpha_low must lie in (0, 1), got {self.alpha_low}")
        if self.warmup_rounds < 0 or int(self.warmup_rounds) != self.warmup_rounds:
            raise ValueError(f"warmup_rounds must be a non-negative integer, got {self.warmup_rounds}")


@dataclass(frozen=True)
class DetectionOutcome:
    delta: float | None
    flagged: bool
    memory_after: int
    alpha: float


def relative_deviation(curr: float, prev: float, epsilon: float) -> float:
    """``|curr - prev| / (prev + epsilon)``."""
    if curr < 0 or prev < 0:
        raise ValueError(f"losses must be non-negative, got curr={curr}, prev={prev}")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    return abs(curr - prev) / (prev + epsilon)


def flag(delta: float, curr_loss: float, cfg: DetectorConfig) -> bool:
    stagnating = delta < cfg.tau_low and curr_loss > cfg.loss_min
    return bool(stagnating or delta > cfg.tau_high)


def update_memory(m: int, flagged: bool, cfg: DetectorConfig) -> int:
    if not 0 <= m <= cfg.memory_rounds:
        raise ValueError(f"memory {m} outside [0, {cfg.memory_rounds}]")
    if flagged:
        return cfg.memory_rounds
    return max(0, m - 1)


def weight(m: int, cfg: DetectorConfig) -> float:
    if not 0 <= m <= cfg.memory_rounds:
        raise ValueError(f"memory {m} outside [0, {cfg.memory_rounds}]")
    return cfg.alpha_low if m > 0 else 1.0


def detector_step(
    round: int,
    reported_losses,
    histories: MutableMapping[int, list],
    memories: MutableMapping[int, int],
    cfg: DetectorConfig,
) -> dict[int, DetectionOutcome]:
    """Process one round of reported losses, mutating histories and memories.

    ``reported_losses`` is either a mapping or an iterable of ``(client, loss)``
    pairs; the latter lets duplicate reports be detected. Clients absent from
    this round keep their state untouched. During warm-up and on a client's
    first report no deviation is computed and its memory only decays.
    """
    if round < 1:
        raise ValueError(f"round must be >= 1, got {round}")
    pairs = list(reported_losses.items() if isinstance(reported_losses, Mapping) else reported_losses)
    seen = set()
    for cid, _ in pairs:
        if cid in seen:
            raise ProtocolError(f"client {cid} reported more than once in round {round}")
        if cid not in memories:
            raise ProtocolError(f"client {cid} has no memory entry")
        seen.add(cid)

    out = {}
    for cid, loss in pairs:
        loss = float(loss)
        hist = histories.setdefault(cid, [])
        delta = None
        flagged = False
        if hist and round > cfg.warmup_rounds:
            delta = relative_deviation(loss, hist[-1], cfg.epsilon)
            flagged = flag(delta, loss, cfg)
        hist.append(loss)
        m = update_memory(memories[cid], flagged, cfg)
        memories[cid] = m
        out[cid] = DetectionOutcome(delta, flagged, m, weight(m, cfg))
    return out


@dataclass
class LossTrendDetector:
    """Stateful server-side wrapper around :func:`detector_step`."""

    config: DetectorConfig = field(default_factory=DetectorConfig)
    histories: dict = field(default_factory=dict)
    memories: dict = field(default_factory=dict)

    def register(self, client_id):
        self.histories.setdefault(client_id, [])
        self.memories.setdefault(client_id, 0)

    def step(self, round: int, reported_losses) -> dict[int, DetectionOutcome]:
        return detector_step(round, reported_losses, self.histories, self.memories, self.config)

    def weights(self) -> dict:
        return {cid: weight(m, self.config) for cid, m in self.memories.items()}
