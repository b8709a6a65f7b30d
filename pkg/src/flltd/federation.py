"""Synchronous federated rounds with FedAvg or loss-trend (FL-LTD) aggregation."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import model
from .adversary import AttackSpec, attack_loss, attack_update
from .config import ExperimentConfig, TrainConfig
from .data import Dataset, PartitionSpec, gen_synthetic, load_idx, partition_noniid
from .detection import DetectorConfig, LossTrendDetector

log = logging.getLogger(__name__)

# leading tags keep the derived seed streams of different purposes apart
_TAG_DATA, _TAG_TEST, _TAG_PARTITION, _TAG_INIT, _TAG_CLIENT, _TAG_SAMPLE = range(6)


def derive_seed(*keys: int) -> int:
    """Stable 32-bit seed from a tuple of non-negative integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


@dataclass
class ClientRecord:
    id: int
    data: Dataset
    attack: AttackSpec = field(default_factory=AttackSpec)

    @property
    def size(self) -> int:
        return len(self.data)


@dataclass
class ServerState:
    arch: model.ModelArch
    global_params: np.ndarray
    rule: str = "fl_ltd"
    detector: LossTrendDetector = field(default_factory=LossTrendDetector)
    train: TrainConfig = field(default_factory=TrainConfig)
    round: int = 0
    size_weighted_ltd: bool = False
    participation: float = 1.0


@dataclass(frozen=True)
class ClientReport:
    client_id: int
    true_loss: float
    reported_loss: float
    delta: float | None
    flagged: bool
    memory: int
    alpha: float
    update_norm: float


@dataclass(frozen=True)
class RoundReport:
    round: int
    clients: tuple
    test_accuracy: float
    global_params: np.ndarray = field(repr=False, compare=False)

    def client(self, client_id: int) -> ClientReport:
        for c in self.clients:
            if c.client_id == client_id:
                return c
        raise KeyError(client_id)


@dataclass
class ExperimentResult:
    reports: list
    initial_accuracy: float
    initial_params: np.ndarray = field(repr=False)

    @property
    def final_accuracy(self) -> float:
        return self.reports[-1].test_accuracy if self.reports else self.initial_accuracy

    @property
    def final_params(self) -> np.ndarray:
        return self.reports[-1].global_params if self.reports else self.initial_params

    def __iter__(self):
        return iter(self.reports)

    def __len__(self):
        return len(self.reports)


def client_update(
    arch: model.ModelArch,
    global_params,
    client: ClientRecord,
    train: TrainConfig,
    round: int,
    rng_seed: int,
):
    """One local epoch from the broadcast model, then adversary interposition.

    Returns ``(delta, reported_loss, true_loss)``.
    """
    local, true_loss = model.sgd_epoch(
        arch, global_params, client.data, train.lr, train.batch_size, rng_seed
    )
    delta = attack_update(local - global_params, client.attack, round)
    return delta, attack_loss(true_loss, client.attack, round), true_loss


def _weighted_mean(deltas, weights):
    deltas = np.asarray(deltas, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if deltas.ndim != 2:
        raise ValueError("deltas must be a non-empty list of equal-length vectors")
    if len(weights) != len(deltas):
        raise ValueError(f"{len(deltas)} deltas but {len(weights)} weights")
    total = weights.sum()
    if not total > 0:
        raise ValueError("aggregation weights must have a positive sum")
    # normalise first so equal weights give bitwise-equal coefficients across rules
    coef = weights / total
    out = np.zeros(deltas.shape[1])
    for c, d in zip(coef, deltas):
        out += c * d
    return out


def aggregate_fedavg(deltas, sizes) -> np.ndarray:
    """Dataset-size weighted mean of the client updates."""
    sizes = np.asarray(sizes)
    if np.any(sizes <= 0):
        raise ValueError("client sizes must be positive")
    return _weighted_mean(deltas, sizes)


def aggregate_ltd(deltas, alphas) -> np.ndarray:
    """Trust-weighted mean ``sum(a_i d_i) / sum(a_i)``; no dataset-size factor."""
    alphas = np.asarray(alphas, dtype=np.float64)
    if np.any(alphas < 0):
        raise ValueError("alphas must be non-negative")
    return _weighted_mean(deltas, alphas)


def _participants(server, clients, global_seed):
    if server.participation >= 1.0:
        return sorted(clients, key=lambda c: c.id)
    k = max(1, int(round(server.participation * len(clients))))
    rng = np.random.default_rng(derive_seed(global_seed, _TAG_SAMPLE, server.round + 1))
    chosen = rng.choice(len(clients), size=k, replace=False)
    return sorted((clients[i] for i in chosen), key=lambda c: c.id)


def run_round(
    server: ServerState,
    clients,
    global_seed: int,
    test: Dataset,
    *,
    workers: int = 1,
):
    """Advance ``server`` by one round in place; returns ``(server, report)``."""
    if not clients:
        raise ValueError("a round needs at least one client")
    ids = [c.id for c in clients]
    if len(set(ids)) != len(ids):
        raise ValueError(f"client ids must be unique, got {ids}")
    t = server.round + 1
    active = _participants(server, clients, global_seed)
    for c in active:
        server.detector.register(c.id)

    w = server.global_params

    def work(c):
        return client_update(
            server.arch, w, c, server.train, t, derive_seed(global_seed, _TAG_CLIENT, c.id, t)
        )

    if workers > 1 and len(active) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, active))
    else:
        results = [work(c) for c in active]

    deltas = [r[0] for r in results]
    outcomes = server.detector.step(t, [(c.id, r[1]) for c, r in zip(active, results)])

    if server.rule == "fl_ltd":
        alphas = [outcomes[c.id].alpha for c in active]
        if server.size_weighted_ltd:
            alphas = [a * c.size for a, c in zip(alphas, active)]
        step = aggregate_ltd(deltas, alphas)
    elif server.rule == "fedavg":
        step = aggregate_fedavg(deltas, [c.size for c in active])
    else:
        raise ValueError(f"unknown aggregation rule {server.rule!r}")

    server.global_params = w + step
    server.round = t
    acc = model.evaluate(server.arch, server.global_params, test)

    rows = []
    for c, (delta, reported, true_loss) in zip(active, results):
        o = outcomes[c.id]
        rows.append(
            ClientReport(
                client_id=c.id,
                true_loss=true_loss,
                reported_loss=reported,
                delta=o.delta,
                flagged=o.flagged,
                memory=o.memory_after,
                alpha=o.alpha,
                update_norm=float(np.linalg.norm(delta)),
            )
        )
    flagged = [r.client_id for r in rows if r.flagged]
    log.debug("round %d acc=%.4f flagged=%s", t, acc, flagged)
    return server, RoundReport(t, tuple(rows), acc, server.global_params.copy())


def simulate(
    arch: model.ModelArch,
    clients,
    test: Dataset,
    *,
    rounds: int,
    seed: int,
    rule: str = "fl_ltd",
    train: TrainConfig | None = None,
    detector: DetectorConfig | None = None,
    size_weighted_ltd: bool = False,
    participation: float = 1.0,
    init=None,
    workers: int = 1,
) -> ExperimentResult:
    """Run ``rounds`` rounds from ``init`` (default: seeded uniform init)."""
    if init is None:
        init = model.init_params(arch, derive_seed(seed, _TAG_INIT))
    init = np.asarray(init, dtype=np.float64)
    server = ServerState(
        arch=arch,
        global_params=init.copy(),
        rule=rule,
        detector=LossTrendDetector(detector or DetectorConfig()),
        train=train or TrainConfig(),
        size_weighted_ltd=size_weighted_ltd,
        participation=participation,
    )
    reports = []
    for _ in range(rounds):
        server, report = run_round(server, clients, seed, test, workers=workers)
        reports.append(report)
    return ExperimentResult(reports, model.evaluate(arch, init, test), init)


def build_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    d = cfg.data
    if d.source == "idx":
        train = load_idx(d.train_images, d.train_labels, d.limit, d.num_classes)
        test = load_idx(d.test_images, d.test_labels, None, d.num_classes)
        return train, test
    mix_seed = derive_seed(cfg.seed, _TAG_DATA)
    train = gen_synthetic(d.num_classes, d.dim, d.n_train, d.separation, mix_seed)
    test = gen_synthetic(
        d.num_classes, d.dim, d.n_test, d.separation, mix_seed,
        sample_seed=derive_seed(cfg.seed, _TAG_TEST),
    )
    return train, test


def build_clients(cfg: ExperimentConfig, train: Dataset) -> list[ClientRecord]:
    spec = PartitionSpec(cfg.num_clients, cfg.partition.skew, derive_seed(cfg.seed, _TAG_PARTITION))
    return [
        ClientRecord(i, part, cfg.attack_for(i))
        for i, part in enumerate(partition_noniid(train, spec))
    ]


def run_experiment(cfg: ExperimentConfig, *, workers: int = 1) -> ExperimentResult:
    train, test = build_data(cfg)
    clients = build_clients(cfg, train)
    arch = model.ModelArch(train.dim, train.num_classes, cfg.train.hidden_dim)
    return simulate(
        arch,
        clients,
        test,
        rounds=cfg.rounds,
        seed=cfg.seed,
        rule=cfg.rule,
        train=cfg.train,
        detector=cfg.detector,
        size_weighted_ltd=cfg.size_weighted_ltd,
        participation=cfg.participation,
        workers=workers,
    )
