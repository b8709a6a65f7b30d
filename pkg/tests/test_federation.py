import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flltd import model
from flltd.adversary import AttackSpec
from flltd.config import AttackEntry, DataConfig, ExperimentConfig, TrainConfig
from flltd.data import gen_synthetic
from flltd.detection import DetectorConfig, LossTrendDetector
from flltd.federation import (
    _TAG_CLIENT,
    ClientRecord,
    ServerState,
    aggregate_fedavg,
    aggregate_ltd,
    client_update,
    derive_seed,
    run_experiment,
    run_round,
    simulate,
)

SMALL = ExperimentConfig(
    rounds=6,
    data=DataConfig(num_classes=4, dim=4, n_train=200, n_test=80),
    attacks=(),
)


@pytest.fixture
def toy():
    data = gen_synthetic(3, 4, 90, 3.0, seed=0)
    arch = model.ModelArch(4, 3)
    return arch, data


def test_client_update_zero_lr(toy):
    arch, data = toy
    w = model.init_params(arch, 0)
    delta, rep, true = client_update(arch, w, ClientRecord(0, data), TrainConfig(lr=0.0), 1, 5)
    assert np.all(delta == 0)
    assert rep == true


def test_client_update_attack_is_scaled_honest(toy):
    arch, data = toy
    w = model.init_params(arch, 0)
    honest = client_update(arch, w, ClientRecord(0, data), TrainConfig(), 3, 11)
    bad = client_update(
        arch, w, ClientRecord(0, data, AttackSpec("update_scale", 1, -10.0)), TrainConfig(), 3, 11
    )
    np.testing.assert_array_equal(bad[0], -10 * honest[0])
    assert bad[2] == honest[2]


def test_client_update_deterministic(toy):
    arch, data = toy
    w = model.init_params(arch, 0)
    a = client_update(arch, w, ClientRecord(1, data), TrainConfig(), 2, 7)
    b = client_update(arch, w, ClientRecord(1, data), TrainConfig(), 2, 7)
    assert a[0].tobytes() == b[0].tobytes() and a[1:] == b[1:]


def test_fedavg_examples():
    v = np.array([1.0, -2.0, 3.0])
    w = np.array([0.5, 0.5, -1.0])
    np.testing.assert_allclose(aggregate_fedavg([v, w], [5, 5]), (v + w) / 2)
    np.testing.assert_allclose(aggregate_fedavg([v, -3 * v], [3, 1]), 0, atol=1e-15)
    np.testing.assert_array_equal(aggregate_fedavg([v], [7]), v)
    with pytest.raises(ValueError):
        aggregate_fedavg([v, w], [1])
    with pytest.raises(ValueError):
        aggregate_fedavg([v, w], [1, 0])


def test_ltd_examples():
    v = np.array([1.0, -2.0, 3.0])
    w = np.array([0.5, 0.5, -1.0])
    np.testing.assert_allclose(aggregate_ltd([v, w], [1, 1]), (v + w) / 2)
    np.testing.assert_allclose(aggregate_ltd([v, w], [1, 0.1]), (v + 0.1 * w) / 1.1)
    with pytest.raises(ValueError):
        aggregate_ltd([v, w], [0, 0])


def test_ltd_limit_approaches_honest_mean():
    rng = np.random.default_rng(0)
    honest = list(rng.normal(size=(4, 5)))
    bad = 100 * rng.normal(size=5)
    target = np.mean(honest, axis=0)
    gaps = [
        np.linalg.norm(aggregate_ltd(honest + [bad], [1, 1, 1, 1, a]) - target)
        for a in (1e-1, 1e-3, 1e-6, 1e-9)
    ]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-6


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_aggregators_convex_and_fedavg_reduction(k, dim, seed):
    rng = np.random.default_rng(seed)
    deltas = rng.normal(scale=10, size=(k, dim))
    alphas = rng.uniform(0.05, 1.0, size=k)
    sizes = rng.integers(1, 100, size=k)
    for out in (aggregate_ltd(deltas, alphas), aggregate_fedavg(deltas, sizes)):
        assert np.all(out >= deltas.min(0) - 1e-9) and np.all(out <= deltas.max(0) + 1e-9)
    assert aggregate_ltd(deltas, np.ones(k)).tobytes() == aggregate_fedavg(deltas, [7] * k).tobytes()


def test_down_weighting_pulls_towards_honest_mean():
    rng = np.random.default_rng(1)
    honest = list(rng.normal(size=(4, 6)))
    d = rng.normal(size=6) * 20
    target = np.mean(honest, axis=0)
    low = np.linalg.norm(aggregate_ltd(honest + [d], [1, 1, 1, 1, 0.1]) - target)
    full = np.linalg.norm(aggregate_ltd(honest + [d], [1] * 5) - target)
    assert low < full


def make_server(arch, rule, detector=None):
    return ServerState(
        arch=arch,
        global_params=model.init_params(arch, 0),
        rule=rule,
        detector=LossTrendDetector(detector or DetectorConfig()),
    )


def honest_clients(n=4):
    data = gen_synthetic(3, 4, 40 * n, 3.0, seed=0)
    return [ClientRecord(i, data.subset(np.arange(i, 40 * n, n))) for i in range(n)]


def test_run_round_requires_clients(toy):
    arch, data = toy
    with pytest.raises(ValueError):
        run_round(make_server(arch, "fl_ltd"), [], 0, data)


def test_ltd_equals_fedavg_when_all_trusted(toy):
    arch, test = toy
    clients = honest_clients()
    ltd, avg = make_server(arch, "fl_ltd"), make_server(arch, "fedavg")
    for _ in range(5):
        ltd, rep = run_round(ltd, clients, 3, test)
        avg, _ = run_round(avg, clients, 3, test)
        assert all(c.alpha == 1.0 for c in rep.clients)
        assert ltd.global_params.tobytes() == avg.global_params.tobytes()


def test_spike_attacker_flagged_at_attack_round(toy):
    arch, test = toy
    clients = honest_clients()
    clients[2] = ClientRecord(2, clients[2].data, AttackSpec("loss_spike", 4, 5.0))
    server = make_server(arch, "fl_ltd")
    for t in range(1, 6):
        server, rep = run_round(server, clients, 0, test)
        if t == 4:
            assert [c.client_id for c in rep.clients if c.flagged] == [2]
            assert rep.client(2).alpha == 0.1


def test_fedavg_records_detection_but_ignores_it(toy):
    arch, test = toy
    clients = honest_clients()
    clients[0] = ClientRecord(0, clients[0].data, AttackSpec("loss_spike", 3, 5.0))
    server = make_server(arch, "fedavg")
    reps = []
    for _ in range(3):
        before = server.global_params.copy()
        server, rep = run_round(server, clients, 0, test)
        reps.append(rep)
    assert reps[2].client(0).flagged
    # recompute the plain size-weighted step from the same state
    deltas = [client_update(arch, before, c, server.train, 3, derive_seed(0, _TAG_CLIENT, c.id, 3))[0] for c in clients]
    np.testing.assert_allclose(server.global_params, before + aggregate_fedavg(deltas, [c.size for c in clients]))


def test_size_weighted_ltd(toy):
    arch, test = toy
    data = gen_synthetic(3, 4, 90, 3.0, seed=1)
    clients = [ClientRecord(0, data.subset(np.arange(60))), ClientRecord(1, data.subset(np.arange(60, 90)))]
    a, b = make_server(arch, "fl_ltd"), make_server(arch, "fedavg")
    a.size_weighted_ltd = True
    a, _ = run_round(a, clients, 0, test)
    b, _ = run_round(b, clients, 0, test)
    np.testing.assert_allclose(a.global_params, b.global_params, atol=1e-14)


def test_partial_participation(toy):
    arch, test = toy
    server = make_server(arch, "fl_ltd")
    server.participation = 0.5
    server, rep = run_round(server, honest_clients(4), 0, test)
    assert len(rep.clients) == 2


def test_run_experiment_zero_rounds():
    res = run_experiment(SMALL.replace(rounds=0))
    assert len(res) == 0
    np.testing.assert_array_equal(res.final_params, res.initial_params)
    assert res.final_accuracy == res.initial_accuracy


def test_run_experiment_deterministic_across_workers():
    cfg = SMALL.replace(attacks=(AttackEntry(1, AttackSpec.coupled_default(3)),))
    a = run_experiment(cfg)
    b = run_experiment(cfg, workers=4)
    assert len(a) == 6
    for ra, rb in zip(a, b):
        assert ra.global_params.tobytes() == rb.global_params.tobytes()
        assert ra.clients == rb.clients


def test_no_exclusion_under_ltd():
    cfg = SMALL.replace(rounds=10, attacks=(AttackEntry(0, AttackSpec.coupled_default(3)),))
    for rep in run_experiment(cfg):
        assert len(rep.clients) == cfg.num_clients
        assert all(c.alpha >= cfg.detector.alpha_low > 0 for c in rep.clients)
        assert all((c.alpha == 1.0) == (c.memory == 0) for c in rep.clients)


def test_simulate_custom_init(toy):
    arch, test = toy
    init = np.zeros(arch.n_params)
    res = simulate(arch, honest_clients(), test, rounds=0, seed=0, init=init)
    assert res.initial_accuracy == model.evaluate(arch, init, test)


def test_derive_seed_stable():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert derive_seed(1, 2, 3) != derive_seed(1, 3, 2)
    assert 0 <= derive_seed(0) < 2**32
