import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import cross_val_score
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from flltd import AttackSpec, FederatedClassifier, SoftmaxRegression
from flltd.data import gen_synthetic


@pytest.fixture(scope="module")
def blobs():
    tr = gen_synthetic(4, 5, 400, 4.0, seed=0)
    te = gen_synthetic(4, 5, 200, 4.0, seed=0, sample_seed=1)
    return tr, te


def test_softmax_regression_fits(blobs):
    tr, te = blobs
    clf = SoftmaxRegression(epochs=10).fit(tr.features, tr.labels)
    assert clf.score(te.features, te.labels) > 0.85
    assert clf.loss_curve_[-1] < clf.loss_curve_[0]
    p = clf.predict_proba(te.features)
    np.testing.assert_allclose(p.sum(1), 1, atol=1e-9)


def test_string_labels_round_trip(blobs):
    tr, _ = blobs
    names = np.array(["ant", "bee", "cat", "dog"])[tr.labels]
    clf = SoftmaxRegression(epochs=3).fit(tr.features, names)
    assert set(clf.predict(tr.features)) <= set(names)
    assert list(clf.classes_) == ["ant", "bee", "cat", "dog"]


def test_get_params_clone_and_pipeline(blobs):
    tr, _ = blobs
    clf = FederatedClassifier(rounds=3, alpha_low=0.2)
    assert clf.get_params()["alpha_low"] == 0.2
    twin = clone(clf).set_params(rounds=2)
    assert twin.rounds == 2 and clf.rounds == 3
    pipe = make_pipeline(StandardScaler(), SoftmaxRegression(epochs=3))
    scores = cross_val_score(pipe, tr.features, tr.labels, cv=3)
    assert scores.mean() > 0.7


def test_unfitted_and_shape_errors(blobs):
    tr, _ = blobs
    with pytest.raises(NotFittedError):
        SoftmaxRegression().predict(tr.features)
    clf = SoftmaxRegression(epochs=1).fit(tr.features, tr.labels)
    with pytest.raises(ValueError):
        clf.predict(tr.features[:, :3])
    with pytest.raises(ValueError):
        SoftmaxRegression().fit(tr.features, np.zeros(len(tr)))


def test_federated_classifier_history(blobs):
    tr, te = blobs
    clf = FederatedClassifier(num_clients=4, rounds=5, random_state=1)
    clf.fit(tr.features, tr.labels, eval_set=(te.features, te.labels))
    assert len(clf.history_) == 5
    assert clf.history_[-1].test_accuracy == pytest.approx(clf.score(te.features, te.labels))
    assert all(len(r.clients) == 4 for r in clf.history_)


def test_federated_classifier_defense_helps(blobs):
    tr, te = blobs
    attack = {0: AttackSpec.coupled_default(start_round=3)}
    kw = dict(num_clients=4, rounds=10, random_state=0, attacks=attack)
    ltd = FederatedClassifier(rule="fl_ltd", **kw).fit(tr.features, tr.labels)
    avg = FederatedClassifier(rule="fedavg", **kw).fit(tr.features, tr.labels)
    assert ltd.history_[2].clients[0].flagged
    assert ltd.score(te.features, te.labels) > avg.score(te.features, te.labels)


def test_federated_classifier_rejects_bad_attack_ids(blobs):
    tr, _ = blobs
    with pytest.raises(ValueError):
        FederatedClassifier(num_clients=3, attacks={5: AttackSpec()}).fit(tr.features, tr.labels)
