"""scikit-learn compatible wrappers.

``SoftmaxRegression`` trains the local model centrally; ``FederatedClassifier``
splits its training data across simulated clients and trains with FedAvg or
FL-LTD aggregation, so either can sit in a Pipeline or a grid search.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import model
from .adversary import AttackSpec
from .config import TrainConfig
from .data import Dataset, PartitionSpec, partition_noniid
from .detection import DetectorConfig
from .federation import ClientRecord, derive_seed, simulate


class _ParamClassifier(ClassifierMixin, BaseEstimator):
    def _encode(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes to fit a classifier")
        self.n_features_in_ = X.shape[1]
        self.arch_ = model.ModelArch(X.shape[1], len(self.classes_), self.hidden_dim)
        return X, y_enc

    def _features(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but {type(self).__name__} "
                f"was fitted with {self.n_features_in_}"
            )
        return X

    def predict_proba(self, X):
        return model.predict_proba(self.arch_, self.params_, self._features(X))

    def decision_function(self, X):
        return model.logits(self.arch_, self.params_, self._features(X))

    def predict(self, X):
        X = self._features(X)
        return self.classes_[model.predict(self.arch_, self.params_, X)]


class SoftmaxRegression(_ParamClassifier):
    """Mini-batch SGD on mean cross-entropy; ``hidden_dim > 0`` adds a ReLU layer."""

    def __init__(self, hidden_dim=0, lr=0.2, batch_size=10, epochs=20, random_state=0):
        self.hidden_dim = hidden_dim
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.random_state = random_state

    def fit(self, X, y):
        X, y = self._encode(X, y)
        data = model.Batch(X, y)
        seed = int(self.random_state or 0)
        w = model.init_params(self.arch_, derive_seed(seed, 0))
        self.loss_curve_ = []
        for epoch in range(self.epochs):
            w, avg = model.sgd_epoch(self.arch_, w, data, self.lr, self.batch_size, derive_seed(seed, 1, epoch))
            self.loss_curve_.append(avg)
        self.params_ = w
        return self


class FederatedClassifier(_ParamClassifier):
    """Simulated federated training over a non-IID split of ``X``.

    ``attacks`` maps client id to an :class:`AttackSpec`. After ``fit``,
    ``history_`` holds one :class:`RoundReport` per round and ``params_`` the
    final global model. ``eval_set=(X_val, y_val)`` in ``fit`` sets the data
    used for the per-round accuracy; the training data is used otherwise.
    """

    def __init__(
        self,
        rule="fl_ltd",
        num_clients=5,
        rounds=20,
        skew=0.8,
        hidden_dim=0,
        lr=0.2,
        batch_size=10,
        tau_low=0.01,
        tau_high=0.5,
        loss_min=0.3,
        epsilon=1e-8,
        memory_rounds=3,
        alpha_low=0.1,
        warmup_rounds=2,
        attacks=None,
        size_weighted_ltd=False,
        random_state=0,
        n_jobs=1,
    ):
        self.rule = rule
        self.num_clients = num_clients
        self.rounds = rounds
        self.skew = skew
        self.hidden_dim = hidden_dim
        self.lr = lr
        self.batch_size = batch_size
        self.tau_low = tau_low
        self.tau_high = tau_high
        self.loss_min = loss_min
        self.epsilon = epsilon
        self.memory_rounds = memory_rounds
        self.alpha_low = alpha_low
        self.warmup_rounds = warmup_rounds
        self.attacks = attacks
        self.size_weighted_ltd = size_weighted_ltd
        self.random_state = random_state
        self.n_jobs = n_jobs

    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(
            tau_low=self.tau_low,
            tau_high=self.tau_high,
            loss_min=self.loss_min,
            epsilon=self.epsilon,
            memory_rounds=self.memory_rounds,
            alpha_low=self.alpha_low,
            warmup_rounds=self.warmup_rounds,
        )

    def fit(self, X, y, eval_set=None):
        X, y = self._encode(X, y)
        k = len(self.classes_)
        seed = int(self.random_state or 0)
        train = Dataset(X, y, k)
        if eval_set is None:
            test = train
        else:
            Xv = check_array(eval_set[0], dtype=np.float64)
            yv = np.searchsorted(self.classes_, np.asarray(eval_set[1]))
            test = Dataset(Xv, yv, k)
        attacks = dict(self.attacks or {})
        bad = [c for c in attacks if not 0 <= c < self.num_clients]
        if bad:
            raise ValueError(f"attacks reference unknown clients {bad}")
        parts = partition_noniid(train, PartitionSpec(self.num_clients, self.skew, derive_seed(seed, 2)))
        clients = [ClientRecord(i, p, attacks.get(i, AttackSpec())) for i, p in enumerate(parts)]
        result = simulate(
            self.arch_,
            clients,
            test,
            rounds=self.rounds,
            seed=seed,
            rule=self.rule,
            train=TrainConfig(self.lr, self.batch_size, self.hidden_dim),
            detector=self.detector_config(),
            size_weighted_ltd=self.size_weighted_ltd,
            workers=self.n_jobs,
        )
        self.history_ = result.reports
        self.params_ = result.final_params
        return self
