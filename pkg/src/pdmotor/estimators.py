"""Scikit-learn style estimators over the window classifier.

`MotorStateCnn` is the single-network classifier; the three ensemble
estimators mirror the evaluated ensemble variants: members trained on
different patient subsets (sub-bagging), members that are dropout
variants of one trained network, and members differing only in their
initialization seed. All follow the fit/predict/get_params protocol, so
they compose with sklearn model-selection tooling; X is an array of
one-minute windows with shape (n, 3600, 3) and y holds class codes
OFF=0, ON=1, DYS=2.
"""

import logging

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from . import aggregation as agg
from . import network
from .dataset import eligible_models, sample_patient_subsets
from .engine import softmax
from .errors import InsufficientDataError, PdmotorError
from .network import NetConfig, PAPER_CHANNELS
from .states import N_STATES
from .validation import check_labels, check_window_array

logger = logging.getLogger(__name__)


class MotorStateCnn(ClassifierMixin, BaseEstimator):
    """The 7-layer strided CNN as a classifier.

    width_scale divides the published channel counts
    (64-128-256-512-1024-1024-1024) for desk-scale runs.
    """

    def __init__(self, width_scale=16, epochs=40, batch_size=32, lr=0.001, seed=0):
        self.width_scale = width_scale
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed

    def _config(self) -> NetConfig:
        return NetConfig(
            channels=PAPER_CHANNELS,
            width_scale=self.width_scale,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            seed=self.seed,
        )

    def fit(self, X, y):
        X = check_window_array(X)
        y = check_labels(y, X.shape[0])
        params = network.build(self._config())
        self.network_, self.trace_ = network.train(params, X, y)
        self.classes_ = np.arange(N_STATES)
        return self

    def decision_function(self, X):
        """Pre-softmax logits, shape (n, 3)."""
        _, logits, _ = network.predict(self.network_, X)
        return logits

    def predict_proba(self, X):
        _, _, probs = network.predict(self.network_, X)
        return probs

    def predict(self, X):
        labels, _, _ = network.predict(self.network_, X)
        return labels


class _EnsembleBase(ClassifierMixin, BaseEstimator):
    """Shared prediction machinery; subclasses fill self.members_."""

    aggregation = agg.MAJORITY

    def member_logits(self, X, members=None):
        """Per-member logits, shape (n_members, n, 3)."""
        X = check_window_array(X)
        pool = self.members_ if members is None else [self.members_[i] for i in members]
        return np.stack([network.predict(m, X)[1] for m in pool])

    def predict(self, X, members=None):
        logits = self.member_logits(X, members=members)
        return np.array(
            [
                agg.aggregate(logits[:, i, :], mode=self.aggregation).aggregated_label
                for i in range(logits.shape[1])
            ],
            dtype=np.int64,
        )

    def predict_proba(self, X, members=None):
        logits = self.member_logits(X, members=members)
        return softmax(logits).mean(axis=0)


class PatientSubsetEnsemble(_EnsembleBase):
    """Sub-bagging over patients: each member trains on the windows of a
    random patient subset; members are independently seeded.

    fit requires `groups` (per-window patient ids). For leave-one-subject-
    out evaluation, predict with members=eligible_members(test_patient) so
    no member saw the test patient.
    """

    def __init__(
        self,
        n_members=100,
        subset_size=15,
        aggregation=agg.MAJORITY,
        width_scale=16,
        epochs=40,
        batch_size=32,
        lr=0.001,
        seed=0,
    ):
        self.n_members = n_members
        self.subset_size = subset_size
        self.aggregation = aggregation
        self.width_scale = width_scale
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed

    def fit(self, X, y, groups=None):
        if groups is None:
            raise InsufficientDataError("PatientSubsetEnsemble.fit needs per-window patient groups")
        X = check_window_array(X)
        y = check_labels(y, X.shape[0])
        groups = np.asarray(groups)
        patients = sorted(set(groups.tolist()))
        drawn = sample_patient_subsets(
            patients, subset_size=self.subset_size, count=self.n_members, seed=self.seed
        )
        # a member that fails to train is excluded and logged, not fatal
        self.subsets_, self.members_, self.failed_members_ = [], [], []
        for idx, subset in enumerate(drawn):
            mask = np.isin(groups, list(subset))
            cfg = NetConfig(
                width_scale=self.width_scale,
                epochs=self.epochs,
                batch_size=self.batch_size,
                lr=self.lr,
                seed=self.seed + idx,
            )
            try:
                params = network.build(cfg)
                params, _ = network.train(params, X[mask], y[mask])
            except PdmotorError as exc:
                logger.warning("ensemble member %d on %s failed: %s", idx, subset, exc)
                self.failed_members_.append(idx)
                continue
            self.subsets_.append(subset)
            self.members_.append(params)
        if not self.members_:
            raise InsufficientDataError("every ensemble member failed to train")
        self.classes_ = np.arange(N_STATES)
        return self

    def eligible_members(self, test_patient):
        return eligible_models(self.subsets_, test_patient)


class DropoutEnsemble(_EnsembleBase):
    """Differently-connected variants of one trained network.

    Each member zeroes a fresh seeded mask over the convolution kernels
    and the head weight (drop_fraction of the entries), fixed per member
    and applied at inference only.
    """

    def __init__(
        self,
        base: MotorStateCnn | None = None,
        drop_fraction=0.3,
        n_members=50,
        aggregation=agg.MAJORITY,
        seed=0,
    ):
        self.base = base
        self.drop_fraction = drop_fraction
        self.n_members = n_members
        self.aggregation = aggregation
        self.seed = seed

    def fit(self, X, y):
        base = self.base if self.base is not None else MotorStateCnn()
        if not hasattr(base, "network_"):
            base.fit(X, y)
        self.base_network_ = base.network_
        self.members_ = [
            self._masked_member(self.base_network_, self.seed + i)
            for i in range(self.n_members)
        ]
        self.classes_ = np.arange(N_STATES)
        return self

    def _masked_member(self, base_params, seed):
        rng = np.random.default_rng(seed)
        member = network.clone_params(base_params)
        for layer in member.layers:
            keep = rng.random(layer.kernel.shape) >= self.drop_fraction
            layer.kernel *= keep
        keep = rng.random(member.head_weight.shape) >= self.drop_fraction
        member.head_weight *= keep
        return member


class DiffInitEnsemble(_EnsembleBase):
    """Members trained on the same data from different initializations
    (seeds base_seed .. base_seed + n_members - 1)."""

    def __init__(
        self,
        n_members=50,
        aggregation=agg.MAJORITY,
        width_scale=16,
        epochs=40,
        batch_size=32,
        lr=0.001,
        seed=0,
    ):
        self.n_members = n_members
        self.aggregation = aggregation
        self.width_scale = width_scale
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed

    def fit(self, X, y):
        X = check_window_array(X)
        y = check_labels(y, X.shape[0])
        self.members_ = []
        for i in range(self.n_members):
            cfg = NetConfig(
                width_scale=self.width_scale,
                epochs=self.epochs,
                batch_size=self.batch_size,
                lr=self.lr,
                seed=self.seed + i,
            )
            params = network.build(cfg)
            params, _ = network.train(params, X, y)
            self.members_.append(params)
        self.classes_ = np.arange(N_STATES)
        return self
