import numpy as np
import pytest
from sklearn.base import clone

from pdmotor.errors import InsufficientDataError
from pdmotor.estimators import (
    DiffInitEnsemble,
    DropoutEnsemble,
    MotorStateCnn,
    PatientSubsetEnsemble,
)


@pytest.fixture(scope="module")
def tiny_xy():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(16, 3600, 3))
    y = rng.integers(0, 3, size=16)
    groups = np.repeat(["a", "b", "c", "d"], 4)
    return X, y, groups


FAST = dict(width_scale=256, epochs=2, batch_size=8, lr=0.001)


class TestSklearnProtocol:
    def test_get_params_round_trip(self):
        est = MotorStateCnn(width_scale=8, epochs=3, seed=9)
        params = est.get_params()
        assert params["width_scale"] == 8 and params["seed"] == 9
        dup = clone(est)
        assert dup.get_params() == params

    def test_set_params(self):
        est = MotorStateCnn().set_params(epochs=7)
        assert est.epochs == 7

    def test_ensemble_clone(self):
        est = PatientSubsetEnsemble(n_members=5, subset_size=2, seed=3)
        assert clone(est).get_params() == est.get_params()


class TestMotorStateCnn:
    def test_fit_predict_score(self, tiny_xy):
        X, y, _ = tiny_xy
        est = MotorStateCnn(seed=1, **FAST).fit(X, y)
        labels = est.predict(X)
        assert labels.shape == (16,)
        assert set(labels) <= {0, 1, 2}
        assert 0.0 <= est.score(X, y) <= 1.0
        assert np.array_equal(est.classes_, [0, 1, 2])

    def test_proba_and_logits(self, tiny_xy):
        X, y, _ = tiny_xy
        est = MotorStateCnn(seed=2, **FAST).fit(X, y)
        probs = est.predict_proba(X)
        logits = est.decision_function(X)
        assert probs.shape == logits.shape == (16, 3)
        assert np.allclose(probs.sum(axis=1), 1.0)
        assert np.array_equal(np.argmax(logits, axis=1), est.predict(X))


class TestPatientSubsetEnsemble:
    def test_requires_groups(self, tiny_xy):
        X, y, _ = tiny_xy
        with pytest.raises(InsufficientDataError):
            PatientSubsetEnsemble(n_members=2, subset_size=2).fit(X, y)

    def test_fit_and_subsets(self, tiny_xy):
        X, y, groups = tiny_xy
        est = PatientSubsetEnsemble(n_members=4, subset_size=2, seed=5, **FAST)
        est.fit(X, y, groups=groups)
        assert len(est.members_) == 4
        assert all(len(s) == 2 for s in est.subsets_)
        labels = est.predict(X)
        assert labels.shape == (16,)

    def test_seed_reproducibility(self, tiny_xy):
        X, y, groups = tiny_xy
        a = PatientSubsetEnsemble(n_members=3, subset_size=2, seed=7, **FAST).fit(X, y, groups=groups)
        b = PatientSubsetEnsemble(n_members=3, subset_size=2, seed=7, **FAST).fit(X, y, groups=groups)
        assert a.subsets_ == b.subsets_
        assert np.array_equal(a.member_logits(X[:4]), b.member_logits(X[:4]))

    def test_eligible_members_and_restricted_predict(self, tiny_xy):
        X, y, groups = tiny_xy
        est = PatientSubsetEnsemble(n_members=6, subset_size=2, seed=8, **FAST)
        est.fit(X, y, groups=groups)
        eligible = est.eligible_members("a")
        assert all("a" not in est.subsets_[i] for i in eligible)
        labels = est.predict(X[:4], members=eligible)
        assert labels.shape == (4,)

    def test_failed_member_excluded_and_logged(self, caplog):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(9, 3600, 3))
        y = rng.integers(0, 3, size=9)
        groups = np.array(["a"] * 4 + ["b"] * 4 + ["c"])  # "c" has 1 window
        est = PatientSubsetEnsemble(n_members=6, subset_size=1, seed=2, **FAST)
        with caplog.at_level("WARNING"):
            est.fit(X, y, groups=groups)
        assert est.failed_members_  # subsets of just "c" cannot train
        assert len(est.members_) == len(est.subsets_) == 6 - len(est.failed_members_)
        assert all("c" not in s for s in est.subsets_)
        assert any("failed" in r.message for r in caplog.records)

    def test_single_subset_degenerates_to_single_model(self, tiny_xy):
        X, y, groups = tiny_xy
        est = PatientSubsetEnsemble(n_members=1, subset_size=4, seed=9, **FAST)
        est.fit(X, y, groups=groups)
        single = MotorStateCnn(seed=9, **FAST).fit(X, y)
        assert np.allclose(est.member_logits(X[:4])[0], single.decision_function(X[:4]))


class TestDropoutEnsemble:
    def test_zero_drop_members_equal_base(self, tiny_xy):
        X, y, _ = tiny_xy
        base = MotorStateCnn(seed=3, **FAST).fit(X, y)
        est = DropoutEnsemble(base=base, drop_fraction=0.0, n_members=3, seed=1).fit(X, y)
        base_logits = base.decision_function(X[:4])
        member_logits = est.member_logits(X[:4])
        for m in range(3):
            assert np.allclose(member_logits[m], base_logits)

    def test_full_drop_gives_head_bias(self, tiny_xy):
        X, y, _ = tiny_xy
        base = MotorStateCnn(seed=4, **FAST).fit(X, y)
        est = DropoutEnsemble(base=base, drop_fraction=1.0, n_members=2, seed=2).fit(X, y)
        logits = est.member_logits(X[:3])
        for m in range(2):
            assert np.allclose(logits[m], base.network_.head_bias)

    def test_mask_reproducibility(self, tiny_xy):
        X, y, _ = tiny_xy
        base = MotorStateCnn(seed=5, **FAST).fit(X, y)
        a = DropoutEnsemble(base=base, drop_fraction=0.3, n_members=4, seed=6).fit(X, y)
        b = DropoutEnsemble(base=base, drop_fraction=0.3, n_members=4, seed=6).fit(X, y)
        assert np.array_equal(a.member_logits(X[:2]), b.member_logits(X[:2]))

    def test_members_differ(self, tiny_xy):
        X, y, _ = tiny_xy
        base = MotorStateCnn(seed=6, **FAST).fit(X, y)
        est = DropoutEnsemble(base=base, drop_fraction=0.3, n_members=2, seed=7).fit(X, y)
        logits = est.member_logits(X[:4])
        assert not np.allclose(logits[0], logits[1])


class TestDiffInitEnsemble:
    def test_count_one_is_single_model(self, tiny_xy):
        X, y, _ = tiny_xy
        est = DiffInitEnsemble(n_members=1, seed=11, **FAST).fit(X, y)
        single = MotorStateCnn(seed=11, **FAST).fit(X, y)
        assert np.allclose(est.member_logits(X[:4])[0], single.decision_function(X[:4]))

    def test_members_have_distinct_parameters(self, tiny_xy):
        X, y, _ = tiny_xy
        est = DiffInitEnsemble(n_members=2, seed=12, **FAST).fit(X, y)
        k0 = est.members_[0].layers[0].kernel
        k1 = est.members_[1].layers[0].kernel
        assert np.max(np.abs(k0 - k1)) > 0

    def test_reproducible(self, tiny_xy):
        X, y, _ = tiny_xy
        a = DiffInitEnsemble(n_members=2, seed=13, **FAST).fit(X, y)
        b = DiffInitEnsemble(n_members=2, seed=13, **FAST).fit(X, y)
        assert np.array_equal(a.member_logits(X[:2]), b.member_logits(X[:2]))
