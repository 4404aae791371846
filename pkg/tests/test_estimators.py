import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from coe_grpo import policy
from coe_grpo.estimators import (
    CoETuningClassifier, EvidenceFeaturizer, RGRPOClassifier, check_features, check_instances,
)


def test_params_api():
    est = CoETuningClassifier(alpha=0.3, epochs=5)
    assert est.get_params()["alpha"] == 0.3
    est.set_params(eta=0.5)
    c = clone(est)
    assert c.get_params() == est.get_params()
    r = RGRPOClassifier(lambda_t=0.0, lambda_v=0.0)
    assert clone(r).get_params()["lambda_t"] == 0.0


def test_fit_predict_score(small_set):
    est = CoETuningClassifier(epochs=60).fit(small_set)
    pred = est.predict(small_set)
    assert pred.shape == (20,) and set(pred) <= {"REAL", "FAKE", "ABSTAIN"}
    F = np.stack([i.features for i in small_set])
    assert (est.predict(F) == pred).all()
    y = [i.label for i in small_set]
    assert est.score(small_set, y) == np.mean(pred == np.array(y))
    proba = est.predict_proba(small_set)
    assert proba.shape == (20, 2) and np.allclose(proba.sum(1), 1)
    assert len(est.history_) == 60 and list(est.classes_) == ["REAL", "FAKE"]


def test_rgrpo_estimator_from_tuned(small_set):
    base = CoETuningClassifier(epochs=30).fit(small_set)
    est = RGRPOClassifier(init=base, iterations=2, batch_size=4).fit(small_set)
    assert est.params_.shape == base.params_.shape
    assert est.history_[0]["mode"] == "r-grpo"
    est2 = RGRPOClassifier(init=base.params_, iterations=2, batch_size=4).fit(small_set)
    assert np.array_equal(est.params_, est2.params_)


def test_not_fitted(small_set):
    with pytest.raises(NotFittedError):
        CoETuningClassifier().predict(small_set)


def test_validation(small_set):
    with pytest.raises(TypeError):
        check_instances(small_set[0])
    with pytest.raises(TypeError):
        check_instances([1, 2])
    with pytest.raises(ValueError):
        check_instances([])
    with pytest.raises(ValueError):
        check_features(np.zeros((3, 5)))
    with pytest.raises(ValueError):
        check_features(np.full((2, 18), np.nan))
    with pytest.raises(ValueError):
        CoETuningClassifier(epochs=1).fit(small_set, ["REAL"] * 20)  # disagrees with truth
    with pytest.raises(ValueError):
        CoETuningClassifier(epochs=1).fit(small_set, ["REAL"] * 3)


def test_featurizer(small_set):
    F = EvidenceFeaturizer().fit_transform(small_set)
    assert F.shape == (20, 18) and (F[:, -1] == 1).all()


def test_predict_proba_zero_params(small_set):
    est = CoETuningClassifier()._set_fitted(policy.zero_params())
    # uniform policy: greedy decode never closes the think region
    assert np.allclose(est.predict_proba(small_set), 0.5)


def test_score_defaults_to_instance_labels(small_set):
    clf = CoETuningClassifier(epochs=20).fit(small_set)
    y = [x.label for x in small_set]
    assert clf.score(small_set) == clf.score(small_set, y)
