"""scikit-learn style wrappers around the two training stages.

``X`` is a list of ``ForensicInstance``; ``predict`` also takes a raw
``(n, 18)`` feature matrix since decoding only needs features. Labels are
the strings ``"REAL"`` / ``"FAKE"``; a malformed decode predicts
``"ABSTAIN"``, which ``score`` counts as wrong.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import policy
from .env import N_FEATURES, ForensicInstance
from .rewards import RewardWeights
from .rgrpo import RgrpoConfig, train_rgrpo
from .sft import SftConfig, train_sft
from .vocab import LABELS


def check_instances(X) -> list[ForensicInstance]:
    """Validate a non-empty sequence of instances."""
    if isinstance(X, ForensicInstance):
        raise TypeError("expected a sequence of ForensicInstance, got a single instance")
    X = list(X)
    if not X:
        raise ValueError("need at least one instance")
    bad = [type(x).__name__ for x in X if not isinstance(x, ForensicInstance)]
    if bad:
        raise TypeError(f"expected ForensicInstance items, got {bad[0]}")
    return X


def check_features(X) -> np.ndarray:
    """Instances or an ``(n, 18)`` finite float matrix -> feature matrix."""
    if len(X) and isinstance(X[0], ForensicInstance):
        return np.stack([x.features for x in check_instances(X)])
    F = check_array(X, dtype=float, ensure_2d=True)
    if F.shape[1] != N_FEATURES:
        raise ValueError(f"expected {N_FEATURES} features, got {F.shape[1]}")
    return F


def check_labels(X: Sequence[ForensicInstance], y) -> None:
    """``y`` is optional; when given it must agree with the instances' truth."""
    if y is None:
        return
    y = np.asarray(y)
    if y.shape != (len(X),):
        raise ValueError(f"y has shape {y.shape}, expected ({len(X)},)")
    bad = set(y.tolist()) - set(LABELS)
    if bad:
        raise ValueError(f"unknown labels {sorted(bad)}")
    if any(a != x.label for a, x in zip(y, X)):
        raise ValueError("y disagrees with the instances' ground-truth labels")


class EvidenceFeaturizer(TransformerMixin, BaseEstimator):
    """Instances -> the (n, 18) evidence feature matrix. Stateless."""

    def fit(self, X, y=None):
        check_instances(X)
        self.n_features_out_ = N_FEATURES
        return self

    def transform(self, X):
        return check_features(check_instances(X))


class _TracePolicyClassifier(ClassifierMixin, BaseEstimator):
    max_len = policy.MAX_TRACE_LEN

    def _set_fitted(self, params):
        self.params_ = params
        self.classes_ = np.array(LABELS)
        self.n_features_in_ = N_FEATURES
        return self

    def decode(self, X) -> list[policy.Trajectory]:
        """Greedy trajectories (trace, answer, log-probs) per row."""
        check_is_fitted(self, "params_")
        return policy.greedy_decode_many(self.params_, check_features(X), self.max_len)

    def predict(self, X) -> np.ndarray:
        return np.array([t.answer for t in self.decode(X)], dtype=object)

    def score(self, X, y=None, sample_weight=None):
        """Accuracy; ``y`` defaults to the instances' own labels."""
        if y is None:
            X = check_instances(X)
            y = np.array([x.label for x in X], dtype=object)
        return super().score(X, y, sample_weight=sample_weight)

    def predict_proba(self, X) -> np.ndarray:
        """Answer-slot distribution over (REAL, FAKE) after the greedy think.

        Rows whose greedy decode never closes the think region get (0.5, 0.5).
        """
        check_is_fitted(self, "params_")
        F = check_features(X)
        out = np.full((len(F), 2), 0.5)
        for k, (f, traj) in enumerate(zip(F, policy.greedy_decode_many(self.params_, F, self.max_len))):
            try:
                out[k] = policy.answer_dist(self.params_, f, traj.trace)
            except ValueError:
                pass
        return out


class CoETuningClassifier(_TracePolicyClassifier):
    """Supervised tuning on gold evidence traces (think + answer losses)."""

    def __init__(self, alpha=0.5, eta=0.01, step_size=0.05, epochs=300, batch_size=0, random_state=0):
        self.alpha = alpha
        self.eta = eta
        self.step_size = step_size
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_instances(X)
        check_labels(X, y)
        config = SftConfig(alpha=self.alpha, eta=self.eta, step_size=self.step_size,
                           epochs=self.epochs, seed=int(self.random_state or 0),
                           batch_size=self.batch_size, acc_every=max(self.epochs, 1))
        self.history_ = []
        params = train_sft(X, config, lambda rec, p: self.history_.append(rec))
        return self._set_fitted(params)


class RGRPOClassifier(_TracePolicyClassifier):
    """Group-relative policy optimization on top of a tuned policy.

    ``init`` is a fitted ``CoETuningClassifier``, a parameter array, or None
    (tune with default settings on the same data first). ``lambda_t =
    lambda_v = 0`` gives plain GRPO.
    """

    def __init__(self, init=None, group_size=8, lambda_kl=0.01, lambda_s=1.0, lambda_t=0.5,
                 lambda_v=0.5, step_size=0.02, iterations=100, batch_size=32, sigma_floor=1e-8,
                 logic_direction="stability", judge=None, random_state=0):
        self.init = init
        self.group_size = group_size
        self.lambda_kl = lambda_kl
        self.lambda_s = lambda_s
        self.lambda_t = lambda_t
        self.lambda_v = lambda_v
        self.step_size = step_size
        self.iterations = iterations
        self.batch_size = batch_size
        self.sigma_floor = sigma_floor
        self.logic_direction = logic_direction
        self.judge = judge
        self.random_state = random_state

    def _init_params(self, X):
        if self.init is None:
            return CoETuningClassifier(random_state=self.random_state).fit(X).params_
        if isinstance(self.init, _TracePolicyClassifier):
            check_is_fitted(self.init, "params_")
            return self.init.params_
        return policy.check_params(self.init)

    def fit(self, X, y=None):
        X = check_instances(X)
        check_labels(X, y)
        config = RgrpoConfig(
            group_size=self.group_size, lambda_kl=self.lambda_kl,
            weights=RewardWeights(self.lambda_s, self.lambda_t, self.lambda_v),
            step_size=self.step_size, iterations=self.iterations, seed=int(self.random_state or 0),
            sigma_floor=self.sigma_floor, logic_direction=self.logic_direction,
            batch_size=self.batch_size,
        )
        self.history_ = []
        params = train_rgrpo(self._init_params(X), X, config, self.judge,
                             on_step=lambda rec, p: self.history_.append(rec))
        return self._set_fitted(params)
