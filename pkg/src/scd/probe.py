from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y


class LogisticProbe(ClassifierMixin, BaseEstimator):
    """Multinomial logistic regression fitted by full-batch gradient descent.

    Features are standardized with the training mean and std; ``l2`` penalizes
    the weight matrix (not the intercept).
    """

    def __init__(self, l2: float = 1e-3, n_steps: int = 500, learning_rate: float = 0.5):
        self.l2 = l2
        self.n_steps = n_steps
        self.learning_rate = learning_rate

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_ = unique_labels(y)
        if len(self.classes_) < 2:
            raise ValueError("the probe needs at least two classes")
        idx = np.searchsorted(self.classes_, y)
        self.mean_ = X.mean(axis=0)
        self.scale_ = X.std(axis=0)
        self.scale_[self.scale_ == 0] = 1.0
        Z = (X - self.mean_) / self.scale_
        n, d = Z.shape
        k = len(self.classes_)
        onehot = np.eye(k)[idx]
        W = np.zeros((d, k))
        b = np.zeros(k)
        for _ in range(self.n_steps):
            probs = _softmax(Z @ W + b)
            err = (probs - onehot) / n
            W -= self.learning_rate * (Z.T @ err + self.l2 * W)
            b -= self.learning_rate * err.sum(axis=0)
        self.coef_, self.intercept_ = W, b
        self.n_features_in_ = d
        return self

    def decision_function(self, X):
        check_is_fitted(self)
        X = check_array(X)
        return ((X - self.mean_) / self.scale_) @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        return _softmax(self.decision_function(X))

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)
