"""Linear (logistic regression) and two-layer MLP probes over frozen embeddings.

Both are plain numpy, seeded and single-threaded in their own logic, so
refitting with the same data and seed reproduces the weights bit for bit.
"""

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import binary_targets, check_embeddings


class _ProbeMixin(ClassifierMixin):
    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return self.classes_[(self.decision_function(X) > 0).astype(int)]

    def score_samples(self, X):
        """Probability of the positive class (``classes_[1]``)."""
        return expit(self.decision_function(X))


class LinearProbe(_ProbeMixin, BaseEstimator):
    """L2-regularised logistic regression fit by full-batch gradient descent.

    Minimises ``mean(logloss) + reg_lambda / 2 * ||w||^2`` from a zero start,
    so the fit does not depend on ``seed``; the parameter is kept so every
    probe shares one signature.
    """

    def __init__(self, reg_lambda=1e-4, learning_rate=0.1, n_steps=500, seed=0):
        self.reg_lambda = reg_lambda
        self.learning_rate = learning_rate
        self.n_steps = n_steps
        self.seed = seed

    def fit(self, X, y):
        X, y = check_embeddings(X, y)
        self.classes_, t = binary_targets(y)
        n, d = X.shape
        w = np.zeros(d)
        b = 0.0
        for _ in range(self.n_steps):
            residual = expit(X @ w + b) - t
            w -= self.learning_rate * (X.T @ residual / n + self.reg_lambda * w)
            b -= self.learning_rate * residual.mean()
        self.coef_ = w
        self.intercept_ = b
        self.n_features_in_ = d
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        return check_embeddings(X) @ self.coef_ + self.intercept_


class MLPProbe(_ProbeMixin, BaseEstimator):
    """D -> hidden (ReLU) -> 1 (sigmoid), trained with Adam on seeded mini-batches."""

    def __init__(self, hidden_dim=128, epochs=200, learning_rate=0.01, batch_size=32, seed=0):
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, X, y):
        X, y = check_embeddings(X, y)
        self.classes_, t = binary_targets(y)
        n, d = X.shape
        rng = np.random.default_rng(self.seed)
        h = self.hidden_dim
        params = [
            rng.normal(0.0, np.sqrt(2.0 / d), size=(d, h)),  # He init for the ReLU layer
            np.zeros(h),
            rng.normal(0.0, np.sqrt(1.0 / h), size=h),
            np.zeros(1),
        ]
        m = [np.zeros_like(p) for p in params]
        v = [np.zeros_like(p) for p in params]
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        step = 0
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                idx = order[start : start + self.batch_size]
                grads = self._gradients(params, X[idx], t[idx])
                step += 1
                for i, g in enumerate(grads):
                    m[i] = beta1 * m[i] + (1 - beta1) * g
                    v[i] = beta2 * v[i] + (1 - beta2) * g * g
                    m_hat = m[i] / (1 - beta1**step)
                    v_hat = v[i] / (1 - beta2**step)
                    params[i] = params[i] - self.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        self.W1_, self.b1_, self.w2_, self.b2_ = params
        self.n_features_in_ = d
        return self

    @staticmethod
    def _gradients(params, X, t):
        W1, b1, w2, b2 = params
        pre = X @ W1 + b1
        hidden = np.maximum(pre, 0.0)
        p = expit(hidden @ w2 + b2[0])
        dz = (p - t) / len(t)  # d(mean BCE)/d logit
        dhidden = np.outer(dz, w2) * (pre > 0)
        return [X.T @ dhidden, dhidden.sum(axis=0), hidden.T @ dz, np.array([dz.sum()])]

    def decision_function(self, X):
        check_is_fitted(self, "W1_")
        X = check_embeddings(X)
        return np.maximum(X @ self.W1_ + self.b1_, 0.0) @ self.w2_ + self.b2_[0]


PROBES = {"linear": LinearProbe, "mlp2": MLPProbe}


def make_probe(kind: str, seed: int = 0, **params):
    try:
        cls = PROBES[kind]
    except KeyError:
        raise ValueError(f"unknown probe kind {kind!r}; choose from {sorted(PROBES)}") from None
    return cls(seed=seed, **params)


def train_linear_probe(X, y, reg_lambda=1e-4, seed=0, **params):
    """Fit a LinearProbe; ``.score_samples`` maps embeddings to probabilities."""
    return LinearProbe(reg_lambda=reg_lambda, seed=seed, **params).fit(X, y)


def train_mlp_probe(X, y, hidden_dim=128, seed=0, **params):
    return MLPProbe(hidden_dim=hidden_dim, seed=seed, **params).fit(X, y)
