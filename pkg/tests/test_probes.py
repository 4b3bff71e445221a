import numpy as np
import pytest
from sklearn.base import clone
from sklearn.model_selection import train_test_split

from wsiembed.analytics import LinearProbe, MLPProbe, make_probe, roc_auc, train_linear_probe, train_mlp_probe
from wsiembed.analytics.synthetic import random_labels, separable_blobs, xor_clusters
from wsiembed.errors import NonFiniteInput, SingleClass


def held_out_auc(probe, X, y, seed=0):
    Xtr, Xte, ytr, yte = train_test_split(X, y, test_size=0.3, stratify=y, random_state=seed)
    return roc_auc(probe.fit(Xtr, ytr).score_samples(Xte), yte)


def test_linear_on_separable_blobs():
    X, y = separable_blobs(200, 384, seed=7)
    assert held_out_auc(LinearProbe(), X, y) >= 0.99


def test_linear_on_random_labels_is_chance():
    X, y = random_labels(200, 384, seed=7)
    assert 0.35 <= held_out_auc(LinearProbe(), X, y) <= 0.65


def test_duplicated_training_set_same_decision_function():
    X, y = separable_blobs(120, 64, seed=3)
    a = train_linear_probe(X, y)
    b = train_linear_probe(np.vstack([X, X]), np.concatenate([y, y]))
    assert np.allclose(a.decision_function(X), b.decision_function(X), rtol=0, atol=1e-9)


def test_linear_gradient_step_matches_closed_form():
    # after one step from zero the weights are -lr * X^T (0.5 - t) / n
    X, y = separable_blobs(50, 8, seed=1)
    probe = LinearProbe(n_steps=1, learning_rate=0.1).fit(X, y)
    t = y.astype(float)
    assert np.allclose(probe.coef_, -0.1 * X.T @ (0.5 - t) / len(t))
    assert np.isclose(probe.intercept_, -0.1 * np.mean(0.5 - t))


def _mlp_loss(params, X, t):
    W1, b1, w2, b2 = params
    z = np.maximum(X @ W1 + b1, 0) @ w2 + b2[0]
    return np.mean(np.logaddexp(0, z) - t * z)


def test_mlp_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(12, 5))
    t = (rng.random(12) > 0.5).astype(float)
    params = [rng.normal(size=(5, 4)), rng.normal(size=4), rng.normal(size=4), rng.normal(size=1)]
    grads = MLPProbe._gradients(params, X, t)
    eps = 1e-6
    for p, g in zip(params, grads):
        flat = p.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = _mlp_loss(params, X, t)
            flat[i] = old - eps
            down = _mlp_loss(params, X, t)
            flat[i] = old
            assert abs((up - down) / (2 * eps) - g.reshape(-1)[i]) < 1e-6


def test_mlp_solves_xor_where_linear_cannot():
    X, y = xor_clusters(400, 16, seed=7)
    lin = held_out_auc(LinearProbe(), X, y)
    mlp = held_out_auc(MLPProbe(seed=0), X, y)
    assert lin <= 0.6
    assert mlp >= 0.9


def test_mlp_on_separable_blobs():
    X, y = separable_blobs(200, 384, seed=7)
    assert held_out_auc(MLPProbe(epochs=50), X, y) >= 0.99


def test_mlp_same_seed_same_weights():
    X, y = xor_clusters(100, 8, seed=1)
    a = train_mlp_probe(X, y, seed=4, epochs=20)
    b = train_mlp_probe(X, y, seed=4, epochs=20)
    c = train_mlp_probe(X, y, seed=5, epochs=20)
    assert a.W1_.tobytes() == b.W1_.tobytes() and a.w2_.tobytes() == b.w2_.tobytes()
    assert a.W1_.tobytes() != c.W1_.tobytes()


def test_linear_reproducible():
    X, y = separable_blobs(80, 32, seed=2)
    assert train_linear_probe(X, y).coef_.tobytes() == train_linear_probe(X, y).coef_.tobytes()


@pytest.mark.parametrize("cls", [LinearProbe, MLPProbe])
def test_errors(cls):
    X = np.ones((4, 3))
    with pytest.raises(SingleClass):
        cls().fit(X, [1, 1, 1, 1])
    bad = X.copy()
    bad[0, 0] = np.inf
    with pytest.raises(NonFiniteInput):
        cls().fit(bad, [0, 1, 0, 1])


def test_string_labels_and_estimator_api():
    X, y = separable_blobs(60, 8, seed=0)
    names = np.where(y == 1, "tumour", "normal")
    probe = clone(make_probe("linear", seed=1)).fit(X, names)
    assert list(probe.classes_) == ["normal", "tumour"]
    assert probe.score(X, names) > 0.9
    assert probe.predict_proba(X).shape == (60, 2)
    assert set(MLPProbe().get_params()) == {"hidden_dim", "epochs", "learning_rate", "batch_size", "seed"}
    with pytest.raises(ValueError):
        make_probe("svm")
