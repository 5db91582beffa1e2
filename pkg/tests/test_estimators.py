import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from pcbench.estimators import PCClassifier, PCRegressor


def blobs(n=120, seed=0):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 3, size=n)
    centres = np.array([[2.0, 0.0], [-2.0, 0.0], [0.0, 2.5]])
    return centres[labels] + 0.4 * rng.normal(size=(n, 2)), np.array(["a", "b", "c"])[labels]


def test_classifier_learns_separable_blobs():
    X, y = blobs()
    clf = PCClassifier(hidden_width=8, n_hidden=1, activation="tanh", epochs=30, lr=1e-2, batch_size=16).fit(X, y)
    assert clf.score(X, y) > 0.9
    assert set(clf.predict(X)) <= {"a", "b", "c"}
    assert clf.transform(X).shape == (120, 8)


def test_regressor_single_and_multi_output():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 3))
    y = X @ np.array([1.0, -0.5, 0.25])
    reg = PCRegressor(hidden_width=6, n_hidden=1, epochs=30, lr=1e-2, analytic_inference=True).fit(X, y)
    assert reg.predict(X).shape == (200,)
    assert reg.score(X, y) > 0.9
    multi = PCRegressor(hidden_width=4, n_hidden=1, epochs=2).fit(X, np.stack([y, -y], axis=1))
    assert multi.predict(X).shape == (200, 2)


def test_params_and_clone():
    reg = PCRegressor(lr=0.05, n_hidden=3)
    assert reg.get_params()["lr"] == 0.05
    assert clone(reg).set_params(lr=0.1).lr == 0.1


def test_validation_errors():
    with pytest.raises(NotFittedError):
        PCRegressor().predict(np.ones((2, 2)))
    reg = PCRegressor(epochs=1, hidden_width=2, n_hidden=1).fit(np.ones((4, 2)), np.ones(4))
    with pytest.raises(ValueError):
        reg.predict(np.ones((2, 3)))
    with pytest.raises(ValueError):
        PCRegressor().fit(np.array([[np.nan, 1.0]]), np.ones(1))


def test_inferred_activities_have_hidden_shapes():
    X, y = blobs(40)
    clf = PCClassifier(hidden_width=4, n_hidden=2, epochs=1).fit(X, y)
    Y = np.eye(3)[np.searchsorted(clf.classes_, y)]
    z = clf.infer_activities(X, Y)
    assert [a.shape for a in z] == [(40, 4), (40, 4)]
