"""scikit-learn style wrappers around PC and backprop training."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import model
from .data import Dataset, one_hot
from .inference import InferenceConfig, analytic_dln_inference, run_inference
from .learning import TrainConfig, train
from .model import Batch, NetworkSpec
from .numerics import Rng


class _PCNetwork(BaseEstimator, TransformerMixin):
    """Shared fitting logic; ``transform`` returns the last hidden activity."""

    def __init__(
        self,
        hidden_width: int = 64,
        n_hidden: int = 2,
        activation: str = "linear",
        parameterisation: str = "SP",
        resnet: bool = False,
        algorithm: str = "pc",
        epochs: int = 10,
        batch_size: int = 64,
        lr: float = 1e-3,
        optimiser: str = "adam",
        inference_step_size: float = 0.1,
        inference_steps: int = 20,
        analytic_inference: bool = False,
        random_state: int = 0,
    ):
        self.hidden_width = hidden_width
        self.n_hidden = n_hidden
        self.activation = activation
        self.parameterisation = parameterisation
        self.resnet = resnet
        self.algorithm = algorithm
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.optimiser = optimiser
        self.inference_step_size = inference_step_size
        self.inference_steps = inference_steps
        self.analytic_inference = analytic_inference
        self.random_state = random_state

    def _fit_targets(self, X: np.ndarray, Y: np.ndarray):
        widths = [X.shape[1]] + [self.hidden_width] * self.n_hidden + [Y.shape[1]]
        self.spec_ = NetworkSpec.create(widths, self.activation, self.parameterisation, resnet=self.resnet)
        cfg = TrainConfig(
            algorithm=self.algorithm,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            optimiser=self.optimiser,
            inference=InferenceConfig("gd", self.inference_step_size, self.inference_steps),
            analytic_inference=self.analytic_inference,
            eval_period=0,
            seed=self.random_state,
        )
        rng = Rng(self.random_state)
        weights = model.init_weights(self.spec_, rng.child(0))
        self.weights_, rows = train(self.spec_, weights, Dataset(X, Y), cfg, rng.child(1))
        self.loss_curve_ = [r["loss"] for r in rows if r["split"] == "train"]
        self.n_features_in_ = X.shape[1]
        return self

    def _output(self, X) -> np.ndarray:
        check_is_fitted(self, "weights_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return model.forward(self.spec_, self.weights_, X)[1]

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "weights_")
        X = check_array(X)
        hidden, _ = model.forward(self.spec_, self.weights_, X)
        return hidden[-1] if hidden else X

    def infer_activities(self, X, Y) -> list[np.ndarray]:
        """Equilibrium hidden activities with both ends clamped."""
        check_is_fitted(self, "weights_")
        X, Y = check_array(X), check_array(Y)
        batch = Batch(X, Y)
        if self.analytic_inference:
            return analytic_dln_inference(self.spec_, self.weights_, batch)
        z0, _ = model.forward(self.spec_, self.weights_, X)
        z, _ = run_inference(
            self.spec_, self.weights_, z0, batch, InferenceConfig("gd", self.inference_step_size, self.inference_steps)
        )
        return z


class PCRegressor(RegressorMixin, _PCNetwork):
    """Multi-output regressor trained with predictive coding (or backprop)."""

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        self._single_output = y.ndim == 1
        return self._fit_targets(X, y.reshape(len(y), -1).astype(float))

    def predict(self, X) -> np.ndarray:
        out = self._output(X)
        return out[:, 0] if self._single_output else out


class PCClassifier(ClassifierMixin, _PCNetwork):
    """Classifier on one-hot MSE targets; predicts the argmax output."""

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        return self._fit_targets(X, one_hot(encoded, len(self.classes_)))

    def decision_function(self, X) -> np.ndarray:
        return self._output(X)

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self._output(X), axis=1)]
