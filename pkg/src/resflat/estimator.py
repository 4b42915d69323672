"""scikit-learn compatible wrapper around the residual CNN trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset
from .model import IMAGE_SIZE, ArchitectureSpec, forward, parameter_count
from .tensor import log_softmax
from .train import TrainConfig, evaluate, train


def _as_images(X, channels: int | None = None) -> np.ndarray:
    """Accept (n, C, 32, 32) arrays or their flattened (n, C*1024) form."""
    X = check_array(X, allow_nd=True, dtype=np.float64)
    if X.ndim == 2:
        if X.shape[1] % (IMAGE_SIZE * IMAGE_SIZE):
            raise ValueError(f"flat input width {X.shape[1]} is not a multiple of {IMAGE_SIZE ** 2}")
        X = X.reshape(X.shape[0], -1, IMAGE_SIZE, IMAGE_SIZE)
    if X.ndim != 4 or X.shape[2:] != (IMAGE_SIZE, IMAGE_SIZE):
        raise ValueError(f"expected images of shape (n, C, {IMAGE_SIZE}, {IMAGE_SIZE}), got {X.shape}")
    if channels is not None and X.shape[1] != channels:
        raise ValueError(f"X has {X.shape[1]} channels, estimator was fitted with {channels}")
    return X


class ResidualConvClassifier(ClassifierMixin, BaseEstimator):
    """Residual CNN classifier in either sequential or parallel layout.

    Parameters
    ----------
    depth, filters, kernel_size : int
        Number of residual conv layers, filters per layer and kernel side.
    activation : {"relu", "sigmoid"}
    variant : {"sequential", "parallel"}
    random_state : int
        Base seed for the SplitMix64 initializer.
    learning_rate, epochs, batch_size, rho, epsilon
        RMSprop settings.

    Labels must be class indices 0..9. ``history_`` holds per-epoch metrics
    measured on the training data and on ``validation_data`` when given to
    :meth:`fit` (otherwise the training data again).
    """

    def __init__(self, depth=1, filters=1, kernel_size=16, activation="relu",
                 variant="sequential", random_state=0, learning_rate=1e-4, epochs=1,
                 batch_size=512, rho=0.9, epsilon=1e-7):
        self.depth = depth
        self.filters = filters
        self.kernel_size = kernel_size
        self.activation = activation
        self.variant = variant
        self.random_state = random_state
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.rho = rho
        self.epsilon = epsilon

    def _spec(self, channels: int) -> ArchitectureSpec:
        return ArchitectureSpec(
            input_channels=channels, depth=self.depth, filters=self.filters,
            kernel=self.kernel_size, activation=self.activation, variant=self.variant,
            base_seed=int(self.random_state),
        )

    def _config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs,
                           batch_size=self.batch_size, rmsprop_decay=self.rho,
                           rmsprop_epsilon=self.epsilon)

    def fit(self, X, y, validation_data=None):
        X, y = check_X_y(X, y, allow_nd=True, dtype=np.float64)
        X = _as_images(X)
        y = np.asarray(y, dtype=np.int64)
        if y.min() < 0 or y.max() > 9:
            raise ValueError("labels must be class indices in 0..9")
        spec = self._spec(X.shape[1])
        train_set = Dataset(X, y, "train", "array")
        if validation_data is not None:
            Xv, yv = validation_data
            val_set = Dataset(_as_images(Xv, X.shape[1]), np.asarray(yv, dtype=np.int64), "validation", "array")
        else:
            val_set = train_set
        self.history_, self.params_ = train(spec, train_set, val_set, self._config(), return_params=True)
        self.spec_ = spec
        self.classes_ = np.arange(spec.num_classes)
        self.n_features_in_ = X.shape[1] * IMAGE_SIZE * IMAGE_SIZE
        self.n_parameters_ = parameter_count(spec)
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = _as_images(X, self.spec_.input_channels)
        out = [forward(self.params_, self.spec_, X[s:s + self.batch_size], keep_cache=False)[0]
               for s in range(0, len(X), self.batch_size)]
        return np.concatenate(out)

    def predict_proba(self, X) -> np.ndarray:
        return np.exp(log_softmax(self.decision_function(X)))

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def log_loss(self, X, y) -> float:
        """Mean categorical cross-entropy on (X, y)."""
        check_is_fitted(self, "params_")
        ds = Dataset(_as_images(X, self.spec_.input_channels), np.asarray(y, dtype=np.int64), "eval", "array")
        return evaluate(self.params_, self.spec_, ds, self.batch_size)[0]
