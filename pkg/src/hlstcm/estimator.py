"""scikit-learn style wrapper so the classifier composes with pipelines,
grid search, and cross-validation utilities.

X is a 4-D array (n_samples, persons, timesteps, features); y is any
label array. Architecture and optimizer knobs are constructor parameters
so ``get_params``/``set_params``/``clone`` work as usual.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from . import model, training
from .data import Dataset


def check_sequence_array(X, name="X"):
    """Validate a (n, p, T, d_x) float array: 4-D, nonempty, all finite."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4:
        raise ValueError(
            f"{name} must have shape (n_samples, persons, timesteps, features); got {X.shape}"
        )
    if X.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if not np.isfinite(X).all():
        raise ValueError(f"{name} contains non-finite values")
    return X


class HlstcmClassifier(BaseEstimator, ClassifierMixin):
    """Sequence classifier over concurrent per-person feature tracks.

    Parameters mirror the model configuration (variant and layer widths)
    and the optimizer (SGD with momentum and per-epoch lr decay).
    """

    def __init__(self, variant="hlstcm", d_sp=32, d_proj=16, d_co=32, d_top=0,
                 group_a=(), share_sp_params=False, linear_logits=False,
                 lr=5e-4, momentum=0.9, decay=0.95, epochs=100, clip_norm=5.0,
                 shuffle=True, batch_size=1, random_state=0):
        self.variant = variant
        self.d_sp = d_sp
        self.d_proj = d_proj
        self.d_co = d_co
        self.d_top = d_top
        self.group_a = group_a
        self.share_sp_params = share_sp_params
        self.linear_logits = linear_logits
        self.lr = lr
        self.momentum = momentum
        self.decay = decay
        self.epochs = epochs
        self.clip_norm = clip_norm
        self.shuffle = shuffle
        self.batch_size = batch_size
        self.random_state = random_state

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("this HlstcmClassifier instance is not fitted yet")

    def fit(self, X, y):
        X = check_sequence_array(X)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ValueError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
        classes, y_idx = np.unique(y, return_inverse=True)
        if classes.shape[0] < 2:
            raise ValueError("need at least 2 classes to fit")
        n, p, T, d_x = X.shape
        config = model.HlstcmConfig(
            p=p, d_x=d_x, T=T, k=classes.shape[0], variant=self.variant,
            d_sp=self.d_sp, d_proj=self.d_proj, d_co=self.d_co, d_top=self.d_top,
            group_a=tuple(self.group_a), share_sp_params=self.share_sp_params,
            linear_logits=self.linear_logits)
        cfg = training.TrainConfig(
            lr=self.lr, momentum=self.momentum, decay=self.decay,
            epochs=self.epochs, clip_norm=self.clip_norm, seed=self.random_state,
            shuffle=self.shuffle, batch_size=self.batch_size)
        samples = [model.Sample(X[i], int(y_idx[i]), id=str(i)) for i in range(n)]
        dataset = Dataset(samples, [str(c) for c in classes], p, T, d_x)
        params = model.init_model_params(config, seed=self.random_state)
        params, history, _ = training.train(params, config, dataset, cfg)
        self.classes_ = classes
        self.config_ = config
        self.params_ = params
        self.history_ = history
        return self

    def predict_proba(self, X):
        self._check_fitted()
        X = check_sequence_array(X)
        expect = (self.config_.p, self.config_.T, self.config_.d_x)
        if X.shape[1:] != expect:
            raise ValueError(f"X has per-sample shape {X.shape[1:]}, fitted on {expect}")
        out = np.empty((X.shape[0], self.config_.k))
        for i in range(X.shape[0]):
            probs, _ = model.forward(self.params_, self.config_, model.Sample(X[i], 0))
            out[i] = probs
        return out

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
