"""scikit-learn style front end: fit a field to a cloud, query it, mesh it."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .extraction import ExtractionConfig, extract
from .field import MlpConfig, NeuralField
from .geometry import Domain, normalize_cloud
from .losses import LossWeights
from .sampler import SamplerConfig
from .trainer import TrainConfig, train


def check_cloud(X, name="X"):
    """Validate an ``(n, 3)`` finite float array with at least one row."""
    X = check_array(X, dtype=np.float64, ensure_all_finite=True, input_name=name)
    if X.shape[1] != 3:
        raise ValueError(f"{name} must have 3 columns, got {X.shape[1]}")
    return X


class ShortestPathReconstructor(TransformerMixin, BaseEstimator):
    """Learns a distance/shortest-path field from a point cloud.

    ``fit`` trains the network on the (optionally normalized) cloud,
    ``predict`` returns unsigned distances, ``transform`` returns the
    shortest-path vectors, and ``reconstruct`` extracts a triangle mesh.
    All outputs are in the coordinates of the fitted cloud.
    """

    def __init__(self, profile="desk", epochs=3000, lr=1e-3, lambda_gm=0.06, lambda_sp=0.01,
                 lambda_ma=0.08, delta_eps=0.03, surface_batch=20000, domain_batch=2000,
                 normalize=True, resolution=64, random_state=0):
        self.profile = profile
        self.epochs = epochs
        self.lr = lr
        self.lambda_gm = lambda_gm
        self.lambda_sp = lambda_sp
        self.lambda_ma = lambda_ma
        self.delta_eps = delta_eps
        self.surface_batch = surface_batch
        self.domain_batch = domain_batch
        self.normalize = normalize
        self.resolution = resolution
        self.random_state = random_state

    def _model_config(self):
        if self.profile == "paper":
            return MlpConfig.paper()
        if self.profile == "desk":
            return MlpConfig.desk()
        raise ValueError(f"unknown profile {self.profile!r}")

    def fit(self, X, y=None):
        X = check_cloud(X)
        if self.normalize:
            cloud, self.scale_, self.offset_ = normalize_cloud(X)
            pts = cloud.points
        else:
            if not Domain().contains(X).all():
                raise ValueError("points outside [-1, 1]^3; enable normalize")
            pts, self.scale_, self.offset_ = X, 1.0, np.zeros(3)
        seed = int(self.random_state or 0)
        config = TrainConfig(epochs=self.epochs, lr0=self.lr,
                             weights=LossWeights(self.lambda_gm, self.lambda_sp, self.lambda_ma, self.delta_eps),
                             sampler=SamplerConfig(self.surface_batch, self.domain_batch, seed), seed=seed)
        self.model_config_ = self._model_config()
        self.params_, self.log_ = train(pts, self.model_config_, config)
        self.n_features_in_ = 3
        return self

    @property
    def field_(self):
        check_is_fitted(self, "params_")
        return NeuralField(self.params_, self.model_config_)

    def _inner(self, X):
        return self.scale_ * check_cloud(X) + self.offset_

    def predict(self, X):
        """Unsigned distance to the learned surface."""
        return self.field_.distance(self._inner(X)) / self.scale_

    def transform(self, X):
        """Shortest-path vectors: ``X - transform(X)`` lies on the learned surface."""
        return self.field_.esp(self._inner(X)) / self.scale_

    def project(self, X):
        return check_cloud(X) - self.transform(X)

    def reconstruct(self, config=None, seed=0):
        config = config or ExtractionConfig(resolution=self.resolution)
        mesh = extract(self.field_, config, np.random.default_rng(seed))
        return mesh.transformed(self.scale_, self.offset_)
