"""Estimator-style front end: construct with hyperparameters, fit, predict.

Both estimators follow the scikit-learn protocol (parameters stored verbatim
in __init__, validation deferred to fit, fitted state in trailing-underscore
attributes, fit returns self) so they compose with get_params/set_params and
clone. Rows of x and y are matched to coords by position; internal reordering
is invisible to the caller.
"""

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .dataset import Dataset
from .latent import assemble_augmented, fit_latent, predict_latent, sample_latent_posterior
from .linalg import make_rng
from .response import fit_response, predict_response, sample_response_posterior
from .spatial import (CorrelationModel, build_prediction_neighbors,
                      build_training_neighbors, order_locations)
from .vecchia import build_factor, build_prediction_weights


class _BaseNNGP(BaseEstimator):
    _kind = None

    def __init__(self, phi=6.0, alpha=0.9, n_neighbors=10, ordering="sum", prior=None):
        self.phi = phi
        self.alpha = alpha
        self.n_neighbors = n_neighbors
        self.ordering = ordering
        self.prior = prior

    def _fit_common(self, coords, x, y):
        data = Dataset(coords, x, y)
        locs = order_locations(data.coords, self.ordering)
        ordered = data.take(locs.order)
        graph = build_training_neighbors(locs, self.n_neighbors)
        corr = CorrelationModel(self.phi)
        factor = build_factor(graph, corr, self.alpha, self._kind)
        self.locations_ = locs
        self.train_ = ordered
        self.graph_ = graph
        self.factor_ = factor
        self.corr_ = corr
        self.n_, self.p_, self.q_ = ordered.n, ordered.p, ordered.q
        return ordered, factor

    def _require_fitted(self):
        if not hasattr(self, "posterior_"):
            raise NotFittedError("this %s instance is not fitted yet; call fit first"
                                 % type(self).__name__)

    def _query_weights(self, coords):
        graph = build_prediction_neighbors(self.locations_, coords, self.n_neighbors)
        return build_prediction_weights(graph, self.corr_, self.alpha, self._kind)


class ResponseNNGP(_BaseNNGP):
    """Conjugate response-kernel model: marginal spatial covariance with
    nugget folded in, beta and Sigma sampled exactly from the closed form."""

    _kind = "response"

    def fit(self, coords, x, y):
        ordered, factor = self._fit_common(coords, x, y)
        self.posterior_ = fit_response(ordered, factor, self.prior)
        return self

    def sample(self, n_draws=500, random_state=None):
        self._require_fitted()
        return sample_response_posterior(self.posterior_, n_draws, make_rng(random_state))

    def predict(self, coords, x, n_draws=500, random_state=None, samples=None,
                level=0.95, include_draws=False):
        self._require_fitted()
        rng = make_rng(random_state)
        if samples is None:
            samples = sample_response_posterior(self.posterior_, n_draws, rng)
        weights = self._query_weights(coords)
        return predict_response(samples, weights, x, self.train_, rng,
                                include_draws=include_draws, level=level)

    def predict_mean(self, coords, x):
        """Posterior-mean prediction only; no sampling, exact by linearity."""
        self._require_fitted()
        weights = self._query_weights(coords)
        resid = self.train_.y - self.train_.x @ self.posterior_.mu
        return x @ self.posterior_.mu + weights.apply(resid)


class LatentNNGP(_BaseNNGP):
    """Conjugate latent-process model: beta, the latent surfaces, and Sigma
    sampled exactly through sparse least-squares solves."""

    _kind = "latent"

    def __init__(self, phi=6.0, alpha=0.9, n_neighbors=10, ordering="sum",
                 prior=None, lsmr_options=None):
        super().__init__(phi=phi, alpha=alpha, n_neighbors=n_neighbors,
                         ordering=ordering, prior=prior)
        self.lsmr_options = lsmr_options

    def fit(self, coords, x, y):
        ordered, factor = self._fit_common(coords, x, y)
        self.system_ = assemble_augmented(ordered, factor, self.prior, alpha=self.alpha)
        self.posterior_ = fit_latent(self.system_, self.prior, self.lsmr_options)
        return self

    def sample(self, n_draws=500, random_state=None):
        self._require_fitted()
        return sample_latent_posterior(self.posterior_, n_draws, make_rng(random_state),
                                       self.lsmr_options)

    def predict(self, coords, x, n_draws=500, random_state=None, samples=None,
                level=0.95, include_draws=False):
        self._require_fitted()
        rng = make_rng(random_state)
        if samples is None:
            samples = sample_latent_posterior(self.posterior_, n_draws, rng,
                                              self.lsmr_options)
        weights = self._query_weights(coords)
        return predict_latent(samples, weights, x, self.alpha, rng,
                              include_draws=include_draws, level=level)

    def predict_mean(self, coords, x):
        """Posterior-mean prediction only; no sampling, exact by linearity."""
        self._require_fitted()
        weights = self._query_weights(coords)
        return x @ self.posterior_.beta_mean + weights.apply(self.posterior_.omega_mean)

    def latent_mean(self, coords):
        """Posterior-mean latent surface kriged to the given sites."""
        self._require_fitted()
        return self._query_weights(coords).apply(self.posterior_.omega_mean)
