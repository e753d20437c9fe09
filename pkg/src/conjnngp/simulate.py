"""Synthetic multivariate spatial data with known latent surfaces.

Generation follows the standard benchmark design: uniform locations on the
unit square, X = [1, z] with z standard normal, omega drawn from a dense
matrix-normal with exponential spatial correlation, and independent
measurement noise with covariance (1/alpha - 1) Sigma per row.
"""

from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import ValidationError
from .linalg import cholesky, make_rng
from .spatial import CorrelationModel, corr_matrix
from .validation import as_matrix, check_alpha, check_phi, check_spd_shape

_DENSE_LIMIT = 20000

# Table-style defaults: q=2 responses, intercept + one predictor, and Sigma
# set so the noise covariance at alpha=0.9 is [[.222, -.111], [-.111, .167]]
_DEFAULT_BETA = np.array([[1.0, 1.0], [-2.0, 2.0]])
_DEFAULT_SIGMA = 9.0 * np.array([[0.222, -0.111], [-0.111, 0.167]])


@dataclass
class SimConfig:
    """Ground-truth generation settings; the domain is the unit square."""

    n: int = 1200
    beta: np.ndarray = field(default_factory=lambda: _DEFAULT_BETA.copy())
    sigma: np.ndarray = field(default_factory=lambda: _DEFAULT_SIGMA.copy())
    phi: float = 6.0
    alpha: float = 0.9
    n_holdout: int = 200
    seed: int = 0

    def __post_init__(self):
        self.n = int(self.n)
        if self.n < 1:
            raise ValidationError("n must be >= 1")
        if self.n > _DENSE_LIMIT:
            raise ValidationError(
                "n=%d exceeds the dense generation limit %d; blocked generation "
                "is out of scope" % (self.n, _DENSE_LIMIT))
        self.beta = as_matrix(self.beta, "beta")
        self.sigma = check_spd_shape(self.sigma, "sigma")
        if self.sigma.shape[0] != self.q:
            raise ValidationError("sigma is %dx%d but beta has %d columns"
                                  % (*self.sigma.shape, self.q))
        self.phi = check_phi(self.phi)
        self.alpha = check_alpha(self.alpha, allow_one=False)
        self.n_holdout = int(self.n_holdout)
        if not 0 <= self.n_holdout < self.n:
            raise ValidationError("n_holdout must lie in [0, n)")

    @property
    def p(self):
        return self.beta.shape[0]

    @property
    def q(self):
        return self.beta.shape[1]


@dataclass
class SimOutput:
    """Generated data split into training and holdout, with true surfaces."""

    train: Dataset
    holdout: Dataset | None
    omega_train: np.ndarray
    omega_holdout: np.ndarray | None
    record: dict


def generate(config):
    """Draw one dataset from the configured ground truth; seed-reproducible.

    RNG call order is fixed (locations, covariates, omega, noise, holdout
    split), so equal seeds regenerate bit-identical output.
    """
    n, p, q = config.n, config.p, config.q
    rng = make_rng(config.seed)

    coords = rng.uniform(size=(n, 2))
    x = np.ones((n, p))
    if p > 1:
        x[:, 1:] = rng.standard_normal((n, p - 1))

    corr = corr_matrix(CorrelationModel(config.phi), coords)
    l_rho = cholesky(corr)
    l_sig = cholesky(config.sigma)
    omega = l_rho @ rng.standard_normal((n, q)) @ l_sig.T
    eps = np.sqrt(1.0 / config.alpha - 1.0) * rng.standard_normal((n, q)) @ l_sig.T
    y = x @ config.beta + omega + eps

    hold_rows = np.sort(rng.permutation(n)[: config.n_holdout])
    mask = np.zeros(n, dtype=bool)
    mask[hold_rows] = True
    train_rows = np.flatnonzero(~mask)

    record = {"n": n, "p": p, "q": q, "phi": config.phi, "alpha": config.alpha,
              "n_holdout": config.n_holdout, "seed": config.seed,
              "beta": config.beta.tolist(), "sigma": config.sigma.tolist()}
    train = Dataset(coords[train_rows], x[train_rows], y[train_rows])
    if config.n_holdout:
        holdout = Dataset(coords[hold_rows], x[hold_rows], y[hold_rows])
        return SimOutput(train=train, holdout=holdout,
                         omega_train=omega[train_rows],
                         omega_holdout=omega[hold_rows], record=record)
    return SimOutput(train=train, holdout=None, omega_train=omega,
                     omega_holdout=None, record=record)
