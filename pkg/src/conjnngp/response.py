"""Conjugate response model: closed-form MNIW posterior and exact sampling.

The response covariance is K (x) Sigma with K = rho_phi + (1/alpha - 1) I.
Whitening the design and responses with D^{-1/2}(I - A) from the Vecchia
factor turns the posterior update into ordinary least-squares algebra; no
n x n matrix is ever formed. Sampling is exact draw-by-draw (no MCMC).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DecompositionError, ValidationError
from .linalg import cholesky, make_rng, sample_inv_wishart, spd_inverse, triangular_solve
from .validation import as_matrix, check_spd_shape

# =========================
# Prior and posterior containers
# =========================


@dataclass(frozen=True)
class PriorSpec:
    """MNIW prior MN(mu_beta, V_r, Sigma) x IW(psi, nu).

    v_beta None means a flat prior on beta (the V_r^{-1} and mu_beta terms
    drop from the update). Defaults: psi = I_q, nu = q + 1.
    """

    mu_beta: np.ndarray | None = None
    v_beta: np.ndarray | None = None
    psi: np.ndarray | None = None
    nu: float | None = None

    def resolve(self, p, q):
        """Validated (mu_beta, v_chol, psi, nu) for given dimensions; v_chol None = flat."""
        psi = np.eye(q) if self.psi is None else check_spd_shape(self.psi, "psi")
        if psi.shape[0] != q:
            raise ValidationError("psi is %dx%d but q=%d" % (*psi.shape, q))
        nu = float(q + 1 if self.nu is None else self.nu)
        if not np.isfinite(nu) or nu <= q - 1:
            raise ValidationError("nu must exceed q-1=%d, got %r" % (q - 1, nu))
        cholesky(psi)
        if self.v_beta is None:
            if self.mu_beta is not None:
                raise ValidationError("mu_beta was given without v_beta (flat prior has no mean)")
            return None, None, psi, nu
        v_beta = check_spd_shape(self.v_beta, "v_beta")
        if v_beta.shape[0] != p:
            raise ValidationError("v_beta is %dx%d but p=%d" % (*v_beta.shape, p))
        v_chol = cholesky(v_beta)
        mu = np.zeros((p, q)) if self.mu_beta is None else as_matrix(
            self.mu_beta, "mu_beta", allow_empty_cols=True)
        if mu.shape != (p, q):
            raise ValidationError("mu_beta has shape %s, expected %s" % (mu.shape, (p, q)))
        return mu, v_chol, psi, nu


@dataclass
class MNIWPosterior:
    """Closed-form posterior: beta | Sigma ~ MN(mu, V, Sigma), Sigma ~ IW(psi, nu)."""

    mu: np.ndarray
    v_chol: np.ndarray
    psi: np.ndarray
    nu: float
    n: int

    @property
    def p(self):
        return self.mu.shape[0]

    @property
    def q(self):
        return self.mu.shape[1]

    def sigma_mean(self):
        if self.nu <= self.q + 1:
            raise ValidationError("IW mean needs nu > q+1")
        return self.psi / (self.nu - self.q - 1)


@dataclass
class SampleSet:
    """Exact joint posterior draws; omega present only for the latent model."""

    beta: np.ndarray
    sigma: np.ndarray
    omega: np.ndarray | None = None
    seed: object = None
    excluded: int = 0
    sigma_chol: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_draws(self):
        return self.beta.shape[0]

    def chol(self):
        if self.sigma_chol is None:
            self.sigma_chol = np.linalg.cholesky(self.sigma)
        return self.sigma_chol


# =========================
# Fit / sample / predict
# =========================


def _check_pairing(data, factor, kind):
    if factor.kind != kind:
        raise ValidationError("factor kind is %r, expected %r" % (factor.kind, kind))
    if factor.n != data.n:
        raise ValidationError("factor covers %d rows, data has %d" % (factor.n, data.n))


def fit_response(data, factor, prior=None):
    """MNIW posterior from whitened least-squares updates.

    data rows must already follow the ordering the factor was built on.
    """
    prior = prior or PriorSpec()
    _check_pairing(data, factor, "response")
    n, p, q = data.n, data.p, data.q
    mu_b, vr_chol, psi, nu = prior.resolve(p, q)

    diax = factor.whiten(data.x)
    diay = factor.whiten(data.y)
    gram = diax.T @ diax
    rhs = diax.T @ diay
    prior_quad = 0.0
    if vr_chol is not None:
        lr_inv_mu = triangular_solve(vr_chol, mu_b)
        # V_r^{-1} = L^{-T} L^{-1}: accumulate through triangular solves only
        lr_inv = triangular_solve(vr_chol, np.eye(p))
        gram = gram + lr_inv.T @ lr_inv
        rhs = rhs + lr_inv.T @ lr_inv_mu
        prior_quad = lr_inv_mu.T @ lr_inv_mu
    if p:
        try:
            v_star = spd_inverse(gram)
        except DecompositionError as err:
            raise DecompositionError(
                "whitened design is rank deficient (collinear or zero columns of x "
                "under a flat prior)", pivot=err.pivot) from err
        mu_star = v_star @ rhs
        v_chol = cholesky(0.5 * (v_star + v_star.T))
    else:
        mu_star = np.zeros((0, q))
        v_chol = np.zeros((0, 0))

    psi_star = psi + diay.T @ diay + prior_quad
    if p:
        white_mu = triangular_solve(v_chol, mu_star)
        psi_star = psi_star - white_mu.T @ white_mu
    psi_star = 0.5 * (psi_star + psi_star.T)
    try:
        cholesky(psi_star)
    except DecompositionError as err:
        raise DecompositionError("posterior scale matrix lost positive definiteness",
                                 pivot=err.pivot) from err
    return MNIWPosterior(mu=mu_star, v_chol=v_chol, psi=psi_star, nu=nu + n, n=n)


def sample_response_posterior(post, n_draws, rng=None):
    """n_draws exact (Sigma, beta) pairs: Sigma ~ IW, beta | Sigma ~ MN."""
    n_draws = int(n_draws)
    if n_draws < 1:
        raise ValidationError("n_draws must be >= 1")
    rng = make_rng(rng)
    sigma = sample_inv_wishart(post.psi, post.nu, rng, size=n_draws)
    l_sig = np.linalg.cholesky(sigma)
    z = rng.standard_normal((n_draws, post.p, post.q))
    beta = post.mu + post.v_chol @ z @ np.swapaxes(l_sig, 1, 2)
    return SampleSet(beta=beta, sigma=sigma, sigma_chol=l_sig)


@dataclass
class PredictionSummary:
    """Per-query predictive mean, sd, and central interval; latent extras optional.

    mean averages the per-draw conditional means (exact given each draw);
    sd and the interval come from the noisy predictive draws.
    """

    mean: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    draws: np.ndarray | None = None
    omega_mean: np.ndarray | None = None
    omega_sd: np.ndarray | None = None
    omega_lower: np.ndarray | None = None
    omega_upper: np.ndarray | None = None
    omega_draws: np.ndarray | None = None


def _summarize(cond_mean, draws, level, keep):
    half = (1.0 - level) / 2.0
    lo, hi = np.quantile(draws, [half, 1.0 - half], axis=0)
    return dict(mean=cond_mean.mean(axis=0), sd=draws.std(axis=0, ddof=1),
                lower=lo, upper=hi, draws=draws if keep else None)


def predict_response(samples, weights, x_query, data, rng=None,
                     include_draws=True, level=0.95):
    """Predictive draws Y_U = X_U b + A~ (Y - X b) + D~^{1/2} u L_Sigma^T.

    data must be the (ordered) training dataset the weights index into.
    """
    if weights.kind != "response":
        raise ValidationError("weights kind is %r, expected 'response'" % weights.kind)
    if weights.n_reference != data.n:
        raise ValidationError("weights reference %d rows, data has %d"
                              % (weights.n_reference, data.n))
    xq = as_matrix(x_query, "x_query", allow_empty_cols=True)
    if xq.shape[1] != data.p:
        raise ValidationError("x_query has %d columns, training x has %d"
                              % (xq.shape[1], data.p))
    if xq.shape[0] != weights.n_queries:
        raise ValidationError("x_query has %d rows, weights cover %d queries"
                              % (xq.shape[0], weights.n_queries))
    if not 0.0 < level < 1.0:
        raise ValidationError("level must lie in (0, 1)")
    rng = make_rng(rng)
    l, q = samples.n_draws, data.q

    ay = weights.apply(data.y)
    ax = weights.apply(data.x)
    # conditional mean per draw: X_U b + A~ Y - (A~ X) b
    cond = (xq - ax) @ samples.beta + ay
    z = rng.standard_normal((l, weights.n_queries, q))
    noise = np.sqrt(weights.d)[:, None] * (z @ np.swapaxes(samples.chol(), 1, 2))
    return PredictionSummary(level=level, **_summarize(cond, cond + noise, level,
                                                       include_draws))
