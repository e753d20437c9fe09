"""Conjugate latent model: augmented sparse least squares, exact sampling.

The latent effects are recovered jointly with the regression coefficients by
rewriting the posterior as a (2n+p) x (p+n) sparse least-squares problem

    X* = [ c X   c I ]      Y* = [ c Y       ]      c = sqrt(alpha/(1-alpha))
         [ Lr^-1   0 ]           [ Lr^-1 mu_b]
         [ 0     V_rho]          [ 0         ]

whose normal equations reproduce the closed-form MNIW update. All solves go
through LSMR on the sparse matrix; nothing dense of size n x n is formed.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError, DecompositionError, ValidationError
from .linalg import cholesky, make_rng, sample_inv_wishart, triangular_solve
from .response import PredictionSummary, PriorSpec, SampleSet, _summarize
from .sparse import lsmr
from .validation import as_matrix, check_alpha

# =========================
# Augmented system
# =========================


@dataclass
class AugmentedSystem:
    """Sparse stacked regression encoding data, beta prior, and omega prior."""

    matrix: sp.csr_matrix
    y_star: np.ndarray
    c: float
    alpha: float
    n: int
    p: int
    q: int
    flat: bool

    @property
    def n_rows(self):
        return self.matrix.shape[0]

    @property
    def n_cols(self):
        return self.matrix.shape[1]

    def block_rows(self):
        """(data, prior_beta, prior_omega) row counts, in stacking order."""
        return self.n, 0 if self.flat else self.p, self.n


def assemble_augmented(data, factor, prior=None, alpha=None):
    """Build X*, Y* from ordered data and a latent-kind Vecchia factor."""
    prior = prior or PriorSpec()
    if factor.kind != "latent":
        raise ValidationError("factor kind is %r, expected 'latent'" % factor.kind)
    if factor.n != data.n:
        raise ValidationError("factor covers %d rows, data has %d" % (factor.n, data.n))
    if alpha is None:
        raise ValidationError("alpha is required")
    if float(alpha) == 1.0:
        raise ValidationError(
            "alpha=1 leaves no noise to regress against; use the response model "
            "or pass alpha < 1")
    alpha = check_alpha(alpha, allow_one=False)
    n, p, q = data.n, data.p, data.q
    mu_b, vr_chol, _, _ = prior.resolve(p, q)
    c = float(np.sqrt(alpha / (1.0 - alpha)))

    vrho = factor.vrho_csr()
    blocks = [sp.hstack([sp.csr_matrix(c * data.x), c * sp.identity(n, format="csr")],
                        format="csr")]
    y_rows = [c * data.y]
    if vr_chol is not None:
        lr_inv = triangular_solve(vr_chol, np.eye(p))
        blocks.append(sp.hstack([sp.csr_matrix(lr_inv), sp.csr_matrix((p, n))],
                                format="csr"))
        y_rows.append(lr_inv @ mu_b)
    blocks.append(sp.hstack([sp.csr_matrix((n, p)), vrho], format="csr"))
    y_rows.append(np.zeros((n, q)))

    return AugmentedSystem(matrix=sp.vstack(blocks, format="csr"),
                           y_star=np.vstack(y_rows), c=c, alpha=alpha,
                           n=n, p=p, q=q, flat=vr_chol is None)


# =========================
# Fit / sample / predict
# =========================


@dataclass
class LatentPosterior:
    """Joint posterior over gamma = [beta; omega] and Sigma.

    mu stacks the beta block (first p rows) over the omega block; V* is never
    formed, its action lives in the retained augmented system.
    """

    mu: np.ndarray
    psi: np.ndarray
    nu: float
    system: AugmentedSystem
    report: object = field(repr=False, default=None)

    @property
    def beta_mean(self):
        return self.mu[: self.system.p]

    @property
    def omega_mean(self):
        return self.mu[self.system.p:]

    @property
    def q(self):
        return self.psi.shape[0]


def fit_latent(system, prior=None, options=None):
    """Posterior mean by per-column LSMR; Psi* from the stacked residual."""
    prior = prior or PriorSpec()
    _, _, psi, nu = prior.resolve(system.p, system.q)
    mu, report = lsmr(system.matrix, system.y_star, options)
    if not report.all_converged:
        raise ConvergenceError(
            "LSMR did not converge on %d of %d posterior-mean columns"
            % (int(np.sum(~report.converged)), system.q), report=report)
    resid = system.y_star - system.matrix @ mu
    psi_star = psi + resid.T @ resid
    psi_star = 0.5 * (psi_star + psi_star.T)
    try:
        cholesky(psi_star)
    except DecompositionError as err:
        raise DecompositionError("posterior scale matrix lost positive definiteness",
                                 pivot=err.pivot) from err
    return LatentPosterior(mu=mu, psi=psi_star, nu=nu + system.n,
                           system=system, report=report)


def sample_latent_posterior(post, n_draws, rng=None, options=None):
    """Exact draws of (Sigma, beta, omega); non-converged draws are dropped.

    Each draw solves X* v = eta in the least-squares sense, eta being matrix
    normal noise, so gamma = mu* + v carries covariance Sigma (x) V* without
    ever forming V*.
    """
    n_draws = int(n_draws)
    if n_draws < 1:
        raise ValidationError("n_draws must be >= 1")
    rng = make_rng(rng)
    system = post.system
    n, p, q = system.n, system.p, system.q
    rows = system.n_rows

    sigma = sample_inv_wishart(post.psi, post.nu, rng, size=n_draws)
    l_sig = np.linalg.cholesky(sigma)
    eta = rng.standard_normal((n_draws, rows, q)) @ np.swapaxes(l_sig, 1, 2)
    # column l*q + i is draw l, response i
    rhs = eta.transpose(1, 0, 2).reshape(rows, n_draws * q)
    v, report = lsmr(system.matrix, rhs, options)
    gamma = post.mu[None, :, :] + v.reshape(p + n, n_draws, q).transpose(1, 0, 2)

    keep = report.converged.reshape(n_draws, q).all(axis=1)
    excluded = int(n_draws - keep.sum())
    if excluded:
        warnings.warn("excluding %d of %d draws whose LSMR solve did not converge"
                      % (excluded, n_draws), stacklevel=2)
        if excluded == n_draws:
            raise ConvergenceError("no posterior draw converged", report=report)
        gamma, sigma, l_sig = gamma[keep], sigma[keep], l_sig[keep]
    return SampleSet(beta=gamma[:, :p, :], sigma=sigma, omega=gamma[:, p:, :],
                     excluded=excluded, sigma_chol=l_sig)


def predict_latent(samples, weights, x_query, alpha, rng=None,
                   include_draws=True, level=0.95):
    """Predictive draws of omega_U and Y_U at the query sites.

    omega_U = A~ omega + D~^{1/2} Z L_Sigma^T, then
    Y_U = X_U beta + omega_U + sqrt(1/alpha - 1) Z' L_Sigma^T.
    """
    if weights.kind != "latent":
        raise ValidationError("weights kind is %r, expected 'latent'" % weights.kind)
    if samples.omega is None:
        raise ValidationError("samples carry no latent surface; fit the latent model")
    alpha = check_alpha(alpha, allow_one=True)
    xq = as_matrix(x_query, "x_query", allow_empty_cols=True)
    l, n, q = samples.omega.shape
    if weights.n_reference != n:
        raise ValidationError("weights reference %d rows, omega has %d"
                              % (weights.n_reference, n))
    nq = weights.n_queries
    if xq.shape[0] != nq:
        raise ValidationError("x_query has %d rows, weights cover %d queries"
                              % (xq.shape[0], nq))
    if xq.shape[1] != samples.beta.shape[1]:
        raise ValidationError("x_query has %d columns, beta has %d rows"
                              % (xq.shape[1], samples.beta.shape[1]))
    if not 0.0 < level < 1.0:
        raise ValidationError("level must lie in (0, 1)")
    rng = make_rng(rng)

    # one sparse matmul over all draws: (nq, n) @ (n, L q)
    om2 = samples.omega.transpose(1, 0, 2).reshape(n, l * q)
    cond_omega = (weights.csr() @ om2).reshape(nq, l, q).transpose(1, 0, 2)
    lsig_t = np.swapaxes(samples.chol(), 1, 2)
    omega_draws = cond_omega + np.sqrt(weights.d)[:, None] * (
        rng.standard_normal((l, nq, q)) @ lsig_t)
    y_cond = xq @ samples.beta + cond_omega
    y_draws = y_cond + (omega_draws - cond_omega)
    if alpha < 1.0:
        y_draws = y_draws + np.sqrt(1.0 / alpha - 1.0) * (
            rng.standard_normal((l, nq, q)) @ lsig_t)

    out = _summarize(y_cond, y_draws, level, include_draws)
    om = _summarize(cond_omega, omega_draws, level, include_draws)
    return PredictionSummary(level=level, **out,
                             omega_mean=om["mean"], omega_sd=om["sd"],
                             omega_lower=om["lower"], omega_upper=om["upper"],
                             omega_draws=om["draws"])
