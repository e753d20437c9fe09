"""Scoring metrics and the approximation-quality diagnostics.

Sign convention: mcrps implements the negatively oriented (reward) form of
the CRPS under a normal predictive approximation, so values are typically
negative and larger (closer to zero) is better.
"""

import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import ValidationError
from .linalg import cholesky, spd_inverse, triangular_solve
from .spatial import build_training_neighbors, order_locations
from .validation import as_matrix, check_spd_shape
from .vecchia import build_factor_from_matrix

# =========================
# Predictive scores
# =========================


@dataclass(frozen=True)
class ScorePair:
    """A per-response vector plus its pooled (all entries) counterpart."""

    per_response: np.ndarray
    combined: float


def _paired(truth, other, name):
    t = as_matrix(truth, "truth")
    o = as_matrix(other, name)
    if t.shape != o.shape:
        raise ValidationError("truth has shape %s, %s has %s" % (t.shape, name, o.shape))
    return t, o


def rmspe(truth, predicted):
    """Root mean squared prediction error, per response and pooled."""
    t, p = _paired(truth, predicted, "predicted")
    sq = (t - p) ** 2
    return ScorePair(np.sqrt(sq.mean(axis=0)), float(np.sqrt(sq.mean())))


def coverage(truth, lower, upper):
    """Fraction of entries inside the closed interval [lower, upper]."""
    t, lo = _paired(truth, lower, "lower")
    _, hi = _paired(truth, upper, "upper")
    if np.any(lo > hi):
        bad = np.argwhere(lo > hi)[0]
        raise ValidationError("crossed interval bounds at entry %s" % (tuple(bad),))
    return float(np.mean((lo <= t) & (t <= hi)))


def mcrps(truth, mean, sd):
    """Mean CRPS under a normal approximation, negated (larger is better).

    Per entry: sd * [1/sqrt(pi) - 2 phi(z) - z(2 Phi(z) - 1)], z = (y - mean)/sd.
    """
    t, mu = _paired(truth, mean, "mean")
    _, sig = _paired(truth, sd, "sd")
    if np.any(sig <= 0.0):
        raise ValidationError("predictive sd must be positive")
    z = (t - mu) / sig
    score = sig * (1.0 / np.sqrt(np.pi) - 2.0 * norm.pdf(z) - z * (2.0 * norm.cdf(z) - 1.0))
    return ScorePair(score.mean(axis=0), float(score.mean()))


def msel(truth, estimate):
    """Mean squared error between latent surfaces, per response and pooled.

    Callers pass intercept-centered surfaces (latent effect plus the
    response's intercept) for both truth and estimate.
    """
    t, e = _paired(truth, estimate, "estimate")
    sq = (t - e) ** 2
    return ScorePair(sq.mean(axis=0), float(sq.mean()))


@dataclass
class MetricsReport:
    """Predictive scorecard; latent-only entries stay None for the response model."""

    rmspe: ScorePair
    cvg: ScorePair
    mcrps: ScorePair
    cvgl: ScorePair | None = None
    msel: ScorePair | None = None
    n_queries: int = 0
    n_responses: int = 0

    def to_dict(self):
        def pair(sp):
            if sp is None:
                return None
            return {"per_response": [float(v) for v in sp.per_response],
                    "combined": float(sp.combined)}

        return {"rmspe": pair(self.rmspe), "cvg": pair(self.cvg),
                "cvgl": pair(self.cvgl), "mcrps": pair(self.mcrps),
                "msel": pair(self.msel),
                "counts": {"n_queries": self.n_queries, "n_responses": self.n_responses}}

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)


def _coverage_pair(truth, lower, upper):
    per = np.array([coverage(truth[:, j:j + 1], lower[:, j:j + 1], upper[:, j:j + 1])
                    for j in range(truth.shape[1])])
    return ScorePair(per, coverage(truth, lower, upper))


def score_predictions(truth, summary, latent_truth=None, latent_estimate=None,
                      latent_lower=None, latent_upper=None):
    """Assemble a MetricsReport from truth and a PredictionSummary.

    latent_* arguments are intercept-centered surfaces and their interval
    bounds; all four must be given together to populate msel/cvgl.
    """
    truth = as_matrix(truth, "truth")
    report = MetricsReport(
        rmspe=rmspe(truth, summary.mean),
        cvg=_coverage_pair(truth, summary.lower, summary.upper),
        mcrps=mcrps(truth, summary.mean, summary.sd),
        n_queries=truth.shape[0], n_responses=truth.shape[1])
    latent = (latent_truth, latent_estimate, latent_lower, latent_upper)
    if any(v is not None for v in latent):
        if any(v is None for v in latent):
            raise ValidationError("latent_truth, latent_estimate, latent_lower, "
                                  "latent_upper must be given together")
        lt = as_matrix(latent_truth, "latent_truth")
        report.msel = msel(lt, latent_estimate)
        report.cvgl = _coverage_pair(lt, as_matrix(latent_lower, "latent_lower"),
                                     as_matrix(latent_upper, "latent_upper"))
    return report


# =========================
# Approximation diagnostics
# =========================


def kl_gaussian_zero_mean(sigma0, sigma1):
    """KL(N(0, sigma0) || N(0, sigma1)) through Cholesky factors."""
    s0 = check_spd_shape(sigma0, "sigma0")
    s1 = check_spd_shape(sigma1, "sigma1")
    if s0.shape != s1.shape:
        raise ValidationError("sigma0 and sigma1 must have equal shapes")
    l0 = cholesky(s0)
    l1 = cholesky(s1)
    w = triangular_solve(l1, l0)
    trace = float(np.sum(w * w))
    logdet = 2.0 * float(np.sum(np.log(np.diag(l1))) - np.sum(np.log(np.diag(l0))))
    return max(0.5 * (trace - s0.shape[0] + logdet), 0.0)


@dataclass(frozen=True)
class ToyCovarianceTriple:
    """Exact 3-site covariances: truth and its two one-neighbor approximations.

    The chain conditions site 2 on 1 and site 3 on 2, so only the (1,3)
    entry moves: rho12*rho23/(1+delta2) under the response approximation,
    rho12*rho23 under the latent one.
    """

    sigma_true: np.ndarray
    sigma_response: np.ndarray
    sigma_latent: np.ndarray
    rho12: float
    rho13: float
    rho23: float
    sigma2: float
    delta2: float


def toy_covariances(rho12, rho13, rho23, sigma2=1.0, delta2=0.0):
    """The 3x3 truth/response/latent covariance triple of the chain example."""
    r12, r13, r23 = float(rho12), float(rho13), float(rho23)
    sigma2, delta2 = float(sigma2), float(delta2)
    if sigma2 <= 0.0 or delta2 < 0.0:
        raise ValidationError("sigma2 must be positive and delta2 nonnegative")
    det = 1.0 - (r12 ** 2 + r13 ** 2 + r23 ** 2) + 2.0 * r12 * r13 * r23
    if max(abs(r12), abs(r13), abs(r23)) >= 1.0 or det <= 0.0:
        raise ValidationError("correlations do not form an SPD 3x3 matrix")

    def filled(r13_val, diag):
        return sigma2 * np.array([[diag, r12, r13_val],
                                  [r12, diag, r23],
                                  [r13_val, r23, diag]])

    dd = 1.0 + delta2
    triple = ToyCovarianceTriple(
        sigma_true=filled(r13, dd),
        sigma_response=filled(r12 * r23 / dd, dd),
        sigma_latent=filled(r12 * r23, dd),
        rho12=r12, rho13=r13, rho23=r23, sigma2=sigma2, delta2=delta2)

    # cross-check against the actual factor machinery on a 1-D chain whenever
    # the correlations are realizable by distances (both in (0,1))
    if 0.0 < r12 < 1.0 and 0.0 < r23 < 1.0:
        coords = np.array([[0.0], [-np.log(r12)], [-np.log(r12) - np.log(r23)]])
        corr = np.exp(-abs(coords - coords.T))
        graph = build_training_neighbors(
            order_locations(coords, "given", permutation=np.arange(3)), m=1)
        resp = build_factor_from_matrix(graph, corr, alpha=1.0 / dd, kind="response")
        lat = build_factor_from_matrix(graph, corr, kind="latent")
        approx_r = sigma2 * spd_inverse(resp.dense_precision())
        approx_l = sigma2 * (spd_inverse(lat.dense_precision()) + delta2 * np.eye(3))
        if not (np.allclose(approx_r, triple.sigma_response, atol=1e-10)
                and np.allclose(approx_l, triple.sigma_latent, atol=1e-10)):
            raise AssertionError("chain factor disagrees with closed-form covariances")
    return triple


@dataclass(frozen=True)
class FrobeniusReport:
    e_norm: float
    b_norm: float
    tau2: float
    passed: bool


def frobenius_shrink_check(c, tau2, graph):
    """Latent-vs-response precision-error shrinkage on a dense instance.

    E = C^{-1} - Ctilde^{-1} is the response-model precision error;
    B = (I + tau2 Ctilde^{-1})^{-1} E (I + tau2 Ctilde^{-1})^{-1} is the
    latent-model counterpart, whose Frobenius norm never exceeds ||E||_F.
    """
    c = check_spd_shape(c, "c")
    n = c.shape[0]
    if n > 100:
        raise ValidationError("dense shrinkage check is limited to n <= 100")
    tau2 = float(tau2)
    if tau2 < 0.0:
        raise ValidationError("tau2 must be nonnegative")
    factor = build_factor_from_matrix(graph, c, kind="latent")
    prec_tilde = factor.dense_precision()
    e = spd_inverse(c) - prec_tilde
    f = np.eye(n) + tau2 * prec_tilde
    b = np.linalg.solve(f, np.linalg.solve(f, e).T).T
    e_norm = float(np.linalg.norm(e))
    b_norm = float(np.linalg.norm(b))
    return FrobeniusReport(e_norm=e_norm, b_norm=b_norm, tau2=tau2,
                           passed=bool(b_norm <= e_norm + 1e-12 * max(e_norm, 1.0)))
