"""Sparse Vecchia factors and prediction weights for the NNGP kernels.

Two kernel kinds share all machinery. The response kind works on
rho + (1/alpha - 1) I (spatial correlation plus scaled nugget, unit total
variance 1/alpha on the diagonal); the latent kind is the same with alpha
fixed at 1, i.e. the plain correlation. Row systems are solved in one
batched pass with padded neighbor slots masked so that padding contributes
exactly zero weight.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DecompositionError, ValidationError
from .validation import check_alpha

_KINDS = ("response", "latent")


def _kernel_alpha(kind, alpha):
    if kind not in _KINDS:
        raise ValidationError("kind must be one of %s, got %r" % (_KINDS, kind))
    if kind == "latent":
        return 1.0
    return check_alpha(alpha, allow_one=True)


def _row_systems(pair_vals, self_vals, valid, nugget, diag_vals=None, label="row"):
    """Solve the per-row conditioning systems with padded slots decoupled.

    pair_vals (B, w, w) holds kernel values between neighbors, self_vals
    (B, w) between each site and its neighbors. Invalid slots are zeroed and
    given a unit diagonal so their solved weight is exactly zero. Returns
    (weights (B, w), weights . self_vals (B,)).
    """
    b, w = self_vals.shape
    if w == 0:
        return np.zeros((b, 0)), np.zeros(b)
    pv = valid[:, :, None] & valid[:, None, :]
    mats = np.where(pv, pair_vals, 0.0)
    rw = np.arange(w)
    if diag_vals is None:
        mats[:, rw, rw] = 1.0 + nugget
    else:
        mats[:, rw, rw] = np.where(valid, diag_vals + nugget, 1.0)
    rhs = np.where(valid, self_vals, 0.0)
    try:
        np.linalg.cholesky(mats)
    except np.linalg.LinAlgError:
        bad = 0
        for i in range(b):
            try:
                np.linalg.cholesky(mats[i])
            except np.linalg.LinAlgError:
                bad = i
                break
        raise DecompositionError(
            "neighbor kernel submatrix for %s %d is not positive definite" % (label, bad),
            pivot=bad,
        ) from None
    weights = np.linalg.solve(mats, rhs[..., None])[..., 0]
    weights = np.where(valid, weights, 0.0)
    return weights, np.einsum("bw,bw->b", weights, rhs)


def _solve_rows_correlation(graph, corr, nugget, label):
    self_dist, pair_dist = graph.distances()
    valid = graph.valid
    pair_vals = corr.of_distance(pair_dist)
    self_vals = corr.of_distance(self_dist)
    return _row_systems(pair_vals, self_vals, valid, nugget, label=label)


@dataclass
class VecchiaFactor:
    """Sparse factor of the NNGP precision: K^{-1} = (I - A)ᵀ D^{-1} (I - A).

    A's row i holds `weights[i]` at columns `indices[i]` (padding masked by
    `valid`); D is the vector `d`.
    """

    indices: np.ndarray
    weights: np.ndarray
    valid: np.ndarray
    d: np.ndarray
    kind: str
    alpha: float
    _csr: sp.csr_matrix | None = field(default=None, repr=False)

    @property
    def n(self):
        return self.d.shape[0]

    def whiten(self, b):
        """Apply D^{-1/2}(I - A) to the columns of b without dense matrices."""
        b = np.asarray(b, dtype=np.float64)
        squeeze = b.ndim == 1
        if squeeze:
            b = b[:, None]
        if b.shape[0] != self.n:
            raise ValidationError("operand has %d rows, factor has %d" % (b.shape[0], self.n))
        out = b - np.einsum("nw,nwk->nk", self.weights, b[self.indices])
        out /= np.sqrt(self.d)[:, None]
        return out[:, 0] if squeeze else out

    def a_csr(self):
        if self._csr is None:
            n, w = self.indices.shape
            mask = self.valid.ravel()
            rows = np.repeat(np.arange(n), w)[mask]
            cols = self.indices.ravel()[mask]
            vals = self.weights.ravel()[mask]
            self._csr = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        return self._csr

    def vrho_csr(self):
        """D^{-1/2}(I - A) as CSR (rows scaled by 1/sqrt(d))."""
        eye = sp.identity(self.n, format="csr")
        scale = sp.diags(1.0 / np.sqrt(self.d))
        return (scale @ (eye - self.a_csr())).tocsr()

    def dense_precision(self):
        v = self.vrho_csr()
        return np.asarray((v.T @ v).todense())


@dataclass
class PredictionWeights:
    """Per-query kriging weights Ã and conditional variances d̃.

    Row i of Ã holds weights[i] at reference columns indices[i]; d̃ may be
    exactly zero for a query coincident with its conditioning set (latent
    kind), so only nonnegativity is enforced here.
    """

    indices: np.ndarray
    weights: np.ndarray
    valid: np.ndarray
    d: np.ndarray
    kind: str
    alpha: float
    n_reference: int

    @property
    def n_queries(self):
        return self.d.shape[0]

    def apply(self, b):
        """Ã @ b for b with rows over the reference set."""
        b = np.asarray(b, dtype=np.float64)
        squeeze = b.ndim == 1
        if squeeze:
            b = b[:, None]
        if b.shape[0] != self.n_reference:
            raise ValidationError(
                "operand has %d rows, reference set has %d" % (b.shape[0], self.n_reference)
            )
        out = np.einsum("nw,nwk->nk", self.weights, b[self.indices])
        return out[:, 0] if squeeze else out

    def csr(self):
        nq, w = self.indices.shape
        mask = self.valid.ravel()
        rows = np.repeat(np.arange(nq), w)[mask]
        cols = self.indices.ravel()[mask]
        vals = self.weights.ravel()[mask]
        return sp.csr_matrix((vals, (rows, cols)), shape=(nq, self.n_reference))


def build_factor(graph, corr, alpha, kind):
    """Vecchia factor rows from a training-mode neighbor graph.

    Row i solves [rho(N,N) + (1/alpha - 1) I] a_i = rho(N, s_i) (response
    kind; latent drops the nugget), d_i = (1/alpha or 1) - a_i . rho(N, s_i).
    """
    if graph.mode != "training":
        raise ValidationError("build_factor needs a training-mode neighbor graph")
    a_eff = _kernel_alpha(kind, alpha)
    nugget = 1.0 / a_eff - 1.0
    weights, dot = _solve_rows_correlation(graph, corr, nugget, label="row")
    d = (1.0 / a_eff) - dot
    if np.any(d <= 0.0) or not np.all(np.isfinite(d)):
        bad = int(np.flatnonzero((d <= 0.0) | ~np.isfinite(d))[0])
        raise DecompositionError(
            "conditional variance is not positive at row %d "
            "(near-duplicate conditioning set)" % bad,
            pivot=bad,
        )
    return VecchiaFactor(indices=graph.indices, weights=weights, valid=graph.valid,
                         d=d, kind=kind, alpha=a_eff)


def build_factor_from_matrix(graph, cov, alpha=1.0, kind="latent"):
    """Vecchia factor of an explicitly given SPD kernel matrix.

    Used where the kernel is only available as a matrix (for example the
    Frobenius shrinkage diagnostic); the response kind adds the scaled
    nugget (1/alpha - 1) to the matrix diagonal.
    """
    if graph.mode != "training":
        raise ValidationError("build_factor_from_matrix needs a training-mode graph")
    cov = np.asarray(cov, dtype=np.float64)
    n = graph.n_queries
    if cov.shape != (n, n):
        raise ValidationError("kernel matrix shape %s does not match graph size %d"
                              % (cov.shape, n))
    a_eff = _kernel_alpha(kind, alpha)
    nugget = 1.0 / a_eff - 1.0
    idx = graph.indices
    pair_vals = cov[idx[:, :, None], idx[:, None, :]]
    self_vals = cov[np.arange(n)[:, None], idx]
    diag_vals = cov[idx, idx]
    weights, dot = _row_systems(pair_vals, self_vals, graph.valid, nugget,
                                diag_vals=diag_vals, label="row")
    d = np.diag(cov) + nugget - dot
    if np.any(d <= 0.0) or not np.all(np.isfinite(d)):
        bad = int(np.flatnonzero((d <= 0.0) | ~np.isfinite(d))[0])
        raise DecompositionError("conditional variance is not positive at row %d" % bad,
                                 pivot=bad)
    return VecchiaFactor(indices=idx, weights=weights, valid=graph.valid,
                         d=d, kind=kind, alpha=a_eff)


def build_prediction_weights(graph, corr, alpha, kind):
    """Kriging weights and conditional variances for prediction-mode graphs."""
    if graph.mode != "prediction":
        raise ValidationError("build_prediction_weights needs a prediction-mode graph")
    a_eff = _kernel_alpha(kind, alpha)
    nugget = 1.0 / a_eff - 1.0
    weights, dot = _solve_rows_correlation(graph, corr, nugget, label="query")
    d = (1.0 / a_eff) - dot
    if np.any(d < -1e-8) or not np.all(np.isfinite(d)):
        bad = int(np.flatnonzero((d < -1e-8) | ~np.isfinite(d))[0])
        raise DecompositionError("conditional variance is negative at query %d" % bad,
                                 pivot=bad)
    return PredictionWeights(indices=graph.indices, weights=weights, valid=graph.valid,
                             d=np.maximum(d, 0.0), kind=kind, alpha=a_eff,
                             n_reference=graph.n_reference)


def apply_vrho(factor, b):
    """D_rho^{-1/2}(I - A_rho) @ b for a latent-kind factor."""
    if factor.kind != "latent":
        raise ValidationError("apply_vrho requires a latent-kind factor")
    return factor.whiten(b)
