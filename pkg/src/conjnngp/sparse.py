"""Row-compressed sparse support and the LSMR least-squares solver.

Sparse matrices are scipy CSR; ``spmv`` and the operator adapter below are
the only entry points the rest of the package uses, so the storage choice
stays behind this module.

``lsmr`` implements the Golub-Kahan bidiagonalization solver of Fong and
Saunders with all per-iteration scalars vectorized across right-hand sides:
one call solves min ||A x_i - b_i|| for every column b_i simultaneously,
which is what makes exact posterior sampling of the latent model affordable.
Columns converge independently and are retired from the working set as they
finish.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError

# =========================
# Sparse products
# =========================


def spmv(a, x, transpose=False):
    """Sparse matrix-vector (or matrix-matrix) product, optionally transposed."""
    rows, cols = a.shape
    need = rows if transpose else cols
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != need:
        raise ValidationError(
            "operand has leading dimension %d, expected %d" % (x.shape[0], need)
        )
    if transpose:
        return a.T @ x
    return a @ x


def _as_matmat_pair(a):
    """Return (rows, cols, matmat, rmatmat) for ndarray / CSR / operator input."""
    if sp.issparse(a):
        acsr = a.tocsr()
        atr = acsr.T.tocsr()
        return (*acsr.shape, lambda v: acsr @ v, lambda u: atr @ u)
    if isinstance(a, np.ndarray):
        if a.ndim != 2:
            raise ValidationError("dense operator must be 2-D")
        return (*a.shape, lambda v: a @ v, lambda u: a.T @ u)
    # duck-typed operator: needs shape plus matvec/rmatvec (matmat optional)
    rows, cols = a.shape
    matmat = getattr(a, "matmat", None)
    rmatmat = getattr(a, "rmatmat", None)
    if matmat is not None and rmatmat is not None:
        return rows, cols, matmat, rmatmat

    def _loop(fn, m):
        def apply(v):
            v2 = v if v.ndim == 2 else v[:, None]
            out = np.empty((m, v2.shape[1]))
            for j in range(v2.shape[1]):
                out[:, j] = fn(v2[:, j])
            return out if v.ndim == 2 else out[:, 0]

        return apply

    return rows, cols, _loop(a.matvec, rows), _loop(a.rmatvec, cols)


# =========================
# LSMR
# =========================


@dataclass
class LsmrOptions:
    """Stopping controls for :func:`lsmr`.

    atol and btol are the relative tolerances of the standard LSMR stopping
    rules; max_iterations defaults to 10 * cols when unset; damping adds a
    Tikhonov term damping * ||x|| to the objective.
    """

    atol: float = 1e-10
    btol: float = 1e-10
    max_iterations: int | None = None
    damping: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.atol < 1.0) or not (0.0 < self.btol < 1.0):
            raise ValidationError("tolerances must lie in (0, 1)")
        if self.max_iterations is not None and int(self.max_iterations) < 1:
            raise ValidationError("max_iterations must be >= 1")
        if self.damping < 0.0:
            raise ValidationError("damping must be nonnegative")


@dataclass
class LsmrReport:
    """Per-column convergence report.

    istop: 0 trivial zero solution, 1 residual tolerance met, 2 normal-equation
    tolerance met, 4/5 machine-precision analogues, 7 iteration limit.
    """

    iterations: np.ndarray
    istop: np.ndarray
    converged: np.ndarray
    residual_norm: np.ndarray
    normal_residual_norm: np.ndarray
    x_norm: np.ndarray
    anorm_estimate: np.ndarray
    cond_estimate: np.ndarray
    residual_history: list = field(default_factory=list)

    @property
    def all_converged(self):
        return bool(np.all(self.converged))


def _sym_ortho(a, b):
    # plane rotation with r >= 0; equals the scalar branchy version exactly
    r = np.hypot(a, b)
    safe = np.where(r == 0.0, 1.0, r)
    return a / safe, b / safe, r


def _inv(x):
    return np.where(x == 0.0, 0.0, 1.0 / np.where(x == 0.0, 1.0, x))


def lsmr(a, b, opts=None, record_history=False):
    """Solve min ||A x - b||_2 column-by-column for all columns of b at once.

    a may be a scipy sparse matrix, a dense ndarray, or any operator exposing
    shape and matvec/rmatvec (A is never formed as a normal-equations
    product). b of shape (rows,) or (rows, B). Returns (x, LsmrReport); x has
    the matching shape. Non-convergence is reported per column, never raised.
    """
    if opts is None:
        opts = LsmrOptions()
    rows, cols, matmat, rmatmat = _as_matmat_pair(a)
    b = np.asarray(b, dtype=np.float64)
    one_dim = b.ndim == 1
    bmat = b[:, None] if one_dim else b
    if bmat.shape[0] != rows:
        raise ValidationError("b has %d rows, operator has %d" % (bmat.shape[0], rows))
    nrhs = bmat.shape[1]
    maxiter = int(opts.max_iterations) if opts.max_iterations is not None else 10 * cols
    damp = float(opts.damping)

    x_out = np.zeros((cols, nrhs))
    it_out = np.zeros(nrhs, dtype=np.int64)
    istop_out = np.zeros(nrhs, dtype=np.int64)
    normr_out = np.zeros(nrhs)
    normar_out = np.zeros(nrhs)
    normx_out = np.zeros(nrhs)
    anorm_out = np.zeros(nrhs)
    cond_out = np.zeros(nrhs)
    history = []

    u = bmat.copy()
    beta = np.linalg.norm(u, axis=0)
    u *= _inv(beta)
    v = rmatmat(u)
    alpha = np.linalg.norm(v, axis=0)
    v *= _inv(alpha)

    # columns whose normal residual starts at zero are solved by x = 0
    live = (alpha * beta) > 0.0
    idx = np.flatnonzero(live)
    if idx.size < nrhs:
        trivial = np.flatnonzero(~live)
        istop_out[trivial] = 0
        normr_out[trivial] = beta[trivial]
    if idx.size == 0:
        rep = LsmrReport(it_out, istop_out, np.ones(nrhs, bool), normr_out,
                         normar_out, normx_out, anorm_out, cond_out, history)
        return (x_out[:, 0] if one_dim else x_out), rep

    u = np.ascontiguousarray(u[:, idx])
    v = np.ascontiguousarray(v[:, idx])
    alpha = alpha[idx]
    beta = beta[idx]
    normb = beta.copy()

    zetabar = alpha * beta
    alphabar = alpha.copy()
    rho = np.ones(idx.size)
    rhobar = np.ones(idx.size)
    cbar = np.ones(idx.size)
    sbar = np.zeros(idx.size)

    h = v.copy()
    hbar = np.zeros((cols, idx.size))
    x = np.zeros((cols, idx.size))

    betadd = beta.copy()
    betad = np.zeros(idx.size)
    rhodold = np.ones(idx.size)
    tautildeold = np.zeros(idx.size)
    thetatilde = np.zeros(idx.size)
    zeta = np.zeros(idx.size)
    d_acc = np.zeros(idx.size)
    norma2 = alpha**2
    maxrbar = np.zeros(idx.size)
    minrbar = np.full(idx.size, 1e100)

    def _retire(finished_mask, itn, istop_vals, normr, normar, normx, norma, conda):
        nonlocal idx, u, v, alpha, beta, normb, zetabar, alphabar, rho, rhobar
        nonlocal cbar, sbar, h, hbar, x, betadd, betad, rhodold, tautildeold
        nonlocal thetatilde, zeta, d_acc, norma2, maxrbar, minrbar
        done = np.flatnonzero(finished_mask)
        cols_done = idx[done]
        x_out[:, cols_done] = x[:, done]
        it_out[cols_done] = itn
        istop_out[cols_done] = istop_vals[done]
        normr_out[cols_done] = normr[done]
        normar_out[cols_done] = normar[done]
        normx_out[cols_done] = normx[done]
        anorm_out[cols_done] = norma[done]
        cond_out[cols_done] = conda[done]
        keep = np.flatnonzero(~finished_mask)
        idx = idx[keep]
        u = np.ascontiguousarray(u[:, keep])
        v = np.ascontiguousarray(v[:, keep])
        h = np.ascontiguousarray(h[:, keep])
        hbar = np.ascontiguousarray(hbar[:, keep])
        x = np.ascontiguousarray(x[:, keep])
        (alpha, beta, normb, zetabar, alphabar, rho, rhobar, cbar, sbar, betadd,
         betad, rhodold, tautildeold, thetatilde, zeta, d_acc, norma2, maxrbar,
         minrbar) = (arr[keep] for arr in (
            alpha, beta, normb, zetabar, alphabar, rho, rhobar, cbar, sbar,
            betadd, betad, rhodold, tautildeold, thetatilde, zeta, d_acc,
            norma2, maxrbar, minrbar))

    itn = 0
    while idx.size > 0 and itn < maxiter:
        itn += 1

        # next Golub-Kahan step
        u = matmat(v) - alpha * u
        beta = np.linalg.norm(u, axis=0)
        u *= _inv(beta)
        v = rmatmat(u) - beta * v
        alpha = np.linalg.norm(v, axis=0)
        v *= _inv(alpha)

        # rotations: eliminate damping, then the subdiagonal, then the bar system
        chat, shat, alphahat = _sym_ortho(alphabar, np.full_like(alphabar, damp))
        rhoold = rho
        c, s, rho = _sym_ortho(alphahat, beta)
        thetanew = s * alpha
        alphabar = c * alpha

        rhobarold = rhobar
        zetaold = zeta
        thetabar = sbar * rho
        rhotemp = cbar * rho
        cbar, sbar, rhobar = _sym_ortho(cbar * rho, thetanew)
        zeta = cbar * zetabar
        zetabar = -sbar * zetabar

        # solution update
        hbar *= -(thetabar * rho * _inv(rhoold * rhobarold))
        hbar += h
        x += (zeta * _inv(rho * rhobar)) * hbar
        h *= -(thetanew * _inv(rho))
        h += v

        # ||r|| estimate
        betaacute = chat * betadd
        betacheck = -shat * betadd
        betahat = c * betaacute
        betadd = -s * betaacute

        thetatildeold = thetatilde
        ctildeold, stildeold, rhotildeold = _sym_ortho(rhodold, thetabar)
        thetatilde = stildeold * rhobar
        rhodold = ctildeold * rhobar
        betad = -stildeold * betad + ctildeold * betahat

        tautildeold = (zetaold - thetatildeold * tautildeold) * _inv(rhotildeold)
        taud = (zeta - thetatilde * tautildeold) * _inv(rhodold)
        d_acc = d_acc + betacheck**2
        normr = np.sqrt(d_acc + (betad - taud) ** 2 + betadd**2)

        norma2 = norma2 + beta**2
        norma = np.sqrt(norma2)
        norma2 = norma2 + alpha**2

        maxrbar = np.maximum(maxrbar, rhobarold)
        if itn > 1:
            minrbar = np.minimum(minrbar, rhobarold)
        conda = np.maximum(maxrbar, rhotemp) * _inv(np.minimum(minrbar, rhotemp))

        normar = np.abs(zetabar)
        normx = np.linalg.norm(x, axis=0)

        if record_history:
            full = np.full(nrhs, np.nan)
            full[idx] = normr
            history.append(full)

        test1 = normr * _inv(normb)
        test2 = normar * _inv(norma * normr)
        t1 = test1 * _inv(1.0 + norma * normx * _inv(normb))
        rtol = opts.btol + opts.atol * norma * normx * _inv(normb)

        istop = np.zeros(idx.size, dtype=np.int64)
        if itn >= maxiter:
            istop[:] = 7
        istop[1.0 + test2 <= 1.0] = 5
        istop[1.0 + t1 <= 1.0] = 4
        istop[test2 <= opts.atol] = 2
        istop[test1 <= rtol] = 1
        finished = istop > 0
        if np.any(finished):
            _retire(finished, itn, istop, normr, normar, normx, norma, conda)

    converged = (istop_out != 7) | (it_out == 0)
    # istop 0 columns never entered the loop and are converged by construction
    rep = LsmrReport(it_out, istop_out, converged, normr_out, normar_out,
                     normx_out, anorm_out, cond_out, history)
    return (x_out[:, 0] if one_dim else x_out), rep
