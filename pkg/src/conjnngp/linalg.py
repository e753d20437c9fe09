"""Dense matrix kernels and matrix-variate samplers.

Storage convention, used package-wide: all matrices are row-major float64
numpy arrays with explicit 2-D shapes; a draw of a matrix-variate quantity
with L replicates is stacked along a leading axis of length L.
"""

import numpy as np
from scipy.linalg import get_lapack_funcs, solve_triangular

from .errors import DecompositionError, ValidationError

# =========================
# Cholesky and solves
# =========================


def cholesky(a):
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Raises :class:`DecompositionError` naming the first non-positive pivot
    (1-based) instead of regularizing.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError("cholesky needs a square matrix, got shape %s" % (a.shape,))
    (potrf,) = get_lapack_funcs(("potrf",), (a,))
    c, info = potrf(a, lower=True, clean=True, overwrite_a=False)
    if info > 0:
        raise DecompositionError(
            "matrix is not positive definite: leading minor %d has a non-positive pivot" % info,
            pivot=int(info),
        )
    if info < 0:
        raise DecompositionError("invalid argument %d passed to LAPACK potrf" % -info)
    return c


def cholesky_batched(stack):
    """Cholesky of a (B, k, k) stack; on failure reports the first bad batch index."""
    try:
        return np.linalg.cholesky(stack)
    except np.linalg.LinAlgError:
        for b in range(stack.shape[0]):
            try:
                cholesky(stack[b])
            except DecompositionError as err:
                raise DecompositionError(
                    "batch element %d is not positive definite (pivot %s)" % (b, err.pivot),
                    pivot=err.pivot,
                ) from err
        raise


def triangular_solve(l, b, transpose=False, lower=True):
    """Solve L x = b (or Lᵀ x = b with transpose=True) for triangular L."""
    l = np.asarray(l, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if l.ndim != 2 or l.shape[0] != l.shape[1]:
        raise ValidationError("triangular_solve needs a square factor, got %s" % (l.shape,))
    if b.shape[0] != l.shape[0]:
        raise ValidationError(
            "right-hand side has %d rows, factor is %d x %d" % (b.shape[0], *l.shape)
        )
    if np.any(np.diag(l) == 0.0):
        k = int(np.flatnonzero(np.diag(l) == 0.0)[0]) + 1
        raise DecompositionError("triangular factor is singular at diagonal %d" % k, pivot=k)
    return solve_triangular(l, b, trans=1 if transpose else 0, lower=lower, check_finite=False)


def spd_solve(a, b):
    """Solve A x = b for SPD A via Cholesky; errors rather than regularizes."""
    l = cholesky(a)
    return triangular_solve(l, triangular_solve(l, b), transpose=True)


def spd_inverse(a):
    return spd_solve(a, np.eye(a.shape[0]))

# =========================
# Matrix-variate samplers
# =========================


def sample_matrix_normal(mean, row_chol, col_chol, rng, size=None):
    """Draw from MN(mean, U, V) given lower factors U = L_U L_Uᵀ, V = L_V L_Vᵀ.

    Each draw is mean + L_U Z L_Vᵀ with Z standard normal, so
    vec(draw) ~ N(vec(mean), V ⊗ U) under column-stacking vec.
    With size=None returns one (n, p) draw, else a (size, n, p) stack.
    """
    mean = np.asarray(mean, dtype=np.float64)
    row_chol = np.asarray(row_chol, dtype=np.float64)
    col_chol = np.asarray(col_chol, dtype=np.float64)
    n, p = mean.shape
    if row_chol.shape != (n, n) or col_chol.shape != (p, p):
        raise ValidationError(
            "scale factors %s, %s do not match mean shape %s"
            % (row_chol.shape, col_chol.shape, mean.shape)
        )
    shape = (n, p) if size is None else (int(size), n, p)
    z = rng.standard_normal(shape)
    return mean + row_chol @ z @ col_chol.T


def sample_inv_wishart(psi, nu, rng, size=None):
    """Draw from the inverse Wishart IW(psi, nu) by Bartlett decomposition.

    With T the Bartlett lower-triangular factor of a Wishart(psi^{-1}, nu)
    draw, the inverse draw is GᵀG for G = T^{-1} L_psiᵀ, so only triangular
    construction and small solves are involved. Requires nu > q - 1.
    """
    psi = np.asarray(psi, dtype=np.float64)
    q = psi.shape[0]
    nu = float(nu)
    if psi.shape != (q, q):
        raise ValidationError("psi must be square, got %s" % (psi.shape,))
    if not nu > q - 1:
        raise ValidationError("degrees of freedom must exceed q - 1 = %d, got %r" % (q - 1, nu))
    l_psi = cholesky(psi)
    b = 1 if size is None else int(size)
    t = np.zeros((b, q, q))
    for i in range(q):
        t[:, i, i] = np.sqrt(rng.chisquare(nu - i, size=b))
        for j in range(i):
            t[:, i, j] = rng.standard_normal(b)
    g = np.linalg.solve(t, np.broadcast_to(l_psi.T, (b, q, q)))
    sigma = np.einsum("bki,bkj->bij", g, g)
    # exact symmetry keeps downstream Cholesky checks honest
    sigma = 0.5 * (sigma + sigma.transpose(0, 2, 1))
    return sigma[0] if size is None else sigma


def make_rng(seed):
    """Coerce a seed or Generator into a numpy Generator (splittable, seeded)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
