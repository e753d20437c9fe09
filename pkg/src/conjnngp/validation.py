"""Input validation helpers used by the estimators and the CLI.

All model code assumes float64, C-contiguous, 2-D arrays; these helpers
coerce and check once at the boundary so the numerical kernels can stay
assertion-free.
"""

import numpy as np

from .errors import DuplicateCoordinateError, ValidationError


def as_matrix(arr, name, allow_empty_cols=False):
    """Coerce to a finite float64 2-D array. 1-D input becomes a column."""
    out = np.asarray(arr, dtype=np.float64)
    if out.ndim == 1:
        out = out[:, None]
    if out.ndim != 2:
        raise ValidationError("%s must be 2-dimensional, got ndim=%d" % (name, out.ndim))
    if out.shape[0] == 0:
        raise ValidationError("%s has no rows" % name)
    if out.shape[1] == 0 and not allow_empty_cols:
        raise ValidationError("%s has no columns" % name)
    if not np.all(np.isfinite(out)):
        bad = int(np.flatnonzero(~np.isfinite(out).all(axis=1))[0])
        raise ValidationError("%s contains non-finite values (first bad row %d)" % (name, bad))
    return np.ascontiguousarray(out)


def check_coords(coords):
    """Validate a coordinate array and reject exact duplicate rows."""
    c = as_matrix(coords, "coords")
    order = np.lexsort(c.T[::-1])
    same = np.all(c[order[1:]] == c[order[:-1]], axis=1)
    if np.any(same):
        pairs = [(order[k], order[k + 1]) for k in np.flatnonzero(same)]
        pairs = [(min(i, j), max(i, j)) for i, j in pairs]
        raise DuplicateCoordinateError(pairs)
    return c


def check_same_rows(n, arr, name):
    if arr.shape[0] != n:
        raise ValidationError(
            "%s has %d rows but %d coordinates were given" % (name, arr.shape[0], n)
        )


def check_phi(phi):
    phi = float(phi)
    if not np.isfinite(phi) or phi <= 0.0:
        raise ValidationError("phi must be a positive finite real, got %r" % phi)
    return phi


def check_alpha(alpha, allow_one):
    """alpha is the spatial proportion of total variance; (0,1] or (0,1)."""
    alpha = float(alpha)
    ok = np.isfinite(alpha) and 0.0 < alpha and (alpha <= 1.0 if allow_one else alpha < 1.0)
    if not ok:
        dom = "(0, 1]" if allow_one else "(0, 1)"
        raise ValidationError("alpha must lie in %s, got %r" % (dom, alpha))
    return alpha


def check_neighbors(m):
    m = int(m)
    if m < 1:
        raise ValidationError("neighbor count m must be >= 1, got %d" % m)
    return m


def check_spd_shape(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError("%s must be square, got shape %s" % (name, (a.shape,)))
    if not np.all(np.isfinite(a)):
        raise ValidationError("%s contains non-finite values" % name)
    if not np.allclose(a, a.T, rtol=1e-10, atol=1e-12):
        raise ValidationError("%s is not symmetric" % name)
    return np.ascontiguousarray(a)
