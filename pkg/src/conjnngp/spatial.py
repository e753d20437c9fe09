"""Locations, orderings, nearest-neighbor graphs, and spatial correlation.

Neighbor searches are exact. Ties in distance are broken by smaller point
index so graphs are reproducible across platforms; the kd-tree path enlarges
its candidate set until it can prove no tied candidate was left out, and an
exhaustive path handles small inputs.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import ValidationError
from .validation import as_matrix, check_coords, check_neighbors, check_phi

_EXHAUSTIVE_LIMIT = 256

# =========================
# Correlation
# =========================


@dataclass(frozen=True)
class CorrelationModel:
    """Isotropic correlation family; only the exponential family is in scope."""

    phi: float
    family: str = "exponential"

    def __post_init__(self):
        object.__setattr__(self, "phi", check_phi(self.phi))
        if self.family != "exponential":
            raise ValidationError("unsupported correlation family %r" % self.family)

    def of_distance(self, d):
        return np.exp(-self.phi * np.asarray(d, dtype=np.float64))


def correlation(model, s, t):
    """Correlation between two single points."""
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    return float(model.of_distance(np.linalg.norm(s - t)))


def corr_matrix(model, set_a, set_b=None):
    """Correlation matrix between two point sets (set_b defaults to set_a)."""
    a = np.atleast_2d(np.asarray(set_a, dtype=np.float64))
    b = a if set_b is None else np.atleast_2d(np.asarray(set_b, dtype=np.float64))
    out = model.of_distance(cdist(a, b))
    if set_b is None:
        np.fill_diagonal(out, 1.0)
        out = 0.5 * (out + out.T)
    return out


# =========================
# Ordering
# =========================


@dataclass
class LocationSet:
    """Ordered locations plus the permutation used to order them.

    coords[i] is the i-th location in model order; order[i] is its row in the
    caller's original array, and rank is the inverse map.
    """

    coords: np.ndarray
    order: np.ndarray
    strategy: str

    @property
    def n(self):
        return self.coords.shape[0]

    @property
    def d(self):
        return self.coords.shape[1]

    @property
    def rank(self):
        inv = np.empty_like(self.order)
        inv[self.order] = np.arange(self.order.size)
        return inv


def order_locations(points, strategy="sum", permutation=None):
    """Apply an ordering strategy and return the ordered LocationSet.

    Strategies: "sum" (coordinate sum, the default), "x", "y", or "given"
    with an explicit permutation. Ties keep the original relative order.
    Duplicate coordinate rows are rejected.
    """
    coords = check_coords(points)
    n, d = coords.shape
    if strategy == "sum":
        key = coords.sum(axis=1)
        order = np.argsort(key, kind="stable")
    elif strategy == "x":
        order = np.argsort(coords[:, 0], kind="stable")
    elif strategy == "y":
        if d < 2:
            raise ValidationError("strategy 'y' needs at least 2 coordinate dimensions")
        order = np.argsort(coords[:, 1], kind="stable")
    elif strategy == "given":
        if permutation is None:
            raise ValidationError("strategy 'given' requires a permutation")
        order = np.asarray(permutation, dtype=np.int64)
        if order.shape != (n,) or not np.array_equal(np.sort(order), np.arange(n)):
            raise ValidationError("permutation must be a bijection on 0..n-1")
    else:
        raise ValidationError("unknown ordering strategy %r" % strategy)
    return LocationSet(coords=np.ascontiguousarray(coords[order]),
                       order=np.ascontiguousarray(order), strategy=strategy)


# =========================
# Neighbor graphs
# =========================


@dataclass
class NeighborGraph:
    """Padded nearest-neighbor sets against a reference point set.

    indices[i, :counts[i]] are reference indices sorted ascending; remaining
    slots are 0 and masked by counts. mode is "training" (neighbors among
    predecessors in the ordering) or "prediction" (neighbors among the full
    reference set).
    """

    indices: np.ndarray
    counts: np.ndarray
    mode: str
    m: int
    ref_coords: np.ndarray
    query_coords: np.ndarray
    _dist_cache: tuple | None = field(default=None, repr=False)

    @property
    def n_queries(self):
        return self.query_coords.shape[0]

    @property
    def n_reference(self):
        return self.ref_coords.shape[0]

    @property
    def width(self):
        return self.indices.shape[1]

    @property
    def valid(self):
        return np.arange(self.width)[None, :] < self.counts[:, None]

    def neighbor_sets(self):
        return [self.indices[i, : self.counts[i]].copy() for i in range(self.n_queries)]

    def distances(self, chunk=20000):
        """Cached (query-to-neighbor, neighbor-pair) distance arrays.

        Returns (self_dist (n, w), pair_dist (n, w, w)); padded slots hold 0.
        These are hyperparameter-free, so cross-validation reuses them across
        every (phi, alpha) grid cell.
        """
        if self._dist_cache is not None:
            return self._dist_cache
        n, w = self.indices.shape
        self_dist = np.zeros((n, w))
        pair_dist = np.zeros((n, w, w))
        for lo in range(0, n, chunk):
            hi = min(n, lo + chunk)
            nb = self.ref_coords[self.indices[lo:hi]]          # (c, w, d)
            dq = nb - self.query_coords[lo:hi, None, :]
            self_dist[lo:hi] = np.sqrt(np.einsum("cwd,cwd->cw", dq, dq))
            dp = nb[:, :, None, :] - nb[:, None, :, :]
            pair_dist[lo:hi] = np.sqrt(np.einsum("cjkd,cjkd->cjk", dp, dp))
        self._dist_cache = (self_dist, pair_dist)
        return self._dist_cache


def _row_sorted(dist, cand):
    """Sort candidates within each row by (distance, index)."""
    r, k = dist.shape
    rows = np.repeat(np.arange(r), k)
    perm = np.lexsort((cand.ravel(), dist.ravel(), rows))
    return dist.ravel()[perm].reshape(r, k), cand.ravel()[perm].reshape(r, k)


def _store_sorted(indices_block, need_block, width):
    """Pad rows to `width`, sorting each row's kept indices ascending."""
    r = indices_block.shape[0]
    out = np.zeros((r, width), dtype=np.int64)
    if width == 0:
        return out
    keep = np.arange(width)[None, :] < need_block[:, None]
    tmp = np.where(keep, indices_block[:, :width], np.iinfo(np.int64).max)
    tmp.sort(axis=1)
    return np.where(keep, tmp, 0)


def _dense_select(query_coords, ref_coords, need, pred_row=None):
    """Exhaustive (distance, index) selection; pred_row limits to indices < row."""
    dist = cdist(query_coords, ref_coords)
    cand = np.broadcast_to(np.arange(ref_coords.shape[0]), dist.shape).copy()
    if pred_row is not None:
        dist = np.where(cand < pred_row[:, None], dist, np.inf)
    sd, sc = _row_sorted(dist, cand)
    width = int(need.max()) if need.size else 0
    return _store_sorted(sc, need, width)


def _tree_select(query_coords, ref_coords, need, pred_row=None):
    """kd-tree (distance, index) selection with tie-complete escalation."""
    n_ref = ref_coords.shape[0]
    nq = query_coords.shape[0]
    width = int(need.max()) if need.size else 0
    out = np.zeros((nq, width), dtype=np.int64)
    tree = cKDTree(ref_coords)
    pending = np.flatnonzero(need > 0)
    k = min(n_ref, width + 2 if pred_row is None else width + 3)
    while pending.size:
        d, nb = tree.query(query_coords[pending], k=k)
        d = np.atleast_2d(d.reshape(pending.size, -1))
        nb = np.atleast_2d(nb.reshape(pending.size, -1))
        if pred_row is not None:
            mask = nb < pred_row[pending][:, None]
            dm = np.where(mask, d, np.inf)
        else:
            mask = np.ones_like(nb, dtype=bool)
            dm = d
        cnt = mask.sum(axis=1)
        sd, sc = _row_sorted(dm, nb)
        nd = need[pending]
        rowpos = np.arange(pending.size)
        enough = cnt >= nd
        cutoff = sd[rowpos, np.maximum(nd, 1) - 1]
        # complete when every point at distance <= cutoff is inside the
        # candidate set; equality with the farthest candidate may hide a tie
        complete = enough & ((k >= n_ref) | (cutoff < d[:, -1]))
        done = np.flatnonzero(complete)
        if done.size:
            out[pending[done]] = _store_sorted(sc[done], nd[done], width)
        pending = pending[~complete]
        if k >= n_ref and pending.size:
            raise AssertionError("neighbor selection failed to complete")
        k = min(n_ref, 2 * k + 2)
    return out


def build_training_neighbors(locs, m):
    """Nearest predecessors in the ordering: |N(i)| = min(i, m) for row i (0-based)."""
    m = check_neighbors(m)
    coords = locs.coords
    n = coords.shape[0]
    m_eff = min(m, max(n - 1, 0))
    need = np.minimum(np.arange(n), m_eff)
    pred_row = np.arange(n)
    if n < _EXHAUSTIVE_LIMIT:
        idx = _dense_select(coords, coords, need, pred_row)
    else:
        idx = _tree_select(coords, coords, need, pred_row)
    if idx.shape[1] != m_eff:  # happens only when need.max() < m_eff is impossible; keep shape
        idx = np.pad(idx, ((0, 0), (0, m_eff - idx.shape[1])))
    return NeighborGraph(indices=idx, counts=need, mode="training", m=m,
                         ref_coords=coords, query_coords=coords)


def build_prediction_neighbors(reference, queries, m):
    """m nearest reference points for each query (min(m, n_ref) per row)."""
    m = check_neighbors(m)
    ref = reference.coords if isinstance(reference, LocationSet) else check_coords(reference)
    # queries may repeat each other or coincide with reference points
    qry = queries.coords if isinstance(queries, LocationSet) else as_matrix(queries, "queries")
    if ref.shape[0] == 0:
        raise ValidationError("reference set is empty")
    if ref.shape[1] != qry.shape[1]:
        raise ValidationError("reference and query dimensions differ")
    n_ref = ref.shape[0]
    nq = qry.shape[0]
    need = np.full(nq, min(m, n_ref), dtype=np.int64)
    if n_ref < _EXHAUSTIVE_LIMIT:
        idx = _dense_select(qry, ref, need)
    else:
        idx = _tree_select(qry, ref, need)
    return NeighborGraph(indices=idx, counts=need, mode="prediction", m=m,
                         ref_coords=ref, query_coords=qry)
