"""K-fold cross-validation of (phi, alpha) by summed prediction RMSPE.

Folds are split once per search; orderings and neighbor graphs are rebuilt
per fold (never on the full data) but cached across grid cells since they do
not depend on phi or alpha. Fits inside CV use posterior means only — no
sampling — so a 25x25 grid stays cheap.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import ModelError, ValidationError
from .latent import assemble_augmented, fit_latent
from .response import PriorSpec, fit_response
from .spatial import (CorrelationModel, build_prediction_neighbors,
                      build_training_neighbors, order_locations)
from .validation import check_alpha, check_neighbors, check_phi
from .vecchia import build_factor, build_prediction_weights

_KINDS = ("response", "latent")


def resolve_jobs(n_jobs=None):
    """Worker count: explicit argument, else CONJNNGP_JOBS, else all cores."""
    if n_jobs is None:
        n_jobs = os.environ.get("CONJNNGP_JOBS")
    if n_jobs is None:
        return os.cpu_count() or 1
    n_jobs = int(n_jobs)
    if n_jobs < 1:
        raise ValidationError("job count must be >= 1, got %d" % n_jobs)
    return n_jobs


def make_folds(n, k, seed=0):
    """Uniformly random fold labels in [0, k), sizes differing by at most 1."""
    n, k = int(n), int(k)
    if k < 2:
        raise ValidationError("fold count K must be >= 2, got %d" % k)
    if k > n:
        raise ValidationError("fold count K=%d exceeds n=%d" % (k, n))
    labels = np.empty(n, dtype=np.int64)
    labels[np.random.default_rng(seed).permutation(n)] = np.arange(n) % k
    return labels


# =========================
# Fold contexts (phi/alpha independent work, done once)
# =========================


@dataclass
class _FoldContext:
    train: object
    graph: object
    pred_graph: object
    test_x: np.ndarray
    test_y: np.ndarray


def _fold_contexts(data, labels, k, m, ordering):
    out = []
    for fold in range(k):
        test = labels == fold
        if test.all() or not test.any():
            raise ValidationError("fold %d leaves an empty train or test set" % fold)
        sub = data.take(np.flatnonzero(~test))
        locs = order_locations(sub.coords, ordering)
        train = sub.take(locs.order)
        graph = build_training_neighbors(locs, m)
        graph.distances()
        pred_graph = build_prediction_neighbors(locs, data.coords[test], m)
        pred_graph.distances()
        out.append(_FoldContext(train=train, graph=graph, pred_graph=pred_graph,
                                test_x=data.x[test], test_y=data.y[test]))
    return out


def _fold_rmspe(ctx, phi, alpha, kind, prior, lsmr_options):
    corr = CorrelationModel(phi)
    if kind == "response":
        factor = build_factor(ctx.graph, corr, alpha, "response")
        post = fit_response(ctx.train, factor, prior)
        beta, resid = post.mu, ctx.train.y - ctx.train.x @ post.mu
        weights = build_prediction_weights(ctx.pred_graph, corr, alpha, "response")
        pred = ctx.test_x @ beta + weights.apply(resid)
    else:
        factor = build_factor(ctx.graph, corr, alpha, "latent")
        system = assemble_augmented(ctx.train, factor, prior, alpha=alpha)
        post = fit_latent(system, prior, lsmr_options)
        weights = build_prediction_weights(ctx.pred_graph, corr, alpha, "latent")
        pred = ctx.test_x @ post.beta_mean + weights.apply(post.omega_mean)
    return float(np.sqrt(np.mean((ctx.test_y - pred) ** 2)))


def cv_score(data, phi, alpha, m=10, k=5, kind="response", seed=0,
             prior=None, lsmr_options=None, ordering="sum"):
    """Summed over folds of per-fold pooled RMSPE; deterministic given seed."""
    if kind not in _KINDS:
        raise ValidationError("kind must be one of %s, got %r" % (_KINDS, kind))
    phi = check_phi(phi)
    alpha = check_alpha(alpha, allow_one=kind == "response")
    m = check_neighbors(m)
    prior = prior or PriorSpec()
    labels = make_folds(data.n, k, seed)
    contexts = _fold_contexts(data, labels, int(k), m, ordering)
    return sum(_fold_rmspe(ctx, phi, alpha, kind, prior, lsmr_options)
               for ctx in contexts)


# =========================
# Grid search
# =========================


@dataclass
class CVGrid:
    """Candidate grid: phi and alpha values (ascending), folds, kind, seed."""

    phi_values: np.ndarray
    alpha_values: np.ndarray
    k: int = 5
    kind: str = "response"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValidationError("kind must be one of %s, got %r" % (_KINDS, self.kind))
        self.phi_values = np.sort(np.array(
            [check_phi(v) for v in np.atleast_1d(self.phi_values)]))
        allow_one = self.kind == "response"
        self.alpha_values = np.sort(np.array(
            [check_alpha(v, allow_one=allow_one) for v in np.atleast_1d(self.alpha_values)]))
        self.k = int(self.k)
        if self.k < 2:
            raise ValidationError("fold count K must be >= 2, got %d" % self.k)

    @classmethod
    def default(cls, kind="response", k=5, seed=0):
        """25x25 grid over phi in [2.12, 26.52], alpha in [0.8, 0.99]."""
        return cls(phi_values=np.linspace(2.12, 26.52, 25),
                   alpha_values=np.linspace(0.8, 0.99, 25),
                   k=k, kind=kind, seed=seed)


@dataclass
class CVResult:
    """Scores over the grid plus the selected cell (argmin, ties to the
    smallest phi then the smallest alpha)."""

    phi_values: np.ndarray
    alpha_values: np.ndarray
    scores: np.ndarray
    fold_scores: np.ndarray
    phi: float
    alpha: float
    kind: str
    k: int
    errors: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    def to_frame(self):
        """Score matrix as a DataFrame, rows phi and columns alpha."""
        import pandas as pd

        return pd.DataFrame(self.scores, index=self.phi_values,
                            columns=self.alpha_values)


def _score_grid(contexts, grid, prior, lsmr_options, n_jobs):
    np_, na = grid.phi_values.size, grid.alpha_values.size
    k = len(contexts)
    fold_scores = np.full((np_, na, k), np.nan)
    errors = {}
    cells = [(i, j) for i in range(np_) for j in range(na)]

    def run(cell):
        i, j = cell
        out = np.empty(k)
        for f, ctx in enumerate(contexts):
            out[f] = _fold_rmspe(ctx, grid.phi_values[i], grid.alpha_values[j],
                                 grid.kind, prior, lsmr_options)
        return out

    if n_jobs == 1:
        for cell in cells:
            try:
                fold_scores[cell] = run(cell)
            except (ModelError, np.linalg.LinAlgError) as err:
                errors[cell] = str(err)
    else:
        with threadpool_limits(limits=1), ThreadPoolExecutor(max_workers=n_jobs) as pool:
            futures = {cell: pool.submit(run, cell) for cell in cells}
        for cell, fut in futures.items():
            try:
                fold_scores[cell] = fut.result()
            except (ModelError, np.linalg.LinAlgError) as err:
                errors[cell] = str(err)
    return fold_scores, errors


def _run_search(data, grid, contexts, prior, lsmr_options, n_jobs):
    fold_scores, errors = _score_grid(contexts, grid, prior, lsmr_options, n_jobs)
    scores = fold_scores.sum(axis=2)
    masked = np.where(np.isnan(scores), np.inf, scores)
    if not np.isfinite(masked).any():
        raise ModelError("every grid cell failed; first error: %s"
                         % next(iter(errors.values())))
    # C-order argmin takes the first minimum: smallest phi, then smallest alpha
    i, j = np.unravel_index(np.argmin(masked), masked.shape)
    return CVResult(phi_values=grid.phi_values, alpha_values=grid.alpha_values,
                    scores=scores, fold_scores=fold_scores,
                    phi=float(grid.phi_values[i]), alpha=float(grid.alpha_values[j]),
                    kind=grid.kind, k=grid.k, errors=errors)


def _refined(grid, result):
    def shrink(values, center, lo_min, hi_max):
        count = values.size
        half = (values[-1] - values[0]) / 4.0
        lo = max(center - half, lo_min)
        hi = min(center + half, hi_max)
        return np.linspace(lo, hi, count)

    hi_alpha = 1.0 if grid.kind == "response" else 1.0 - 1e-9
    return CVGrid(phi_values=shrink(grid.phi_values, result.phi, 1e-9, np.inf),
                  alpha_values=shrink(grid.alpha_values, result.alpha, 1e-9, hi_alpha),
                  k=grid.k, kind=grid.kind, seed=grid.seed)


def grid_search(data, grid, m=10, prior=None, lsmr_options=None, refine=0,
                n_jobs=None, ordering="sum"):
    """Score every (phi, alpha) cell by K-fold CV and select the argmin.

    Failed cells are recorded in CVResult.errors and skipped by the
    selection; refine > 0 repeats the search on grids of the same size
    re-centered on the selection with half the span.
    """
    m = check_neighbors(m)
    prior = prior or PriorSpec()
    n_jobs = resolve_jobs(n_jobs)
    labels = make_folds(data.n, grid.k, grid.seed)
    contexts = _fold_contexts(data, labels, grid.k, m, ordering)
    result = _run_search(data, grid, contexts, prior, lsmr_options, n_jobs)
    history = []
    for _ in range(int(refine)):
        history.append({"phi_values": result.phi_values, "alpha_values": result.alpha_values,
                        "scores": result.scores, "phi": result.phi, "alpha": result.alpha})
        grid = _refined(grid, result)
        result = _run_search(data, grid, contexts, prior, lsmr_options, n_jobs)
    result.history = history
    return result
