"""Command-line workflows: simulate, cv, fit, predict, metrics, kl-demo, raster.

File conventions: datasets are CSV with columns coord_1..coord_d, x_1..x_p,
y_1..y_q and an optional 0/1 holdout column; summaries and configs are JSON.
All CSV floats are written with 17 significant digits so round trips are
lossless. Errors leave exit code nonzero and one JSON object on stderr.
"""

import json
import os
import sys

import click
import numpy as np
import pandas as pd

from . import __version__
from .crossval import CVGrid, grid_search
from .dataset import Dataset
from .errors import ModelError, ValidationError
from .estimators import LatentNNGP, ResponseNNGP
from .linalg import make_rng
from .metrics import (frobenius_shrink_check, kl_gaussian_zero_mean,
                      score_predictions, toy_covariances)
from .response import PredictionSummary, PriorSpec
from .simulate import SimConfig, generate
from .sparse import LsmrOptions
from .spatial import build_training_neighbors, order_locations

_FMT = "%.17g"
_RASTER_CHUNK = 50000

# =========================
# CSV helpers
# =========================


def _indexed_columns(prefix, columns):
    """Columns named prefix1..prefixK in index order; error on gaps."""
    found = {}
    for name in columns:
        if name.startswith(prefix):
            tail = name[len(prefix):]
            if tail.isdigit():
                found[int(tail)] = name
    if not found:
        return []
    top = max(found)
    missing = [i for i in range(1, top + 1) if i not in found]
    if missing:
        raise ValidationError("column %s%d is missing (found up to %s%d)"
                              % (prefix, missing[0], prefix, top))
    return [found[i] for i in range(1, top + 1)]


def _frame(path):
    try:
        # the default float parser is off by one ulp on some values, which
        # would break the documented lossless round trip
        df = pd.read_csv(path, float_precision="round_trip")
    except pd.errors.EmptyDataError:
        raise ValidationError("%s is empty" % path) from None
    if df.shape[0] == 0:
        raise ValidationError("%s has no data rows" % path)
    return df


def read_dataset(path):
    """(Dataset, holdout mask or None) from a dataset CSV."""
    df = _frame(path)
    coord_cols = _indexed_columns("coord_", df.columns)
    x_cols = _indexed_columns("x_", df.columns)
    y_cols = _indexed_columns("y_", df.columns)
    if not coord_cols:
        raise ValidationError("%s has no coord_* columns" % path)
    if not y_cols:
        raise ValidationError("%s has no y_* columns" % path)
    n = df.shape[0]
    x = df[x_cols].to_numpy(dtype=np.float64) if x_cols else np.zeros((n, 0))
    data = Dataset(df[coord_cols].to_numpy(dtype=np.float64), x,
                   df[y_cols].to_numpy(dtype=np.float64))
    holdout = None
    if "holdout" in df.columns:
        holdout = df["holdout"].to_numpy() != 0
    return data, holdout


def read_queries(path, p):
    """(coords, x) for prediction; y columns, if any, are ignored."""
    df = _frame(path)
    coord_cols = _indexed_columns("coord_", df.columns)
    if not coord_cols:
        raise ValidationError("%s has no coord_* columns" % path)
    coords = df[coord_cols].to_numpy(dtype=np.float64)
    x_cols = _indexed_columns("x_", df.columns)
    if len(x_cols) != p:
        raise ValidationError("query file has %d x_* columns, the model needs %d"
                              % (len(x_cols), p))
    x = df[x_cols].to_numpy(dtype=np.float64) if p else np.zeros((coords.shape[0], 0))
    return coords, x, df


def _write_csv(path, columns):
    pd.DataFrame(dict(columns)).to_csv(path, index=False, float_format=_FMT)


def _numbered(prefix, arr):
    arr = np.atleast_2d(arr)
    return [("%s%d" % (prefix, j + 1), arr[:, j]) for j in range(arr.shape[1])]


def dataset_columns(coords, x, y, holdout=None):
    cols = _numbered("coord_", coords) + _numbered("x_", x) + _numbered("y_", y)
    if holdout is not None:
        cols.append(("holdout", holdout.astype(int)))
    return cols


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _emit(payload):
    click.echo(json.dumps(payload, sort_keys=True))


# =========================
# Shared model plumbing
# =========================


def _prior_from_flags(nu, psi_diag, q=None):
    if nu is None and psi_diag is None:
        return PriorSpec(), {"kind": "flat-default"}
    psi = None
    if psi_diag is not None:
        vals = [float(v) for v in str(psi_diag).split(",")]
        if len(vals) == 1 and q is not None:
            vals = vals * q
        psi = np.diag(vals)
    return PriorSpec(psi=psi, nu=nu), {"kind": "flat-default", "nu": nu,
                                       "psi_diag": psi_diag}


def _lsmr_from_flags(atol, btol, maxiter):
    if atol is None and btol is None and maxiter is None:
        return None, None
    opts = LsmrOptions(atol=atol if atol is not None else 1e-10,
                       btol=btol if btol is not None else 1e-10,
                       max_iterations=maxiter)
    return opts, {"atol": opts.atol, "btol": opts.btol, "max_iterations": maxiter}


def _make_estimator(kind, phi, alpha, m, ordering, prior, lsmr_options):
    if kind == "response":
        return ResponseNNGP(phi=phi, alpha=alpha, n_neighbors=m, ordering=ordering,
                            prior=prior)
    if kind == "latent":
        return LatentNNGP(phi=phi, alpha=alpha, n_neighbors=m, ordering=ordering,
                          prior=prior, lsmr_options=lsmr_options)
    raise ValidationError("kind must be 'response' or 'latent', got %r" % kind)


def _load_run(run_dir):
    """Rebuild the fitted estimator recorded in a run directory."""
    cfg_path = os.path.join(run_dir, "run_config.json")
    if not os.path.isfile(cfg_path):
        raise ValidationError("%s does not look like a run directory "
                              "(run_config.json missing)" % run_dir)
    with open(cfg_path) as fh:
        cfg = json.load(fh)
    data, _ = read_dataset(os.path.join(run_dir, cfg["train_file"]))
    prior, _ = _prior_from_flags(cfg["prior"].get("nu"), cfg["prior"].get("psi_diag"),
                                 q=data.q)
    lsmr_cfg = cfg.get("lsmr") or {}
    lsmr_opts, _ = _lsmr_from_flags(lsmr_cfg.get("atol"), lsmr_cfg.get("btol"),
                                    lsmr_cfg.get("max_iterations"))
    model = _make_estimator(cfg["kind"], cfg["phi"], cfg["alpha"], cfg["m"],
                            cfg["ordering"], prior, lsmr_opts)
    model.fit(data.coords, data.x, data.y)
    return model, cfg


def _mat(a):
    return np.asarray(a, dtype=np.float64).tolist()


def _quantile_summary(draws):
    """dict of mean/sd/2.5%/97.5% along axis 0."""
    lo, hi = np.quantile(draws, [0.025, 0.975], axis=0)
    return {"mean": _mat(draws.mean(axis=0)), "sd": _mat(draws.std(axis=0, ddof=1)),
            "q025": _mat(lo), "q975": _mat(hi)}


# =========================
# Commands
# =========================


@click.group(name="conjnngp")
@click.version_option(version=__version__)
def cli_group():
    """Conjugate spatial regression with nearest-neighbor Gaussian processes."""


@cli_group.command("simulate")
@click.option("--n", default=1200, show_default=True, type=int)
@click.option("--holdout", "n_holdout", default=200, show_default=True, type=int)
@click.option("--phi", default=6.0, show_default=True, type=float)
@click.option("--alpha", default=0.9, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--beta", "beta_json", default=None,
              help="true beta as a JSON matrix, default [[1,1],[-2,2]]")
@click.option("--sigma", "sigma_json", default=None,
              help="true Sigma as a JSON matrix, default 9*[[.222,-.111],[-.111,.167]]")
@click.option("--out", "out_dir", default=".", show_default=True,
              type=click.Path(file_okay=False))
def cmd_simulate(n, n_holdout, phi, alpha, seed, beta_json, sigma_json, out_dir):
    """Generate a synthetic dataset plus a ground-truth sidecar."""
    kwargs = dict(n=n, phi=phi, alpha=alpha, n_holdout=n_holdout, seed=seed)
    if beta_json is not None:
        kwargs["beta"] = np.asarray(json.loads(beta_json), dtype=np.float64)
    if sigma_json is not None:
        kwargs["sigma"] = np.asarray(json.loads(sigma_json), dtype=np.float64)
    config = SimConfig(**kwargs)
    out = generate(config)
    os.makedirs(out_dir, exist_ok=True)

    parts = [(out.train, out.omega_train, 0)]
    if out.holdout is not None:
        parts.append((out.holdout, out.omega_holdout, 1))
    coords = np.vstack([ds.coords for ds, _, _ in parts])
    x = np.vstack([ds.x for ds, _, _ in parts])
    y = np.vstack([ds.y for ds, _, _ in parts])
    omega = np.vstack([om for _, om, _ in parts])
    flags = np.concatenate([np.full(ds.n, f) for ds, _, f in parts])

    data_path = os.path.join(out_dir, "data.csv")
    truth_path = os.path.join(out_dir, "truth.csv")
    record_path = os.path.join(out_dir, "record.json")
    _write_csv(data_path, dataset_columns(coords, x, y, flags))
    surface = omega + config.beta[0]  # latent surface plus the true intercepts
    _write_csv(truth_path, _numbered("coord_", coords) + _numbered("omega_", omega)
               + _numbered("surface_", surface) + [("holdout", flags.astype(int))])
    _write_json(record_path, dict(out.record, version=__version__))
    _emit({"data": data_path, "truth": truth_path, "record": record_path,
           "n": config.n, "holdout": config.n_holdout})


@cli_group.command("cv")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--kind", default="response", show_default=True,
              type=click.Choice(["response", "latent"]))
@click.option("--phi-min", default=2.12, show_default=True, type=float)
@click.option("--phi-max", default=26.52, show_default=True, type=float)
@click.option("--phi-count", default=25, show_default=True, type=int)
@click.option("--alpha-min", default=0.8, show_default=True, type=float)
@click.option("--alpha-max", default=0.99, show_default=True, type=float)
@click.option("--alpha-count", default=25, show_default=True, type=int)
@click.option("--folds", default=5, show_default=True, type=int)
@click.option("--m", default=10, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--refine", default=0, show_default=True, type=int)
@click.option("--jobs", default=None, type=int, help="worker threads, default all cores")
@click.option("--ordering", default="sum", show_default=True,
              type=click.Choice(["sum", "x", "y"]))
@click.option("--lsmr-atol", default=None, type=float)
@click.option("--lsmr-btol", default=None, type=float)
@click.option("--lsmr-maxiter", default=None, type=int)
@click.option("--out", "out_dir", default=".", show_default=True,
              type=click.Path(file_okay=False))
def cmd_cv(data_path, kind, phi_min, phi_max, phi_count, alpha_min, alpha_max,
           alpha_count, folds, m, seed, refine, jobs, ordering,
           lsmr_atol, lsmr_btol, lsmr_maxiter, out_dir):
    """Select (phi, alpha) by K-fold CV over a grid; writes the score matrix."""
    data, holdout = read_dataset(data_path)
    if holdout is not None:
        data = data.take(np.flatnonzero(~holdout))
    if phi_count < 1 or alpha_count < 1:
        raise ValidationError("grid counts must be >= 1")
    grid = CVGrid(phi_values=np.linspace(phi_min, phi_max, phi_count),
                  alpha_values=np.linspace(alpha_min, alpha_max, alpha_count),
                  k=folds, kind=kind, seed=seed)
    lsmr_opts, _ = _lsmr_from_flags(lsmr_atol, lsmr_btol, lsmr_maxiter)
    result = grid_search(data, grid, m=m, lsmr_options=lsmr_opts, refine=refine,
                         n_jobs=jobs, ordering=ordering)
    os.makedirs(out_dir, exist_ok=True)
    scores_path = os.path.join(out_dir, "cv_scores.csv")
    result.to_frame().to_csv(scores_path, float_format=_FMT, index_label="phi")
    summary = {"phi": result.phi, "alpha": result.alpha, "kind": kind, "k": folds,
               "m": m, "seed": seed, "failed_cells": len(result.errors),
               "scores": scores_path}
    _write_json(os.path.join(out_dir, "cv_result.json"), summary)
    _emit(summary)


@cli_group.command("fit")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--kind", default="response", show_default=True,
              type=click.Choice(["response", "latent"]))
@click.option("--phi", required=True, type=float)
@click.option("--alpha", required=True, type=float)
@click.option("--m", default=10, show_default=True, type=int)
@click.option("--ordering", default="sum", show_default=True,
              type=click.Choice(["sum", "x", "y"]))
@click.option("--draws", default=500, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--nu", default=None, type=float)
@click.option("--psi-diag", default=None,
              help="comma-separated diagonal for the IW scale, default identity")
@click.option("--lsmr-atol", default=None, type=float)
@click.option("--lsmr-btol", default=None, type=float)
@click.option("--lsmr-maxiter", default=None, type=int)
@click.option("--out", "out_dir", default="run", show_default=True,
              type=click.Path(file_okay=False))
def cmd_fit(data_path, kind, phi, alpha, m, ordering, draws, seed, nu, psi_diag,
            lsmr_atol, lsmr_btol, lsmr_maxiter, out_dir):
    """Fit a model, draw exact posterior samples, write a run directory."""
    if draws < 0:
        raise ValidationError("--draws must be >= 0")
    data, holdout = read_dataset(data_path)
    if holdout is not None:
        data = data.take(np.flatnonzero(~holdout))
    prior, prior_cfg = _prior_from_flags(nu, psi_diag, q=data.q)
    lsmr_opts, lsmr_cfg = _lsmr_from_flags(lsmr_atol, lsmr_btol, lsmr_maxiter)
    model = _make_estimator(kind, phi, alpha, m, ordering, prior, lsmr_opts)
    model.fit(data.coords, data.x, data.y)

    os.makedirs(out_dir, exist_ok=True)
    _write_csv(os.path.join(out_dir, "train.csv"),
               dataset_columns(data.coords, data.x, data.y))
    _write_json(os.path.join(out_dir, "run_config.json"),
                {"kind": kind, "phi": phi, "alpha": alpha, "m": m,
                 "ordering": ordering, "draws": draws, "seed": seed,
                 "prior": prior_cfg, "lsmr": lsmr_cfg,
                 "train_file": "train.csv", "version": __version__})

    post = model.posterior_
    summary = {"kind": kind, "phi": phi, "alpha": alpha, "m": m,
               "n": data.n, "p": data.p, "q": data.q,
               "nu_star": float(post.nu), "psi_star": _mat(post.psi),
               "beta_mean": _mat(post.mu if kind == "response" else post.beta_mean),
               "draws": draws, "seed": seed, "version": __version__}

    if draws > 0:
        samples = model.sample(n_draws=draws, random_state=seed)
        kept = samples.n_draws
        summary["draws_kept"] = kept
        summary["draws_excluded"] = samples.excluded
        summary["beta"] = _quantile_summary(samples.beta)
        summary["sigma"] = _quantile_summary(samples.sigma)
        summary["cov_epsilon"] = _quantile_summary((1.0 / alpha - 1.0) * samples.sigma)
        p, q = data.p, data.q
        _write_csv(os.path.join(out_dir, "beta_samples.csv"),
                   [("beta_%d_%d" % (i + 1, j + 1), samples.beta[:, i, j])
                    for i in range(p) for j in range(q)])
        _write_csv(os.path.join(out_dir, "sigma_samples.csv"),
                   [("sigma_%d_%d" % (i + 1, j + 1), samples.sigma[:, i, j])
                    for i in range(q) for j in range(i, q)])
        if kind == "latent":
            # empirical covariance across sites, one matrix per draw
            centered = samples.omega - samples.omega.mean(axis=1, keepdims=True)
            cov_omega = np.einsum("lnq,lnr->lqr", centered, centered) / (data.n - 1)
            summary["cov_omega"] = _quantile_summary(cov_omega)
            rank = model.locations_.rank
            omega_orig = samples.omega[:, rank, :]
            surface = omega_orig + samples.beta[:, :1, :] if p else omega_orig
            cols = _numbered("coord_", data.coords)
            for label, arr in (("omega", omega_orig), ("surface", surface)):
                stats = _quantile_summary(arr)
                for stat_name, key in (("mean", "mean"), ("sd", "sd"),
                                       ("lower", "q025"), ("upper", "q975")):
                    cols += _numbered("%s_%s_" % (label, stat_name),
                                      np.asarray(stats[key]))
            _write_csv(os.path.join(out_dir, "omega_summary.csv"), cols)
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    _emit({"run": out_dir, "kind": kind, "n": data.n, "draws": draws,
           "summary": os.path.join(out_dir, "summary.json")})


@cli_group.command("predict")
@click.option("--run", "run_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--queries", "query_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--holdout-from", "holdout_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="dataset CSV whose holdout-flagged rows become the queries")
@click.option("--draws", default=500, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--level", default=0.95, show_default=True, type=float)
@click.option("--out", "out_path", default="predictions.csv", show_default=True,
              type=click.Path(dir_okay=False))
def cmd_predict(run_dir, query_path, holdout_path, draws, seed, level, out_path):
    """Posterior predictive summaries at query sites from a fitted run."""
    if draws < 1:
        raise ValidationError("--draws must be >= 1")
    model, _ = _load_run(run_dir)
    if (query_path is None) == (holdout_path is None):
        raise ValidationError("pass exactly one of --queries or --holdout-from")
    if holdout_path is not None:
        data, holdout = read_dataset(holdout_path)
        if holdout is None or not holdout.any():
            raise ValidationError("%s has no holdout-flagged rows" % holdout_path)
        rows = np.flatnonzero(holdout)
        coords, x = data.coords[rows], data.x[rows]
    else:
        coords, x, _ = read_queries(query_path, model.p_)
    summary = model.predict(coords, x, n_draws=draws, random_state=seed, level=level)
    cols = _numbered("coord_", coords)
    for label, arr in (("mean_", summary.mean), ("sd_", summary.sd),
                       ("lower_", summary.lower), ("upper_", summary.upper)):
        cols += _numbered(label, arr)
    if summary.omega_mean is not None:
        for label, arr in (("omega_mean_", summary.omega_mean),
                           ("omega_sd_", summary.omega_sd),
                           ("omega_lower_", summary.omega_lower),
                           ("omega_upper_", summary.omega_upper)):
            cols += _numbered(label, arr)
    _write_csv(out_path, cols)
    _emit({"predictions": out_path, "n_queries": int(coords.shape[0]),
           "draws": draws, "level": level})


@cli_group.command("metrics")
@click.option("--predictions", "pred_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--truth", "truth_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--latent-summary", "latent_summary_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="omega_summary.csv from a latent fit")
@click.option("--latent-truth", "latent_truth_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="truth sidecar with surface_* columns")
@click.option("--out", "out_path", default=None, type=click.Path(dir_okay=False))
def cmd_metrics(pred_path, truth_path, latent_summary_path, latent_truth_path, out_path):
    """Score predictions against truth; optionally score latent surfaces."""
    pred = _frame(pred_path)
    truth_data, truth_holdout = read_dataset(truth_path)
    rows = np.arange(truth_data.n)
    if truth_data.n != pred.shape[0]:
        if truth_holdout is not None and int(truth_holdout.sum()) == pred.shape[0]:
            rows = np.flatnonzero(truth_holdout)
        else:
            raise ValidationError("predictions have %d rows, truth has %d and no "
                                  "matching holdout flags" % (pred.shape[0], truth_data.n))
    _check_aligned(pred, truth_data.coords[rows], pred_path, truth_path)
    y = truth_data.y[rows]
    q = y.shape[1]

    def block(frame, prefix, count):
        names = _indexed_columns(prefix, frame.columns)
        if len(names) != count:
            raise ValidationError("expected %d %s* columns, found %d"
                                  % (count, prefix, len(names)))
        return frame[names].to_numpy(dtype=np.float64)

    summary = PredictionSummary(mean=block(pred, "mean_", q), sd=block(pred, "sd_", q),
                                lower=block(pred, "lower_", q),
                                upper=block(pred, "upper_", q), level=0.95)
    latent_kwargs = {}
    if (latent_summary_path is None) != (latent_truth_path is None):
        raise ValidationError("--latent-summary and --latent-truth go together")
    if latent_summary_path is not None:
        ls = _frame(latent_summary_path)
        lt = _frame(latent_truth_path)
        lt_coords = lt[_indexed_columns("coord_", lt.columns)].to_numpy(dtype=np.float64)
        lt_rows = np.arange(lt.shape[0])
        if lt.shape[0] != ls.shape[0]:
            if "holdout" in lt.columns and int((lt["holdout"] == 0).sum()) == ls.shape[0]:
                lt_rows = np.flatnonzero(lt["holdout"].to_numpy() == 0)
            else:
                raise ValidationError("latent summary has %d rows, latent truth %d"
                                      % (ls.shape[0], lt.shape[0]))
        _check_aligned(ls, lt_coords[lt_rows], latent_summary_path, latent_truth_path)
        lq = len(_indexed_columns("surface_", lt.columns))
        if lq == 0:
            raise ValidationError("%s has no surface_* columns" % latent_truth_path)
        latent_kwargs = dict(
            latent_truth=block(lt.iloc[lt_rows], "surface_", lq),
            latent_estimate=block(ls, "surface_mean_", lq),
            latent_lower=block(ls, "surface_lower_", lq),
            latent_upper=block(ls, "surface_upper_", lq))
    report = score_predictions(y, summary, **latent_kwargs)
    payload = report.to_dict()
    if out_path:
        _write_json(out_path, payload)
    click.echo(json.dumps(payload, indent=2, sort_keys=True))


def _check_aligned(frame, coords, a_name, b_name):
    cols = _indexed_columns("coord_", frame.columns)
    if not cols:
        return
    have = frame[cols].to_numpy(dtype=np.float64)
    if have.shape != coords.shape or not np.allclose(have, coords, atol=1e-9):
        raise ValidationError("coordinates in %s do not align with %s" % (a_name, b_name))


@cli_group.command("kl-demo")
@click.option("--rho12", default=None, type=float)
@click.option("--rho13", default=None, type=float)
@click.option("--rho23", default=None, type=float)
@click.option("--sigma2", default=1.0, show_default=True, type=float)
@click.option("--delta2", default=0.0, show_default=True, type=float)
@click.option("--random", "n_random", default=None, type=int,
              help="run N random-instance identity and shrinkage checks instead")
@click.option("--seed", default=0, show_default=True, type=int)
def cmd_kl_demo(rho12, rho13, rho23, sigma2, delta2, n_random, seed):
    """KL divergences of the 3-site example, or batch identity/shrinkage checks."""
    if n_random is not None:
        if n_random < 1:
            raise ValidationError("--random must be >= 1")
        rng = make_rng(seed)
        kl_resp_max = kl_lat_max = 0.0
        frob_pass = frob_total = 0
        for _ in range(n_random):
            # rejection-sample an admissible triple; large rho12/rho23 with a
            # big nugget can push the implied truth outside the SPD cone
            while True:
                r12, r23 = rng.uniform(0.05, 0.9, size=2)
                d2 = rng.uniform(0.0, 1.0)
                try:
                    resp = toy_covariances(r12, r12 * r23 / (1.0 + d2), r23, delta2=d2)
                    lat = toy_covariances(r12, r12 * r23, r23, delta2=d2)
                except ValidationError:
                    continue
                break
            kl_resp_max = max(kl_resp_max, kl_gaussian_zero_mean(
                resp.sigma_true, resp.sigma_response))
            kl_lat_max = max(kl_lat_max, kl_gaussian_zero_mean(
                lat.sigma_true, lat.sigma_latent))
            coords = rng.uniform(size=(30, 2))
            locs = order_locations(coords, "sum")
            graph = build_training_neighbors(locs, 3)
            c = np.exp(-rng.uniform(2.0, 20.0)
                       * np.linalg.norm(locs.coords[:, None] - locs.coords[None], axis=2))
            for tau2 in (0.01, 0.1, 1.0):
                frob_total += 1
                frob_pass += int(frobenius_shrink_check(c, tau2, graph).passed)
        _emit({"instances": n_random, "kl_response_max": kl_resp_max,
               "kl_latent_max": kl_lat_max, "frobenius_pass": frob_pass,
               "frobenius_total": frob_total})
        return
    if rho12 is None or rho13 is None or rho23 is None:
        raise ValidationError("pass --rho12/--rho13/--rho23, or --random N")
    triple = toy_covariances(rho12, rho13, rho23, sigma2=sigma2, delta2=delta2)
    _emit({"kl_response": kl_gaussian_zero_mean(triple.sigma_true, triple.sigma_response),
           "kl_latent": kl_gaussian_zero_mean(triple.sigma_true, triple.sigma_latent),
           "sigma_true": _mat(triple.sigma_true),
           "sigma_response": _mat(triple.sigma_response),
           "sigma_latent": _mat(triple.sigma_latent)})


@cli_group.command("raster")
@click.option("--run", "run_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--xmin", default=0.0, show_default=True, type=float)
@click.option("--xmax", default=1.0, show_default=True, type=float)
@click.option("--ymin", default=0.0, show_default=True, type=float)
@click.option("--ymax", default=1.0, show_default=True, type=float)
@click.option("--resolution", default=100, show_default=True, type=int)
@click.option("--covariates", default=None,
              help="comma-separated covariate row used at every grid site; "
                   "default: training-column means")
@click.option("--out", "out_path", default="raster.csv", show_default=True,
              type=click.Path(dir_okay=False))
def cmd_raster(run_dir, xmin, xmax, ymin, ymax, resolution, covariates, out_path):
    """Posterior-mean surfaces on a regular grid, as plot-ready CSV."""
    if resolution < 1:
        raise ValidationError("--resolution must be >= 1")
    if not (xmax >= xmin and ymax >= ymin):
        raise ValidationError("grid bounds are inverted")
    model, _ = _load_run(run_dir)
    gx, gy = np.meshgrid(np.linspace(xmin, xmax, resolution),
                         np.linspace(ymin, ymax, resolution), indexing="ij")
    coords = np.column_stack([gx.ravel(), gy.ravel()])
    if model.train_.d != 2:
        raise ValidationError("raster needs 2-dimensional coordinates")
    if covariates is not None:
        xrow = np.array([float(v) for v in covariates.split(",")], dtype=np.float64)
    else:
        xrow = model.train_.x.mean(axis=0)
    if xrow.shape[0] != model.p_:
        raise ValidationError("covariate row has %d entries, the model needs %d"
                              % (xrow.shape[0], model.p_))
    means, omegas = [], []
    latent = isinstance(model, LatentNNGP)
    for start in range(0, coords.shape[0], _RASTER_CHUNK):
        block = coords[start:start + _RASTER_CHUNK]
        xb = np.broadcast_to(xrow, (block.shape[0], model.p_))
        means.append(model.predict_mean(block, xb))
        if latent:
            omegas.append(model.latent_mean(block))
    cols = _numbered("coord_", coords) + _numbered("mean_", np.vstack(means))
    if latent:
        cols += _numbered("omega_", np.vstack(omegas))
    _write_csv(out_path, cols)
    _emit({"raster": out_path, "rows": int(coords.shape[0]), "resolution": resolution})


# =========================
# Entry point with JSON error reporting
# =========================


def _report_error(kind, message, code):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv=None):
    try:
        cli_group.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        return 130
    except click.exceptions.Exit as err:
        return err.exit_code
    except click.ClickException as err:
        return _report_error("usage", err.format_message(), 2)
    except (ModelError, OSError, ValueError, json.JSONDecodeError) as err:
        return _report_error(type(err).__name__, str(err), 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
