"""Release acceptance suite.

Nine end-to-end criteria, each printing one ACCEPTANCE line (replayed in the
terminal summary). They pin the benchmark-replication pipeline, dense-oracle
equivalence, Vecchia exactness, the KL and shrinkage identities, sampler
calibration, metric correctness, CV sanity, and large-n scaling.
"""

import json
import time
import tracemalloc

import numpy as np
import numpy.testing as npt
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from acceptance_report import criterion
from conjnngp.cli import main as cli_main
from conjnngp.dataset import Dataset
from conjnngp.errors import ValidationError
from conjnngp.estimators import LatentNNGP, ResponseNNGP
from conjnngp.crossval import cv_score, make_folds
from conjnngp.latent import assemble_augmented, fit_latent, sample_latent_posterior
from conjnngp.linalg import sample_inv_wishart
from conjnngp.metrics import (
    frobenius_shrink_check,
    kl_gaussian_zero_mean,
    mcrps,
    msel,
    rmspe,
    toy_covariances,
)
from conjnngp.response import fit_response
from conjnngp.simulate import SimConfig, generate
from conjnngp.spatial import (
    CorrelationModel,
    build_training_neighbors,
    corr_matrix,
    order_locations,
)
from conjnngp.vecchia import build_factor

# =========================
# Shared pipeline fixtures (benchmark-scale data, CV run once)
# =========================


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def table_sim(workdir):
    """Benchmark ground truth: n=1200, 200 holdout, q=p=2, phi=6, alpha=0.9."""
    out = workdir / "sim0"
    assert cli_main(["simulate", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def cv_selection(table_sim, workdir):
    """One 25x25 grid search (K=5, m=10) on the training rows."""
    out = workdir / "cv"
    code = cli_main(["cv", "--data", str(table_sim / "data.csv"),
                     "--kind", "response", "--folds", "5", "--m", "10",
                     "--jobs", "1", "--out", str(out)])
    assert code == 0
    return json.loads((out / "cv_result.json").read_text())


def _pipeline_report(workdir, table_sim, kind, phi, alpha):
    run_dir = workdir / ("run_" + kind)
    assert cli_main(["fit", "--data", str(table_sim / "data.csv"),
                     "--kind", kind, "--phi", str(phi), "--alpha", str(alpha),
                     "--m", "10", "--draws", "500", "--seed", "0",
                     "--out", str(run_dir)]) == 0
    pred = workdir / ("pred_%s.csv" % kind)
    assert cli_main(["predict", "--run", str(run_dir),
                     "--holdout-from", str(table_sim / "data.csv"),
                     "--draws", "500", "--seed", "0", "--out", str(pred)]) == 0
    metrics_path = workdir / ("metrics_%s.json" % kind)
    args = ["metrics", "--predictions", str(pred),
            "--truth", str(table_sim / "data.csv"), "--out", str(metrics_path)]
    if kind == "latent":
        args += ["--latent-summary", str(run_dir / "omega_summary.csv"),
                 "--latent-truth", str(table_sim / "truth.csv")]
    assert cli_main(args) == 0
    return json.loads(metrics_path.read_text())

# =========================
# 1. benchmark replication
# =========================


@criterion(1)
def test_criterion_1_benchmark_pipeline(workdir, table_sim, cv_selection):
    phi_hat, alpha_hat = cv_selection["phi"], cv_selection["alpha"]
    reports = {kind: _pipeline_report(workdir, table_sim, kind, phi_hat, alpha_hat)
               for kind in ("response", "latent")}

    for kind, rep in reports.items():
        assert 0.58 <= rep["rmspe"]["combined"] <= 0.75, (kind, rep["rmspe"])
        assert 0.88 <= rep["cvg"]["combined"] <= 0.99, (kind, rep["cvg"])
        assert -0.45 <= rep["mcrps"]["combined"] <= -0.30, (kind, rep["mcrps"])
    assert 0.05 <= reports["latent"]["msel"]["combined"] <= 0.20, reports["latent"]["msel"]

    # slope coverage over fresh ground-truth seeds, reusing the selected
    # hyperparameters: 95% intervals for beta_21=-2 and beta_22=2 must cover
    # in at least 8 of 10 replicates for each model kind
    covered = {"response": 0, "latent": 0}
    for seed in range(10):
        sim = generate(SimConfig(seed=seed))
        train = sim.train
        for kind, cls in (("response", ResponseNNGP), ("latent", LatentNNGP)):
            model = cls(phi=phi_hat, alpha=alpha_hat, n_neighbors=10)
            model.fit(train.coords, train.x, train.y)
            draws = model.sample(n_draws=500, random_state=seed).beta
            lo, hi = np.quantile(draws, [0.025, 0.975], axis=0)
            covered[kind] += int(lo[1, 0] <= -2.0 <= hi[1, 0]
                                 and lo[1, 1] <= 2.0 <= hi[1, 1])
    assert covered["response"] >= 8, covered
    assert covered["latent"] >= 8, covered

# =========================
# 2. dense-oracle equivalence
# =========================


@criterion(2)
def test_criterion_2_dense_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(200)
    n, phi, alpha = 100, 6.0, 0.8
    raw = rng.uniform(size=(n, 2))
    queries = rng.uniform(size=(8, 2))
    xq = np.column_stack([np.ones(8), rng.standard_normal(8)])

    # the estimators reorder rows internally; build the oracle in that frame
    # so the latent omega block lines up row for row
    coords = raw[order_locations(raw, "sum").order]
    x = np.column_stack([np.ones(n), rng.standard_normal(n)])
    y = rng.standard_normal((n, 2))

    rho = corr_matrix(CorrelationModel(phi), coords)
    kmat = rho + (1.0 / alpha - 1.0) * np.eye(n)
    ki = np.linalg.inv(kmat)
    cross = np.exp(-phi * np.linalg.norm(
        queries[:, None, :] - coords[None, :, :], axis=2))

    # response: closed-form MNIW update on the dense kernel
    gram = x.T @ ki @ x
    v_dense = np.linalg.inv(gram)
    mu_dense = v_dense @ (x.T @ ki @ y)
    psi_dense = np.eye(2) + y.T @ ki @ y - mu_dense.T @ gram @ mu_dense

    # n_neighbors=n: training conditioning caps at n-1 (full), prediction at n
    model = ResponseNNGP(phi=phi, alpha=alpha, n_neighbors=n).fit(coords, x, y)
    post = model.posterior_
    npt.assert_allclose(post.mu, mu_dense, rtol=1e-8, atol=1e-12)
    npt.assert_allclose(post.v_chol @ post.v_chol.T, v_dense, rtol=1e-8, atol=1e-12)
    npt.assert_allclose(post.psi, psi_dense, rtol=1e-8)
    assert post.nu == 3 + n
    want_pred = xq @ mu_dense + cross @ ki @ (y - x @ mu_dense)
    npt.assert_allclose(model.predict_mean(queries, xq), want_pred,
                        rtol=1e-8, atol=1e-10)

    # latent: dense normal-equations solve over gamma = [beta; omega]
    c2 = alpha / (1.0 - alpha)
    design = np.hstack([x, np.eye(n)])
    prec = c2 * design.T @ design
    prec[2:, 2:] += np.linalg.inv(rho)
    mu_joint = np.linalg.solve(prec, c2 * design.T @ y)

    lat = LatentNNGP(phi=phi, alpha=alpha, n_neighbors=n).fit(coords, x, y)
    npt.assert_allclose(lat.posterior_.mu, mu_joint, rtol=1e-5, atol=1e-7)
    want_lat = xq @ mu_joint[:2] + cross @ np.linalg.solve(rho, mu_joint[2:])
    npt.assert_allclose(lat.predict_mean(queries, xq), want_lat,
                        rtol=1e-5, atol=1e-7)
    assert time.perf_counter() - start < 5.0

# =========================
# 3. Vecchia exactness at full conditioning
# =========================


@criterion(3)
def test_criterion_3_vecchia_exactness():
    rng = np.random.default_rng(300)
    for _ in range(20):
        n = int(rng.integers(20, 101))
        phi = float(rng.uniform(4.0, 20.0))
        alpha = float(rng.uniform(0.7, 0.95))
        locs = order_locations(rng.uniform(size=(n, 2)))
        graph = build_training_neighbors(locs, n - 1)
        rho = corr_matrix(CorrelationModel(phi), locs.coords)
        for kind in ("response", "latent"):
            factor = build_factor(graph, CorrelationModel(phi), alpha, kind)
            kmat = rho + (1.0 / alpha - 1.0) * np.eye(n) if kind == "response" else rho
            ki = np.linalg.inv(kmat)
            rel = np.linalg.norm(factor.dense_precision() - ki) / np.linalg.norm(ki)
            assert rel <= 1e-8, (n, phi, alpha, kind, rel)

# =========================
# 4. KL identities of the 3-site example
# =========================


@criterion(4)
def test_criterion_4_kl_identities():
    rng = np.random.default_rng(400)
    done = 0
    while done < 50:
        r12, r23 = rng.uniform(0.05, 0.95, size=2)
        d2 = float(rng.uniform(0.0, 1.0))
        try:
            resp = toy_covariances(r12, r12 * r23 / (1.0 + d2), r23, delta2=d2)
            lat = toy_covariances(r12, r12 * r23, r23, delta2=d2)
        except ValidationError:
            continue  # resample an admissible triple
        assert kl_gaussian_zero_mean(resp.sigma_true, resp.sigma_response) <= 1e-12
        assert kl_gaussian_zero_mean(lat.sigma_true, lat.sigma_latent) <= 1e-12
        done += 1

# =========================
# 5. Frobenius shrinkage
# =========================


@criterion(5)
def test_criterion_5_frobenius_shrinkage():
    rng = np.random.default_rng(500)
    for _ in range(100):
        locs = order_locations(rng.uniform(size=(30, 2)))
        c = corr_matrix(CorrelationModel(float(rng.uniform(2.0, 20.0))), locs.coords)
        graph = build_training_neighbors(locs, 3)
        for tau2 in (0.01, 0.1, 1.0):
            rep = frobenius_shrink_check(c, tau2, graph)
            assert rep.passed and rep.b_norm <= rep.e_norm
        zero = frobenius_shrink_check(c, 0.0, graph)
        assert abs(zero.b_norm - zero.e_norm) <= 1e-10

# =========================
# 6. sampler calibration
# =========================


@criterion(6)
def test_criterion_6_sampler_calibration():
    # inverse-Wishart mean against Psi*/(nu*-q-1) from a real fit
    rng = np.random.default_rng(600)
    locs = order_locations(rng.uniform(size=(50, 2)))
    x = np.column_stack([np.ones(50), rng.standard_normal(50)])
    y = rng.standard_normal((50, 2))
    data = Dataset(locs.coords, x, y)
    factor = build_factor(build_training_neighbors(locs, 49),
                          CorrelationModel(6.0), 0.8, "response")
    post = fit_response(data, factor)
    draws = sample_inv_wishart(post.psi, post.nu, np.random.default_rng(601),
                               size=100000)
    want = post.psi / (post.nu - 2.0 - 1.0)
    rel = np.linalg.norm(draws.mean(axis=0) - want) / np.linalg.norm(want)
    assert rel <= 0.02, rel

    # joint (beta, omega) draw covariance against Sigma (x) V* with a dense
    # V* oracle: n = 50, 2e4 draws, 5% relative Frobenius error
    lat_factor = build_factor(build_training_neighbors(locs, 49),
                              CorrelationModel(6.0), 1.0, "latent")
    system = assemble_augmented(data, lat_factor, alpha=0.8)
    lat_post = fit_latent(system)
    samples = sample_latent_posterior(lat_post, 20000, rng=np.random.default_rng(602))
    gamma = np.concatenate([samples.beta, samples.omega], axis=1)
    emp = np.cov(gamma.transpose(0, 2, 1).reshape(20000, -1).T)

    c2 = 0.8 / 0.2
    design = np.hstack([x, np.eye(50)])
    prec = c2 * design.T @ design
    prec[2:, 2:] += np.linalg.inv(corr_matrix(CorrelationModel(6.0), locs.coords))
    v_star = np.linalg.inv(prec)
    sigma_mean = lat_post.psi / (lat_post.nu - 2.0 - 1.0)
    target = np.kron(sigma_mean, v_star)
    rel = np.linalg.norm(emp - target) / np.linalg.norm(target)
    assert rel <= 0.05, rel

# =========================
# 7. metric correctness
# =========================


@criterion(7)
def test_criterion_7_metric_correctness():
    # closed form at z=0, sd=1, and the defining integral
    out = mcrps(np.zeros((1, 1)), np.zeros((1, 1)), np.ones((1, 1))).combined
    assert abs(out - (1.0 / np.sqrt(np.pi) - 2.0 * norm.pdf(0.0))) <= 1e-12

    def integrand(v):
        return (norm.cdf(v) - float(v >= 0.0)) ** 2

    left, _ = quad(integrand, -40.0, 0.0, limit=200)
    right, _ = quad(integrand, 0.0, 40.0, limit=200)
    assert abs(out - (-(left + right))) <= 1e-6

    # rmspe and msel against naive double loops
    rng = np.random.default_rng(700)
    t, p = rng.standard_normal((30, 2)), rng.standard_normal((30, 2))
    got = rmspe(t, p)
    for j in range(2):
        want = np.sqrt(sum((t[i, j] - p[i, j]) ** 2 for i in range(30)) / 30.0)
        assert abs(got.per_response[j] - want) <= 1e-12
    want_all = np.sqrt(sum((t[i, j] - p[i, j]) ** 2
                           for i in range(30) for j in range(2)) / 60.0)
    assert abs(got.combined - want_all) <= 1e-12
    got_l = msel(t, p)
    want_l = sum((t[i, j] - p[i, j]) ** 2 for i in range(30) for j in range(2)) / 60.0
    assert abs(got_l.combined - want_l) <= 1e-12

# =========================
# 8. cross-validation sanity
# =========================


@criterion(8)
def test_criterion_8_cv_sanity(cv_selection):
    # leave-one-out scoring against an independent dense implementation
    rng = np.random.default_rng(800)
    coords = rng.uniform(size=(40, 2))
    x = np.column_stack([np.ones(40), rng.standard_normal(40)])
    y = rng.standard_normal((40, 2))
    data = Dataset(coords, x, y)
    labels = make_folds(40, 40, seed=0)
    phi, alpha = 5.0, 0.85
    corr = CorrelationModel(phi)
    total = 0.0
    for fold in range(40):
        i = int(np.flatnonzero(labels == fold)[0])
        sub = data.take(np.flatnonzero(labels != fold))
        kmat = corr_matrix(corr, sub.coords) + (1.0 / alpha - 1.0) * np.eye(39)
        ki = np.linalg.inv(kmat)
        beta = np.linalg.solve(sub.x.T @ ki @ sub.x, sub.x.T @ ki @ sub.y)
        cross = np.exp(-phi * np.linalg.norm(sub.coords - coords[i], axis=1))
        pred = x[i] @ beta + cross @ ki @ (sub.y - sub.x @ beta)
        total += float(np.sqrt(np.mean((y[i] - pred) ** 2)))
    got = cv_score(data, phi=phi, alpha=alpha, m=40, k=40, kind="response", seed=0)
    npt.assert_allclose(got, total, rtol=1e-10)

    # the grid selection lands near the generating values. Known failure on
    # the default benchmark realization: the fold-RMSPE objective is nearly
    # flat in phi (the best cell with phi <= 12 scores 0.06% above the
    # argmin) and an exact dense-GP cross-validation picks the same
    # out-of-window cell, so the window is a property of the realization,
    # not of this implementation. Kept verbatim rather than widened.
    assert 3.0 <= cv_selection["phi"] <= 12.0, cv_selection
    assert abs(cv_selection["alpha"] - 0.9) <= 0.08, cv_selection

# =========================
# 9. large-n scaling
# =========================


@criterion(9)
def test_criterion_9_scaling_smoke():
    def make(n):
        rng = np.random.default_rng(n)
        coords = rng.uniform(size=(n, 2))
        x = np.column_stack([np.ones(n), rng.standard_normal(n)])
        return coords, x, rng.standard_normal((n, 2))

    # warm caches so the first timed fit is comparable
    c, x, y = make(5000)
    ResponseNNGP(phi=25.0, alpha=0.9, n_neighbors=10).fit(c, x, y)

    times, peaks = {}, {}
    for n in (25000, 50000, 100000):
        c, x, y = make(n)
        best = np.inf
        for _ in range(3):
            t0 = time.perf_counter()
            model = ResponseNNGP(phi=25.0, alpha=0.9, n_neighbors=10).fit(c, x, y)
            best = min(best, time.perf_counter() - t0)
        times[n] = best
        tracemalloc.start()
        ResponseNNGP(phi=25.0, alpha=0.9, n_neighbors=10).fit(c, x, y)
        peaks[n] = tracemalloc.get_traced_memory()[1]
        tracemalloc.stop()

    # the full n=1e5 fit plus 100 exact draws stays far under five minutes
    t0 = time.perf_counter()
    model = ResponseNNGP(phi=25.0, alpha=0.9, n_neighbors=10).fit(*make(100000))
    model.sample(n_draws=100, random_state=0)
    assert time.perf_counter() - t0 < 300.0

    for lo, hi in ((25000, 50000), (50000, 100000)):
        ratio = times[hi] / times[lo]
        assert 1.5 <= ratio <= 3.0, (times, ratio)
        assert peaks[hi] <= 3.0 * peaks[lo], (peaks,)  # linear memory growth
