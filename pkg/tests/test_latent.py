"""Latent model tests.

The augmented least-squares route is checked three ways: hand-sized systems
with worked numbers, dense normal-equation oracles at full conditioning, and
agreement of the beta block with the marginalized (response-kernel) update.
"""

import numpy as np
import numpy.testing as npt
import pytest

from conjnngp.dataset import Dataset
from conjnngp.errors import ConvergenceError, ValidationError
from conjnngp.latent import (
    assemble_augmented,
    fit_latent,
    predict_latent,
    sample_latent_posterior,
)
from conjnngp.response import PriorSpec
from conjnngp.simulate import SimConfig, generate
from conjnngp.sparse import LsmrOptions
from conjnngp.spatial import (
    CorrelationModel,
    build_prediction_neighbors,
    build_training_neighbors,
    corr_matrix,
    order_locations,
)
from conjnngp.vecchia import build_factor, build_prediction_weights

# =========================
# helpers
# =========================


def _make_problem(n, p, q, seed, alpha=0.8, phi=6.0, m=None):
    rng = np.random.default_rng(seed)
    locs = order_locations(rng.uniform(size=(n, 2)))
    x = rng.standard_normal((n, p))
    if p:
        x[:, 0] = 1.0
    y = rng.standard_normal((n, q))
    data = Dataset(locs.coords, x, y)
    corr = CorrelationModel(phi=phi)
    graph = build_training_neighbors(locs, m=n - 1 if m is None else m)
    factor = build_factor(graph, corr, alpha=1.0, kind="latent")
    system = assemble_augmented(data, factor, alpha=alpha)
    return data, locs, corr, factor, system


def dense_joint_posterior(data, corr, alpha, psi=None, nu=None):
    """Direct normal-equations posterior over gamma = [beta; omega], flat beta prior."""
    n, p, q = data.n, data.p, data.q
    c2 = alpha / (1.0 - alpha)
    design = np.hstack([data.x, np.eye(n)])
    rho_inv = np.linalg.inv(corr_matrix(corr, data.coords))
    prec = c2 * design.T @ design
    prec[p:, p:] += rho_inv
    v_star = np.linalg.inv(prec)
    mu_star = v_star @ (c2 * design.T @ data.y)
    psi = np.eye(q) if psi is None else psi
    nu = q + 1 if nu is None else nu
    psi_star = psi + c2 * data.y.T @ data.y - mu_star.T @ prec @ mu_star
    return mu_star, v_star, psi_star, nu + n

# =========================
# assembly
# =========================


def test_assembly_single_site_no_covariates():
    # c = sqrt(0.8/0.2) = 2 exactly; X* = [[2],[1]], Y* = [[4],[0]]
    data = Dataset(np.array([[0.0, 0.0]]), np.empty((1, 0)), np.array([[2.0]]))
    locs = order_locations(data.coords)
    factor = build_factor(
        build_training_neighbors(locs, m=1), CorrelationModel(phi=1.0), 1.0, "latent"
    )
    system = assemble_augmented(data, factor, alpha=0.8)
    npt.assert_allclose(system.matrix.toarray(), [[2.0], [1.0]], rtol=1e-14)
    npt.assert_allclose(system.y_star, [[4.0], [0.0]], rtol=1e-14)
    assert system.c == 2.0 and system.flat
    assert system.block_rows() == (1, 0, 1)

    # posterior by hand: (4 + 1) w = 8 -> w = 1.6; residual [0.8, -1.6];
    # psi* = 1 + 0.64 + 2.56 = 4.2; nu* = (q + 1) + n = 3
    post = fit_latent(system)
    npt.assert_allclose(post.mu, [[1.6]], rtol=1e-10)
    npt.assert_allclose(post.psi, [[4.2]], rtol=1e-10)
    assert post.nu == 3.0
    assert post.beta_mean.shape == (0, 1)
    npt.assert_allclose(post.omega_mean, [[1.6]], rtol=1e-10)


def test_assembly_blocks_with_proper_prior():
    coords = np.array([[0.0, 0.0], [1.0, 1.0]])
    locs = order_locations(coords, "given", permutation=[0, 1])
    factor = build_factor(
        build_training_neighbors(locs, m=1), CorrelationModel(phi=1.0), 1.0, "latent"
    )
    x = np.array([[1.0], [2.0]])
    y = np.array([[3.0], [5.0]])
    data = Dataset(coords, x, y)
    prior = PriorSpec(mu_beta=np.array([[10.0]]), v_beta=np.array([[4.0]]))
    alpha = 0.5  # c = 1
    system = assemble_augmented(data, factor, prior=prior, alpha=alpha)

    rho = float(factor.weights[1, 0])
    s = np.sqrt(float(factor.d[1]))
    want = np.array([
        [1.0, 1.0, 0.0],        # c X | c I
        [2.0, 0.0, 1.0],
        [0.5, 0.0, 0.0],        # Lr^-1 | 0
        [0.0, 1.0, 0.0],        # 0 | D^-1/2 (I - A)
        [0.0, -rho / s, 1.0 / s],
    ])
    npt.assert_allclose(system.matrix.toarray(), want, rtol=1e-12)
    npt.assert_allclose(system.y_star, [[3.0], [5.0], [5.0], [0.0], [0.0]], rtol=1e-14)
    assert not system.flat
    assert system.block_rows() == (2, 1, 2)


def test_assembly_normal_equations_identity():
    data, _, _, factor, system = _make_problem(30, 2, 2, seed=40, alpha=0.7, m=29)
    c2 = 0.7 / 0.3
    design = np.hstack([data.x, np.eye(30)])
    want = c2 * design.T @ design
    want[2:, 2:] += factor.dense_precision()
    gram = (system.matrix.T @ system.matrix).toarray()
    npt.assert_allclose(gram, want, rtol=1e-10, atol=1e-10)


def test_assembly_validation():
    data, locs, corr, factor, _ = _make_problem(10, 1, 1, seed=41)
    with pytest.raises(ValidationError):
        assemble_augmented(data, factor)  # alpha is required
    with pytest.raises(ValidationError, match="response model"):
        assemble_augmented(data, factor, alpha=1.0)
    with pytest.raises(ValidationError):
        assemble_augmented(data, factor, alpha=1.2)
    resp = build_factor(build_training_neighbors(locs, m=3), corr, 0.8, "response")
    with pytest.raises(ValidationError):
        assemble_augmented(data, resp, alpha=0.8)

# =========================
# fit
# =========================


def test_zero_responses_leave_prior_scale():
    rng = np.random.default_rng(42)
    locs = order_locations(rng.uniform(size=(15, 2)))
    data = Dataset(locs.coords, rng.standard_normal((15, 1)), np.zeros((15, 2)))
    factor = build_factor(
        build_training_neighbors(locs, m=5), CorrelationModel(phi=6.0), 1.0, "latent"
    )
    post = fit_latent(assemble_augmented(data, factor, alpha=0.8))
    npt.assert_array_equal(post.mu, np.zeros((16, 2)))
    npt.assert_array_equal(post.psi, np.eye(2))


def test_fit_matches_dense_joint_posterior():
    data, _, corr, _, system = _make_problem(100, 2, 2, seed=43, alpha=0.8)
    post = fit_latent(system)
    mu, v, psi, nu = dense_joint_posterior(data, corr, alpha=0.8)
    npt.assert_allclose(post.mu, mu, rtol=1e-5, atol=1e-7)
    npt.assert_allclose(post.psi, psi, rtol=1e-5)
    assert post.nu == nu
    npt.assert_allclose(post.beta_mean, mu[:2], rtol=1e-5, atol=1e-7)
    npt.assert_allclose(post.omega_mean, mu[2:], rtol=1e-5, atol=1e-7)


def test_beta_block_matches_marginalized_update():
    # integrating omega out of the latent model gives the response kernel
    # rho + (1/alpha - 1) I; the beta block must match that dense posterior
    data, _, corr, _, system = _make_problem(60, 2, 1, seed=44, alpha=0.75)
    post = fit_latent(system)
    n = data.n
    kmat = corr_matrix(corr, data.coords) + (1.0 / 0.75 - 1.0) * np.eye(n)
    ki = np.linalg.inv(kmat)
    v_star = np.linalg.inv(data.x.T @ ki @ data.x)
    mu_marg = v_star @ (data.x.T @ ki @ data.y)
    npt.assert_allclose(post.beta_mean, mu_marg, rtol=1e-6, atol=1e-8)
    # and the marginal psi* agrees too
    psi_marg = np.eye(1) + data.y.T @ ki @ data.y - mu_marg.T @ (data.x.T @ ki @ data.x) @ mu_marg
    npt.assert_allclose(post.psi, psi_marg, rtol=1e-6)


def test_noise_shrinks_as_alpha_approaches_one():
    # noiseless data: the fitted surface should absorb y - x beta more and
    # more completely as alpha grows
    rng = np.random.default_rng(45)
    locs = order_locations(rng.uniform(size=(80, 2)))
    x = np.column_stack([np.ones(80), rng.standard_normal(80)])
    corr = CorrelationModel(phi=6.0)
    l_rho = np.linalg.cholesky(corr_matrix(corr, locs.coords))
    omega = l_rho @ rng.standard_normal((80, 1))
    y = x @ np.array([[1.0], [2.0]]) + omega
    data = Dataset(locs.coords, x, y)
    factor = build_factor(build_training_neighbors(locs, m=15), corr, 1.0, "latent")

    errs = []
    for alpha in (0.9, 0.99, 0.999):
        post = fit_latent(assemble_augmented(data, factor, alpha=alpha))
        resid = y - x @ post.beta_mean - post.omega_mean
        errs.append(np.linalg.norm(resid) / np.linalg.norm(y))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-2


def test_fit_convergence_error_carries_report():
    _, _, _, _, system = _make_problem(50, 2, 2, seed=46)
    with pytest.raises(ConvergenceError) as err:
        fit_latent(system, options=LsmrOptions(max_iterations=1))
    assert err.value.report is not None
    assert not err.value.report.all_converged

# =========================
# sampling
# =========================


def test_sampling_deterministic_and_mean_centered():
    _, _, _, _, system = _make_problem(40, 1, 2, seed=47)
    post = fit_latent(system)
    a = sample_latent_posterior(post, 30, rng=np.random.default_rng(3))
    b = sample_latent_posterior(post, 30, rng=np.random.default_rng(3))
    npt.assert_array_equal(a.beta, b.beta)
    npt.assert_array_equal(a.omega, b.omega)
    npt.assert_array_equal(a.sigma, b.sigma)
    assert a.beta.shape == (30, 1, 2) and a.omega.shape == (30, 40, 2)
    assert a.excluded == 0

    big = sample_latent_posterior(post, 4000, rng=np.random.default_rng(4))
    gamma_mean = np.concatenate([big.beta.mean(axis=0), big.omega.mean(axis=0)])
    npt.assert_allclose(gamma_mean, post.mu, atol=0.05)


def test_sampling_covariance_matches_kronecker_structure():
    data, _, corr, _, system = _make_problem(30, 1, 2, seed=48, alpha=0.8)
    post = fit_latent(system)
    mu, v_star, psi, nu = dense_joint_posterior(data, corr, alpha=0.8)
    samples = sample_latent_posterior(post, 20000, rng=np.random.default_rng(5))
    gamma = np.concatenate([samples.beta, samples.omega], axis=1)  # (L, p+n, q)
    vecs = gamma.transpose(0, 2, 1).reshape(20000, -1)  # column-stacked vec
    emp = np.cov(vecs.T)
    want = np.kron(psi / (nu - 2.0 - 1.0), v_star)
    rel = np.linalg.norm(emp - want) / np.linalg.norm(want)
    assert rel < 0.10


def test_sampling_all_draws_failing_raises():
    _, _, _, _, system = _make_problem(40, 2, 1, seed=49)
    post = fit_latent(system)
    with pytest.warns(UserWarning, match="excluding"):
        with pytest.raises(ConvergenceError):
            sample_latent_posterior(post, 5, rng=np.random.default_rng(6),
                                    options=LsmrOptions(max_iterations=1))


def test_sampling_rejects_bad_draw_count():
    _, _, _, _, system = _make_problem(10, 1, 1, seed=50)
    post = fit_latent(system)
    with pytest.raises(ValidationError):
        sample_latent_posterior(post, 0)

# =========================
# prediction
# =========================


def test_predict_interpolates_at_training_site():
    data, locs, corr, factor, system = _make_problem(40, 2, 2, seed=51, alpha=0.8)
    post = fit_latent(system)
    samples = sample_latent_posterior(post, 100, rng=np.random.default_rng(7))
    graph = build_prediction_neighbors(locs, locs.coords[[13]], m=40)
    weights = build_prediction_weights(graph, corr, alpha=1.0, kind="latent")
    assert weights.d[0] <= 1e-10
    out = predict_latent(samples, weights, data.x[[13]], alpha=1.0,
                         rng=np.random.default_rng(8))
    # conditional variance collapses (sqrt(d) <= 1e-5) and alpha=1 adds no
    # noise channel, so draws reproduce the training-site surface draws
    npt.assert_allclose(out.omega_draws[:, 0, :], samples.omega[:, 13, :], atol=1e-4)
    npt.assert_allclose(out.omega_mean[0], samples.omega[:, 13, :].mean(axis=0), atol=1e-5)
    npt.assert_allclose(out.draws, out.omega_draws + np.einsum(
        "lpq,p->lq", samples.beta, data.x[13])[:, None, :], rtol=1e-10, atol=1e-12)


def test_predict_far_query_centers_on_regression_surface():
    data, locs, corr, _, system = _make_problem(30, 2, 1, seed=52)
    post = fit_latent(system)
    samples = sample_latent_posterior(post, 500, rng=np.random.default_rng(9))
    graph = build_prediction_neighbors(locs, np.array([[80.0, -40.0]]), m=10)
    weights = build_prediction_weights(graph, corr, alpha=1.0, kind="latent")
    xq = np.array([[1.0, -0.5]])
    out = predict_latent(samples, weights, xq, alpha=0.8, rng=np.random.default_rng(10))
    npt.assert_allclose(out.omega_mean, 0.0, atol=1e-10)
    npt.assert_allclose(out.mean, xq @ samples.beta.mean(axis=0), rtol=1e-10)
    # interval fields for the latent surface come back filled
    assert out.omega_lower.shape == (1, 1) and out.omega_upper.shape == (1, 1)
    assert out.omega_sd[0, 0] > 0.5  # marginal prior scale, not collapsed


def test_predict_matches_dense_conditional_surface():
    data, locs, corr, _, system = _make_problem(70, 2, 2, seed=53, alpha=0.8)
    post = fit_latent(system)
    samples = sample_latent_posterior(post, 200, rng=np.random.default_rng(11))
    rng = np.random.default_rng(12)
    queries = rng.uniform(size=(6, 2))
    xq = rng.standard_normal((6, 2))
    graph = build_prediction_neighbors(locs, queries, m=70)
    weights = build_prediction_weights(graph, corr, alpha=1.0, kind="latent")
    out = predict_latent(samples, weights, xq, alpha=0.8, rng=np.random.default_rng(13))

    rho = corr_matrix(corr, locs.coords)
    cross = np.exp(-6.0 * np.linalg.norm(
        queries[:, None, :] - locs.coords[None, :, :], axis=2))
    a_dense = cross @ np.linalg.inv(rho)
    cond = np.einsum("qn,lnk->lqk", a_dense, samples.omega)
    npt.assert_allclose(out.omega_mean, cond.mean(axis=0), rtol=1e-6, atol=1e-8)
    want_mean = (xq @ samples.beta + cond).mean(axis=0)
    npt.assert_allclose(out.mean, want_mean, rtol=1e-6, atol=1e-8)


def test_posterior_residuals_recover_noise_covariance():
    # generate from the model, fit at the true hyperparameters, and check the
    # pooled posterior residual covariance against (1/alpha - 1) E[Sigma]
    sim = generate(SimConfig(n=250, n_holdout=0, seed=3))
    locs = order_locations(sim.train.coords)
    data = sim.train.take(locs.order)
    corr = CorrelationModel(phi=6.0)
    factor = build_factor(build_training_neighbors(locs, m=12), corr, 1.0, "latent")
    post = fit_latent(assemble_augmented(data, factor, alpha=0.9))
    samples = sample_latent_posterior(post, 3000, rng=np.random.default_rng(14))
    resid = data.y[None, :, :] - np.einsum(
        "np,lpq->lnq", data.x, samples.beta) - samples.omega
    pooled = resid.reshape(-1, 2)
    emp = pooled.T @ pooled / pooled.shape[0]
    want = (1.0 / 0.9 - 1.0) * samples.sigma.mean(axis=0)
    rel = np.linalg.norm(emp - want) / np.linalg.norm(want)
    assert rel < 0.10


def test_predict_validation():
    data, locs, corr, _, system = _make_problem(20, 2, 1, seed=54)
    post = fit_latent(system)
    samples = sample_latent_posterior(post, 10, rng=np.random.default_rng(15))
    graph = build_prediction_neighbors(locs, np.array([[0.5, 0.5]]), m=5)
    lat_w = build_prediction_weights(graph, corr, alpha=1.0, kind="latent")
    resp_w = build_prediction_weights(graph, corr, alpha=0.8, kind="response")
    xq = np.array([[1.0, 0.0]])
    with pytest.raises(ValidationError):
        predict_latent(samples, resp_w, xq, alpha=0.8)
    with pytest.raises(ValidationError):
        predict_latent(samples, lat_w, np.ones((1, 3)), alpha=0.8)
    with pytest.raises(ValidationError):
        predict_latent(samples, lat_w, np.ones((2, 2)), alpha=0.8)
    with pytest.raises(ValidationError):
        predict_latent(samples, lat_w, xq, alpha=0.8, level=0.0)
    nosurface = sample_latent_posterior(post, 5, rng=np.random.default_rng(16))
    nosurface.omega = None
    with pytest.raises(ValidationError):
        predict_latent(nosurface, lat_w, xq, alpha=0.8)
