import math

import numpy as np
import pytest
from scipy.special import logsumexp

from activesmc.asmh import AsmhState
from activesmc.assmc import (
    ActivePopulation,
    adapt_active_proposal,
    adapt_inactive_proposal,
    assmc_reweight,
    estimate_expectation,
    initial_population,
    run_assmc,
)
from activesmc.model import ConditionalGaussian, DataTemperedLikelihood, GaussianPrior, TargetModel, project_prior
from activesmc.smc_core import RngStream, SmcSettings
from activesmc.subspace import GapRule, SubspaceBasis, estimate_basis
from activesmc.toymodels import PlaneModel, make_model


def plane_basis(d):
    return estimate_basis(np.ones((1, d)) / math.sqrt(d), rule=GapRule.fixed(1))


def random_population(rng, N, K, basis, projected, q=None):
    a = rng.normal(0, 1, (N, basis.d_a))
    pts = rng.normal(0, 1, (N, K, basis.d_i))
    st = AsmhState(a, pts, np.zeros((N, K)), rng.integers(0, K, N))
    return ActivePopulation(st, np.log(rng.random(N)), q or projected.conditional_i)


def block_model(blocks):
    """Data-tempered model with explicit per-block log-likelihoods."""
    f = lambda th, s: blocks[s - 1](th)
    return TargetModel(GaussianPrior(np.zeros(3), 2.0), DataTemperedLikelihood(f, lambda th, s: np.zeros(th.shape), len(blocks)))


def curved(th):
    return -0.5 * np.sum((th - 0.3) ** 2, axis=-1)


def test_null_stage_leaves_weights_unchanged():
    model = block_model([curved, lambda th: np.zeros(th.shape[:-1])])
    basis = plane_basis(3)
    pp = project_prior(model.prior, basis)
    pop = random_population(np.random.default_rng(0), 6, 4, basis, pp)
    out, incr = assmc_reweight(pop, pp, basis, model, 2)
    np.testing.assert_array_equal(incr, 0.0)
    np.testing.assert_array_equal(out.log_omega, pop.log_omega)


def test_same_proposal_increment_is_ratio_of_sums():
    model = block_model([curved, lambda th: -np.abs(th[..., 0])])
    basis = plane_basis(3)
    pp = project_prior(model.prior, basis)
    pop = random_population(np.random.default_rng(1), 6, 4, basis, pp)
    th = pop.state.theta(basis)
    out, incr = assmc_reweight(pop, pp, basis, model, 2)
    np.testing.assert_allclose(incr, logsumexp(model.log_l(th, 2), axis=1) - logsumexp(model.log_l(th, 1), axis=1), rtol=1e-13)
    np.testing.assert_array_equal(out.state.u, pop.state.u)


def test_plane_exact_subspace_increment():
    toy = PlaneModel(3, np.random.default_rng(2).standard_normal(5))
    model = toy.target([0.0, 0.2, 0.7, 1.0])
    basis = plane_basis(3)
    pp = project_prior(model.prior, basis)
    for seed in range(3):
        pop = random_population(np.random.default_rng(seed), 5, 6, basis, pp)
        ridge = basis.reconstruct(pop.state.a, np.zeros((5, 2)))
        _, incr = assmc_reweight(pop, pp, basis, model, 3)
        np.testing.assert_allclose(incr, (1.0 - 0.7) * toy.loglik(ridge), rtol=1e-9)


def test_changed_proposal_brute_force():
    model = block_model([curved, lambda th: -np.abs(th[..., 1])])
    basis = plane_basis(3)
    pp = project_prior(model.prior, basis)
    rng = np.random.default_rng(3)
    q_prev = ConditionalGaussian(np.zeros(2), 1.5 * np.eye(2))
    q_new = ConditionalGaussian(rng.normal(0, 0.3, (4, 2)), np.broadcast_to(0.8 * np.eye(2), (4, 2, 2)).copy())
    pop = random_population(rng, 4, 3, basis, pp, q_prev)
    _, incr = assmc_reweight(pop, pp, basis, model, 2, q_new)
    st = pop.state
    for m in range(4):
        num = den = 0.0
        lq_new = lq_prev = 0.0
        for n in range(3):
            x = st.points[m : m + 1, n : n + 1]
            a = st.a[m : m + 1]
            th = basis.reconstruct(a[0], x[0, 0])
            lp = pp.conditional_i.logpdf(x, a)[0, 0]
            qn = q_new.take([m]).logpdf(x, a)[0, 0]
            qp = q_prev.logpdf(x, a)[0, 0]
            num += math.exp(lp + model.log_l(th, 2) - qn)
            den += math.exp(lp + model.log_l(th, 1) - qp)
            lq_new += qn
            lq_prev += qp
        assert incr[m] == pytest.approx(math.log(num) - math.log(den) + lq_new - lq_prev, rel=1e-10)


def test_weights_do_not_depend_on_selected_point():
    model = block_model([curved, lambda th: -np.abs(th[..., 0])])
    basis = plane_basis(3)
    pp = project_prior(model.prior, basis)
    pop = random_population(np.random.default_rng(4), 6, 4, basis, pp)
    other = ActivePopulation(AsmhState(pop.state.a, pop.state.points, pop.state.log_w, (pop.state.u + 1) % 4), pop.log_omega, pop.q)
    assert assmc_reweight(pop, pp, basis, model, 2)[0].log_omega.tobytes() == assmc_reweight(other, pp, basis, model, 2)[0].log_omega.tobytes()


def test_dead_particle_weight_is_minus_infinity():
    model = block_model([curved, lambda th: np.where(th[..., 0] > 1e6, 0.0, -np.inf)])
    basis = plane_basis(3)
    pp = project_prior(model.prior, basis)
    pop = random_population(np.random.default_rng(5), 3, 2, basis, pp)
    out, incr = assmc_reweight(pop, pp, basis, model, 2)
    assert np.all(np.isneginf(out.log_omega))


def test_expectation_of_constant_and_full_space():
    basis = plane_basis(3)
    pp = project_prior(GaussianPrior(np.zeros(3), 1.0), basis)
    pop = random_population(np.random.default_rng(6), 7, 3, basis, pp)
    pop.state.log_w = np.random.default_rng(7).standard_normal((7, 3))
    one = lambda th: np.ones(th.shape[:-1])
    for mode in ("single-point", "all-points"):
        assert estimate_expectation(pop, basis, one, mode) == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(ValueError):
        estimate_expectation(pop, basis, mode="some")
    full = SubspaceBasis.identity(3)
    st = AsmhState(np.random.default_rng(8).standard_normal((5, 3)), np.zeros((5, 1, 0)), np.zeros((5, 1)), np.zeros(5, dtype=np.intp))
    fpop = ActivePopulation(st, np.log(np.arange(1, 6.0)), None)
    np.testing.assert_array_equal(estimate_expectation(fpop, full), estimate_expectation(fpop, full, mode="all-points"))


def test_expectation_brute_force():
    basis = plane_basis(3)
    pp = project_prior(GaussianPrior(np.zeros(3), 1.0), basis)
    rng = np.random.default_rng(9)
    pop = random_population(rng, 4, 3, basis, pp)
    pop.state.log_w = rng.standard_normal((4, 3))
    W = np.exp(pop.log_omega) / np.exp(pop.log_omega).sum()
    single = sum(W[m] * basis.reconstruct(pop.state.a[m], pop.state.points[m, pop.state.u[m]]) for m in range(4))
    allp = 0.0
    for m in range(4):
        w = np.exp(pop.state.log_w[m]) / np.exp(pop.state.log_w[m]).sum()
        allp = allp + W[m] * sum(w[n] * basis.reconstruct(pop.state.a[m], pop.state.points[m, n]) for n in range(3))
    np.testing.assert_allclose(estimate_expectation(pop, basis), single, rtol=1e-12)
    np.testing.assert_allclose(estimate_expectation(pop, basis, mode="all-points"), allp, rtol=1e-12)


def test_active_proposal_examples():
    st = AsmhState(np.array([[-1.0], [1.0]]), np.zeros((2, 1, 2)), np.zeros((2, 1)), np.zeros(2, dtype=np.intp))
    pop = ActivePopulation(st, np.zeros(2), None)
    assert adapt_active_proposal(pop)[0, 0] == pytest.approx(5.6644 * (1 + 1e-10))
    st.a = np.ones((2, 1))
    np.testing.assert_array_equal(adapt_active_proposal(pop), np.eye(1))


def brute_force_inactive(points, log_kappa, u, m):
    keep = [n for n in range(points.shape[1]) if n != u[m]]
    w = np.exp(log_kappa[m, keep] - logsumexp(log_kappa[m, keep]))
    mu = sum(w[j] * points[m, n] for j, n in enumerate(keep))
    cov = sum(w[j] * np.outer(points[m, n] - mu, points[m, n] - mu) for j, n in enumerate(keep))
    return mu, cov


def test_inactive_proposal_brute_force():
    basis = estimate_basis(np.eye(4)[:1], rule=GapRule.fixed(1))
    pp = project_prior(GaussianPrior(np.zeros(4), 1.0), basis)
    rng = np.random.default_rng(10)
    N, K = 5, 8
    pts = rng.standard_normal((N, K, 3))
    lk = rng.standard_normal((N, K))
    u = rng.integers(0, K, N)
    a = rng.standard_normal((N, 1))
    q = adapt_inactive_proposal(pts, lk, u, pp, a)
    for m in range(N):
        mu, cov = brute_force_inactive(pts, lk, u, m)
        np.testing.assert_allclose(q.offset[m], mu, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(q.chol[m] @ q.chol[m].T, cov, rtol=1e-12, atol=1e-14)


def test_inactive_proposal_flat_stage_uses_previous_weights():
    basis = estimate_basis(np.eye(3)[:1], rule=GapRule.fixed(1))
    pp = project_prior(GaussianPrior(np.zeros(3), 1.0), basis)
    rng = np.random.default_rng(11)
    pts = rng.standard_normal((2, 6, 2))
    lw_prev = rng.standard_normal((2, 6))
    u = np.array([0, 3])
    # flat l_t: kappa is the previous inner weights, renormalised
    q1 = adapt_inactive_proposal(pts, lw_prev, u, pp, np.zeros((2, 1)))
    q2 = adapt_inactive_proposal(pts, lw_prev - logsumexp(lw_prev, axis=1, keepdims=True) + 0.0, u, pp, np.zeros((2, 1)))
    np.testing.assert_allclose(q1.offset, q2.offset, rtol=1e-13)


def test_inactive_proposal_rank_deficient_falls_back():
    basis = estimate_basis(np.eye(3)[:1], rule=GapRule.fixed(1))
    pp = project_prior(GaussianPrior(np.zeros(3), 4.0), basis)
    rng = np.random.default_rng(12)
    pts = rng.standard_normal((3, 3, 2))
    q = adapt_inactive_proposal(pts, np.zeros((3, 3)), np.array([0, 1, 2]), pp, np.zeros((3, 1)))
    np.testing.assert_allclose(q.offset, 0.0)
    np.testing.assert_allclose(q.chol, np.broadcast_to(2.0 * np.eye(2), (3, 2, 2)))


def test_student_t_family():
    basis = estimate_basis(np.eye(3)[:1], rule=GapRule.fixed(1))
    pp = project_prior(GaussianPrior(np.zeros(3), 1.0), basis)
    rng = np.random.default_rng(13)
    q = adapt_inactive_proposal(rng.standard_normal((2, 6, 2)), np.zeros((2, 6)), np.zeros(2, dtype=int), pp, np.zeros((2, 1)), family="student-t")
    assert q.family == "student-t" and q.df == 5.0


def test_initial_population_reuses_prior_draws():
    toy = make_model("plane", np.random.default_rng(0), d=4, n_obs=5)
    model = toy.target()
    stream = RngStream(3)
    pop, basis, _ = initial_population(model, SmcSettings(n_particles=10, n_inner=4), stream)
    theta0 = model.prior.sample(stream.generator("init"), 10)
    np.testing.assert_allclose(basis.reconstruct(pop.state.a, pop.state.points[:, 0]), theta0, atol=1e-10)
    assert basis.d_a == 1


def test_prior_only_run():
    model = TargetModel(GaussianPrior(np.zeros(3), 1.0), DataTemperedLikelihood(lambda th, s: 0.0, lambda th, s: 0.0, 0))
    res = run_assmc(model, SmcSettings(n_particles=50, n_inner=3), 0)
    np.testing.assert_array_equal(res.log_z, [0.0])
    assert res.n_evals == 0


def test_seeded_determinism():
    model = make_model("plane", np.random.default_rng(0), d=3, n_obs=5).target([0.0, 0.01, 0.1, 1.0])
    s = SmcSettings(n_particles=60, n_inner=4, n_moves=2)
    r1, r2 = run_assmc(model, s, 5), run_assmc(model, s, 5)
    assert r1.log_z.tobytes() == r2.log_z.tobytes()
    assert r1.particles.tobytes() == r2.particles.tobytes()
    assert run_assmc(model, s, 6).log_z.tobytes() != r1.log_z.tobytes()


def test_adaptive_inactive_proposal_run():
    model = make_model("banana", np.random.default_rng(0), d=4, k=2, b=0.1, n_obs=5, prior_var=1.0).target([0.0, 0.3, 1.0])
    for fam in ("gaussian", "student-t"):
        res = run_assmc(model, SmcSettings(n_particles=80, n_inner=5, inactive_proposal="adaptive", proposal_family=fam), 1)
        assert np.all(np.isfinite(res.log_z))
        assert np.all(np.isfinite(res.posterior_mean))


def test_always_resample_with_no_moves():
    model = make_model("plane", np.random.default_rng(0), d=3, n_obs=5).target([0.0, 0.5, 1.0])
    res = run_assmc(model, SmcSettings(n_particles=30, n_inner=3, n_moves=0, resample_trigger="always"), 2)
    assert res.resampled.all()
    assert np.all(np.isnan(res.acceptance))
