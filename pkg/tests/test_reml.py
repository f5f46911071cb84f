import math

import numpy as np
import pytest
from scipy import integrate, stats

from conftest import make_dataset
from srocboot import _kernels as K
from srocboot.data import OutcomeSet, expit, to_outcomes
from srocboot.errors import ConvergenceError, InsufficientStudiesError
from srocboot.reml import (BivariateFit, BivariateParams, FitOptions, chi2_2df_quantile, confidence_region,
                           fit_reml, gls_mean, restricted_log_likelihood, summary_accuracy, wald_compare_summary)


def toy(y, s2):
    y = np.asarray(y, float)
    s2 = np.asarray(s2, float)
    return OutcomeSet(y[:, 0], y[:, 1], s2[:, 0], s2[:, 1])


def scalar_reml(sa, sb, rho, ya, yb, va, vb):
    """Plain-float reimplementation: explicit 2x2 inverses, two passes."""
    c = rho * sa * sb
    Ws, logdet = [], 0.0
    m = [0.0, 0.0, 0.0]
    u = [0.0, 0.0]
    for a, b, s_a, s_b in zip(ya, yb, va, vb):
        v11, v22 = sa * sa + s_a, sb * sb + s_b
        det = v11 * v22 - c * c
        w = (v22 / det, -c / det, v11 / det)
        Ws.append(w)
        logdet += math.log(det)
        m = [m[0] + w[0], m[1] + w[1], m[2] + w[2]]
        u = [u[0] + w[0] * a + w[1] * b, u[1] + w[1] * a + w[2] * b]
    dm = m[0] * m[2] - m[1] ** 2
    mu = ((m[2] * u[0] - m[1] * u[1]) / dm, (m[0] * u[1] - m[1] * u[0]) / dm)
    quad = 0.0
    for (a, b), w in zip(zip(ya, yb), Ws):
        ra, rb = a - mu[0], b - mu[1]
        quad += ra * (w[0] * ra + w[1] * rb) + rb * (w[1] * ra + w[2] * rb)
    return -0.5 * (logdet + quad) - 0.5 * math.log(dm)


def test_two_identical_studies_closed_form():
    # Sigma = 0, S_i = I, identical y: V_i = I, residuals 0, M = 2I -> -log 2
    ya = np.array([0.3, 0.3])
    yb = np.array([-1.0, -1.0])
    one = np.ones(2)
    assert K.reml_loglik(0.0, 0.0, 0.0, ya, yb, one, one)[0] == pytest.approx(-math.log(2), abs=1e-14)
    assert scalar_reml(0.0, 0.0, 0.0, ya, yb, one, one) == pytest.approx(-math.log(2), abs=1e-14)


def test_three_identical_studies_public_function():
    data = toy([[0.3, -1.0]] * 3, [[1.0, 1.0]] * 3)
    assert restricted_log_likelihood(0.0, 0.0, 0.0, data) == pytest.approx(-math.log(3), abs=1e-13)


def test_requires_three_studies():
    with pytest.raises(InsufficientStudiesError):
        restricted_log_likelihood(0.1, 0.1, 0.0, toy([[0, 0], [1, 1]], [[1, 1], [1, 1]]))


def test_reml_matches_integrated_likelihood_bruteforce():
    # exp(REML) is the Gaussian likelihood integrated over mu (flat prior), up to (2 pi)^(n - 1)
    data = toy([[0.4, -1.2], [1.1, -0.7], [-0.2, -2.0]], [[0.3, 0.2], [0.5, 0.4], [0.25, 0.6]])
    sa = sb = 0.5
    Sigma = np.diag([sa ** 2, sb ** 2])
    Vs = [Sigma + np.diag([data.s2_a[i], data.s2_b[i]]) for i in range(3)]

    def lik(mb, ma):
        return math.exp(sum(stats.multivariate_normal.logpdf(data.y[i], [ma, mb], Vs[i]) for i in range(3)))

    ybar = data.y.mean(axis=0)
    val, err = integrate.dblquad(lik, ybar[0] - 6, ybar[0] + 6, ybar[1] - 6, ybar[1] + 6,
                                 epsabs=1e-13, epsrel=1e-10)
    oracle = math.log(val) + (3 - 1) * math.log(2 * math.pi)
    assert restricted_log_likelihood(sa, sb, 0.0, data) == pytest.approx(oracle, abs=1e-7)


def test_reml_kernel_numpy_and_scalar_agree(synthetic_outcomes):
    d = synthetic_outcomes
    rng = np.random.default_rng(3)
    for _ in range(20):
        sa, sb = rng.uniform(0.01, 2.0, 2)
        rho = rng.uniform(-0.99, 0.99)
        ref = scalar_reml(sa, sb, rho, d.y_a, d.y_b, d.s2_a, d.s2_b)
        assert restricted_log_likelihood(sa, sb, rho, d) == pytest.approx(ref, abs=1e-10)
        assert K.reml_loglik(sa, sb, rho, d.y_a, d.y_b, d.s2_a, d.s2_b)[0] == pytest.approx(ref, abs=1e-10)


def test_reml_permutation_invariant(synthetic_outcomes):
    d = synthetic_outcomes
    perm = np.random.default_rng(5).permutation(len(d))
    assert restricted_log_likelihood(0.4, 0.7, -0.2, d.take(perm)) == pytest.approx(
        restricted_log_likelihood(0.4, 0.7, -0.2, d), abs=1e-11)


def test_gls_equal_weights_is_arithmetic_mean():
    data = toy([[0.1, -1], [0.5, -2], [1.2, -0.5], [0.0, 0.0]], [[0.4, 0.3]] * 4)
    mu, cov = gls_mean(np.zeros((2, 2)), data)
    np.testing.assert_allclose(mu, data.y.mean(axis=0), atol=1e-14)
    np.testing.assert_allclose(cov, np.diag([0.1, 0.075]), atol=1e-15)


def test_gls_dominant_study():
    data = toy([[2.0, -3.0], [0.0, 0.0], [5.0, 5.0]], [[1e-6, 1e-6], [1e6, 1e6], [1e6, 1e6]])
    mu, _ = gls_mean(np.array([[0.2, 0.05], [0.05, 0.1]]) * 0, data)
    np.testing.assert_allclose(mu, [2.0, -3.0], atol=1e-4)


def explicit_gls(Sigma, data):
    """Weighted normal equations solved with the explicit 2x2 inverse formula."""
    def inv(a, b, c, d):
        det = a * d - b * c
        return d / det, -b / det, -c / det, a / det

    M = [0.0, 0.0, 0.0, 0.0]
    u = [0.0, 0.0]
    for i in range(len(data)):
        w = inv(Sigma[0][0] + data.s2_a[i], Sigma[0][1], Sigma[1][0], Sigma[1][1] + data.s2_b[i])
        M = [m + x for m, x in zip(M, w)]
        u[0] += w[0] * data.y_a[i] + w[1] * data.y_b[i]
        u[1] += w[2] * data.y_a[i] + w[3] * data.y_b[i]
    c = inv(*M)
    return np.array([c[0] * u[0] + c[1] * u[1], c[2] * u[0] + c[3] * u[1]]), np.array([[c[0], c[1]], [c[2], c[3]]])


def test_gls_matches_explicit_solve():
    data = toy([[0.4, -1.2], [1.1, -0.7], [-0.2, -2.0]], [[0.3, 0.2], [0.5, 0.4], [0.25, 0.6]])
    Sigma = [[0.36, -0.12], [-0.12, 0.49]]
    mu, cov = gls_mean(Sigma, data)
    mu2, cov2 = explicit_gls(Sigma, data)
    np.testing.assert_allclose(mu, mu2, atol=1e-10, rtol=0)
    np.testing.assert_allclose(cov, cov2, atol=1e-10, rtol=0)


def test_fit_is_local_optimum(synthetic_outcomes):
    d = synthetic_outcomes
    fit = fit_reml(d)
    assert fit.converged
    p = fit.params
    best = restricted_log_likelihood(p.sigma_a, p.sigma_b, p.rho, d)
    assert best == pytest.approx(fit.reml_value, abs=1e-10)
    rng = np.random.default_rng(0)
    t0 = np.array([math.log(p.sigma_a), math.log(p.sigma_b), math.atanh(p.rho)])
    for _ in range(64):
        t = np.clip(t0 + rng.normal(0, 0.05, 3), [K.LOG_SIGMA_LO] * 2 + [K.ATANH_RHO_LO],
                    [K.LOG_SIGMA_HI] * 2 + [K.ATANH_RHO_HI])
        assert restricted_log_likelihood(math.exp(t[0]), math.exp(t[1]), math.tanh(t[2]), d) <= best + 1e-12


def test_fit_gls_consistency(synthetic_outcomes):
    fit = fit_reml(synthetic_outcomes)
    mu, cov = gls_mean(fit.params.sigma, synthetic_outcomes)
    np.testing.assert_allclose(fit.mu, mu, atol=1e-10)
    np.testing.assert_allclose(fit.cov_mu, cov, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(fit.cov_mu) > 0)


def test_fit_permutation_invariant(synthetic_outcomes):
    d = synthetic_outcomes
    a = fit_reml(d)
    for seed in range(3):
        b = fit_reml(d.take(np.random.default_rng(seed).permutation(len(d))))
        for k in ("mu_a", "mu_b", "sigma_a", "sigma_b", "rho"):
            assert getattr(b.params, k) == pytest.approx(getattr(a.params, k), abs=1e-6)


def test_duplicating_a_study_shrinks_cov_mu(synthetic_outcomes):
    d = synthetic_outcomes
    Sigma = fit_reml(d).params.sigma
    _, full = gls_mean(Sigma, d)
    for j in range(len(d)):
        idx = list(range(len(d))) + [j]
        _, dup = gls_mean(Sigma, OutcomeSet(d.y_a[idx], d.y_b[idx], d.s2_a[idx], d.s2_b[idx]))
        # Loewner order at the fitted heterogeneity: full - dup is positive definite
        assert np.all(np.linalg.eigvalsh(full - dup) > 0)


def test_fit_recovers_simulation_truth():
    truth = (0.8, -1.6, 0.7, 0.5, -0.4)
    d = to_outcomes(make_dataset(200, seed=42, params=truth, n_range=(80, 250)))
    fit = fit_reml(d)
    se = fit.se_mu
    assert abs(fit.params.mu_a - truth[0]) < 4 * se[0]
    assert abs(fit.params.mu_b - truth[1]) < 4 * se[1]
    # SE of a REML SD with N = 200 is roughly sigma / sqrt(2N) ~ 0.03
    assert fit.params.sigma_a == pytest.approx(truth[2], abs=0.12)
    assert fit.params.sigma_b == pytest.approx(truth[3], abs=0.12)
    assert fit.params.rho == pytest.approx(truth[4], abs=0.3)


def test_fit_boundary_for_homogeneous_data():
    data = toy([[0.5, -1.0]] * 5, [[0.2, 0.3]] * 5)
    fit = fit_reml(data)
    assert fit.converged
    assert fit.boundary_hit["sigma_a_zero"] and fit.boundary_hit["sigma_b_zero"]
    np.testing.assert_allclose(fit.mu, [0.5, -1.0], atol=1e-12)


def test_fit_needs_three_studies():
    with pytest.raises(InsufficientStudiesError, match="minimum study count"):
        fit_reml(toy([[0, 0], [1, 1]], [[1, 1], [1, 1]]))


def test_non_convergence_is_reported(synthetic_outcomes):
    with pytest.raises(ConvergenceError) as exc:
        fit_reml(synthetic_outcomes, FitOptions(maxiter=3))
    assert exc.value.fit is not None and not exc.value.fit.converged
    assert not fit_reml(synthetic_outcomes, FitOptions(maxiter=3), strict=False).converged


def test_fit_json_round_trip(synthetic_outcomes):
    fit = fit_reml(synthetic_outcomes)
    back = BivariateFit.from_dict(fit.to_dict())
    assert back.to_dict() == fit.to_dict()


def manual_fit(mu=(0.0, 0.0), cov=np.zeros((2, 2)), sig=(0.5, 0.5, 0.0)):
    return BivariateFit(BivariateParams(mu[0], mu[1], *sig), np.asarray(cov, float), 0.0, True, 0, {}, 5)


def test_summary_accuracy_degenerate_se():
    s = summary_accuracy(manual_fit())
    assert (s.sens.point, s.sens.lower, s.sens.upper) == (0.5, 0.5, 0.5)


def test_summary_accuracy_wald_interval(synthetic_outcomes):
    fit = fit_reml(synthetic_outcomes)
    s = summary_accuracy(fit, 0.95)
    z = 1.959963984540054
    se = fit.se_mu
    assert s.sens.lower == pytest.approx(float(expit(fit.params.mu_a - z * se[0])), abs=1e-14)
    assert s.fpr.upper == pytest.approx(float(expit(fit.params.mu_b + z * se[1])), abs=1e-14)
    for e in (s.sens, s.fpr):
        assert 0 < e.lower < e.point < e.upper < 1
    wider = summary_accuracy(fit, 0.99)
    assert wider.sens.lower < s.sens.lower and wider.sens.upper > s.sens.upper


def test_summary_accuracy_rejects_bad_input(synthetic_outcomes):
    fit = fit_reml(synthetic_outcomes, FitOptions(maxiter=3), strict=False)
    with pytest.raises(ConvergenceError):
        summary_accuracy(fit)
    with pytest.raises(ValueError):
        summary_accuracy(manual_fit(), level=1.0)


def test_chi_square_radius_constant():
    assert chi2_2df_quantile(0.95) == pytest.approx(5.9915, abs=5e-5)
    assert chi2_2df_quantile(0.95) == pytest.approx(-2 * math.log(0.05), abs=1e-12)


def test_isotropic_region_is_circle_on_logit_scale():
    c = 0.04
    fit = manual_fit(mu=(0.7, -1.3), cov=c * np.eye(2))
    poly = confidence_region(fit, 0.95, 64)
    assert poly.shape == (65, 2)
    np.testing.assert_array_equal(poly[0], poly[-1])
    la = np.log(poly[:, 1] / (1 - poly[:, 1])) - 0.7
    lb = np.log(poly[:, 0] / (1 - poly[:, 0])) + 1.3
    np.testing.assert_allclose(np.hypot(la, lb), math.sqrt(c * 5.991464547107979), rtol=1e-9)


def test_region_inside_unit_square(synthetic_outcomes):
    poly = confidence_region(fit_reml(synthetic_outcomes))
    assert np.all((poly > 0) & (poly < 1))


def test_region_singular_cov():
    with pytest.raises(ValueError):
        confidence_region(manual_fit(cov=np.zeros((2, 2))))


def test_wald_identical_fits():
    f = manual_fit(mu=(0.3, -1.0), cov=np.diag([0.01, 0.02]))
    w = wald_compare_summary(f, f)
    assert (w.z_sens, w.z_fpr, w.p_sens, w.p_fpr) == (0.0, 0.0, 1.0, 1.0)


def test_wald_hand_computed():
    f1 = manual_fit(mu=(1.0, -2.0), cov=np.diag([0.04, 0.09]))
    f2 = manual_fit(mu=(0.5, -1.0), cov=np.diag([0.05, 0.16]))
    w = wald_compare_summary(f1, f2)
    assert w.z_sens == pytest.approx(0.5 / 0.3, abs=1e-12)
    assert w.z_fpr == pytest.approx(-1.0 / 0.5, abs=1e-12)
    assert w.p_fpr == pytest.approx(2 * stats.norm.cdf(-2.0), abs=1e-12)
