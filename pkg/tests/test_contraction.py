import math

import numpy as np
import pytest
from conftest import random_spd

import ekfcert as ek


def _cubic_model(eps=0.1):
    return ek.make("cubic-scalar", eps=eps).model


def _flow_only_model():
    # linear drift, identically zero output map: the gain never acts
    return ek.SystemModel(
        state_dim=1, output_dim=1,
        dynamics=lambda x, t: -x,
        output=lambda x, t: np.zeros(1),
        jacobian_A=lambda x, t: -np.eye(1),
        jacobian_C=lambda x, t: np.zeros((1, 1)))


def test_contraction_matrix_at_center():
    model = ek.make("scalar-riccati").model
    M = ek.contraction_matrix(model, np.zeros(1), np.zeros(1),
                              np.eye(1), np.eye(1), np.eye(1), 0.0)
    assert M[0, 0] == pytest.approx(-2.0, abs=1e-14)


def test_contraction_matrix_linear_system_any_probe():
    model = ek.make("ltv-linear").model
    rng = np.random.default_rng(5)
    P = random_spd(rng, 2)
    Q = random_spd(rng, 2)
    R = np.array([[0.7]])
    z = rng.uniform(-3, 3, size=2)
    xh = rng.uniform(-3, 3, size=2)
    M = ek.contraction_matrix(model, z, xh, P, Q, R, 0.9)
    _, C = ek.eval_jacobians(model, z, 0.9)
    CP = C @ P
    expected = -CP.T @ np.linalg.solve(R, CP) - Q
    assert np.allclose(M, 0.5 * (expected + expected.T), atol=1e-12)


def test_contraction_matrix_cubic_hand_value():
    model = ek.SystemModel(
        state_dim=1, output_dim=1,
        dynamics=lambda x, t: x ** 3,
        output=lambda x, t: x.copy(),
        jacobian_A=lambda x, t: np.array([[3.0 * x[0] ** 2]]),
        jacobian_C=lambda x, t: np.ones((1, 1)))
    # Atil = 3 z^2 = 0.03, Ctil = 0: M = 2 P Atil - P^2/r - q = 0.06 - 2
    M = ek.contraction_matrix(model, np.array([0.1]), np.zeros(1),
                              np.eye(1), np.eye(1), np.eye(1), 0.0)
    assert abs(M[0, 0] - (-1.94)) < 1e-12


def test_contraction_matrix_matches_jacobian_assembly():
    rng = np.random.default_rng(11)
    model = ek.make("vanderpol-pos").model
    for _ in range(25):
        z = rng.uniform(-2, 2, size=2)
        xh = rng.uniform(-2, 2, size=2)
        P = random_spd(rng, 2)
        Q = random_spd(rng, 2)
        R = np.array([[rng.uniform(0.5, 2.0)]])
        t = float(rng.uniform(0, 3))
        M = ek.contraction_matrix(model, z, xh, P, Q, R, t)
        Az, Cz = ek.eval_jacobians(model, z, t)
        Atil, Ctil = ek.tilde_matrices(model, z, xh, t)
        raw = (P @ Atil.T + Atil @ P
               + P @ Ctil.T @ np.linalg.solve(R, Ctil @ P)
               - P @ Cz.T @ np.linalg.solve(R, Cz @ P) - Q)
        assert np.allclose(M, 0.5 * (raw + raw.T), atol=1e-11)


def test_inequality_scalar_example():
    model = ek.make("scalar-riccati").model
    args = (np.zeros(1), np.zeros(1), np.eye(1), np.eye(1), np.eye(1))
    assert ek.check_contraction_inequality(model, *args, 0.25, 0.0)
    with pytest.raises(ek.ConfigurationError):
        ek.check_contraction_inequality(model, *args, -0.1, 0.0)


def test_inequality_boundary_rate():
    # with zero output M = -Q, so the cap rate q/(2 p) sits exactly on the edge
    model = _flow_only_model()
    P = np.array([[2.0]])
    Q = np.eye(1)
    R = np.eye(1)
    z = np.array([0.7])
    xh = np.array([-0.4])
    assert ek.check_contraction_inequality(model, z, xh, P, Q, R, 0.25, 0.0)
    assert not ek.check_contraction_inequality(model, z, xh, P, Q, R, 0.3, 0.0)


def test_inequality_equivalent_to_congruence_form():
    # M + 2 gamma P <= 0 iff the P-congruence has top eigenvalue <= -2 gamma
    rng = np.random.default_rng(17)
    for _ in range(100):
        n = int(rng.integers(1, 5))
        P = random_spd(rng, n)
        W = rng.standard_normal((n, n))
        M = 0.5 * (W + W.T)
        gamma = float(rng.uniform(0.0, 1.0))
        S = M + 2.0 * gamma * P
        top = float(np.linalg.eigvalsh(S)[-1])
        if abs(top) < 1e-6:
            continue
        lam, V = np.linalg.eigh(P)
        P_inv_sqrt = V @ np.diag(lam ** -0.5) @ V.T
        G = P_inv_sqrt @ M @ P_inv_sqrt
        top_g = float(np.linalg.eigvalsh(0.5 * (G + G.T))[-1])
        assert (top <= 0.0) == (top_g <= -2.0 * gamma + 1e-12 * max(1.0, abs(top_g)))


def test_empirical_radius_linear_hits_cap():
    model = ek.make("ltv-linear").model
    r = ek.empirical_radius(model, np.zeros(2), np.eye(2), np.eye(2),
                            np.eye(1), 0.25, 0.0)
    assert r == 1e6


def test_empirical_radius_cubic_closed_form():
    model = ek.SystemModel(
        state_dim=1, output_dim=1,
        dynamics=lambda x, t: x ** 3,
        output=lambda x, t: x.copy(),
        jacobian_A=lambda x, t: np.array([[3.0 * x[0] ** 2]]),
        jacobian_C=lambda x, t: np.ones((1, 1)))
    # M = 6 z^2 - 2 at gamma = 0, so the inequality fails beyond 1/sqrt(3)
    r = ek.empirical_radius(model, np.zeros(1), np.eye(1), np.eye(1),
                            np.eye(1), 0.0, 0.0)
    assert r == pytest.approx(1.0 / math.sqrt(3.0), rel=1e-3)


def test_empirical_radius_zero_when_center_fails():
    model = ek.make("scalar-riccati").model
    r = ek.empirical_radius(model, np.zeros(1), np.eye(1), np.eye(1),
                            np.eye(1), 5.0, 0.0)
    assert r == 0.0


def test_empirical_radius_deterministic():
    model = _cubic_model()
    args = (np.zeros(1), np.eye(1), np.eye(1), np.eye(1), 0.1, 0.0)
    assert ek.empirical_radius(model, *args) == ek.empirical_radius(model, *args)


def test_zeta_plus_closed_forms():
    assert ek.zeta_plus(1.0, 0.0, 1.0, 1.0, 1.0, 0.25) == pytest.approx(0.25)
    assert ek.zeta_plus(0.0, 1.0, 1.0, 1.0, 1.0, 0.25) == pytest.approx(math.sqrt(0.5))
    assert ek.zeta_plus(1.0, 1.0, 1.0, 2.0, 1.0, 0.0) == pytest.approx(math.sqrt(3.0) - 1.0)
    assert ek.zeta_plus(0.0, 0.0, 1.0, 1.0, 1.0, 0.1) == float("inf")


def test_zeta_plus_root_residual_and_monotonicity():
    rng = np.random.default_rng(23)
    for _ in range(100):
        ka = float(rng.uniform(0.05, 2.0))
        kc = float(rng.uniform(0.05, 2.0))
        p_hi = float(rng.uniform(0.5, 3.0))
        q_lo = float(rng.uniform(0.2, 2.0))
        r_lo = float(rng.uniform(0.2, 2.0))
        cap = q_lo / (2.0 * p_hi)
        g1 = float(rng.uniform(0.0, 0.5 * cap))
        g2 = float(rng.uniform(0.5 * cap, 0.99 * cap))
        z1 = ek.zeta_plus(ka, kc, p_hi, q_lo, r_lo, g1)
        z2 = ek.zeta_plus(ka, kc, p_hi, q_lo, r_lo, g2)
        slack = q_lo - 2.0 * g1 * p_hi
        residual = (p_hi ** 2 / r_lo) * kc ** 2 * z1 ** 2 + 2.0 * p_hi * ka * z1 - slack
        assert abs(residual) <= 1e-10 * (1.0 + slack)
        assert z2 <= z1 + 1e-14


def test_zeta_plus_rejects_out_of_range_gamma():
    with pytest.raises(ek.ConfigurationError):
        ek.zeta_plus(1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    with pytest.raises(ek.ConfigurationError):
        ek.zeta_plus(1.0, 1.0, -1.0, 1.0, 1.0, 0.1)


def _bounds(p_lo, p_hi, q_lo=1.0, r_lo=1.0):
    return {"p_lo": p_lo, "p_hi": p_hi, "q_lo": q_lo, "r_lo": r_lo}


def test_make_certificate_unit_example():
    cert = ek.make_certificate(_bounds(1.0, 1.0),
                               ek.HessianBounds(alpha=10.0, kappa_A=1.0, kappa_C=0.0))
    assert cert.gamma == pytest.approx(0.25)
    assert cert.zeta_plus == pytest.approx(0.25)
    assert cert.rho == pytest.approx(0.25)
    assert cert.basin_euclid == pytest.approx(0.25)
    assert cert.envelope_factor == pytest.approx(1.0)
    assert not cert.kappa_sampled
    d = cert.as_dict()
    assert d["rho"] == cert.rho and d["gamma"] == cert.gamma


def test_make_certificate_conditioning_factor():
    cert = ek.make_certificate(_bounds(1.0, 4.0),
                               ek.HessianBounds(alpha=10.0, kappa_A=1.0, kappa_C=0.0))
    assert cert.gamma == pytest.approx(1.0 / 16.0)
    assert cert.envelope_factor == pytest.approx(2.0)
    assert cert.basin_euclid == pytest.approx(cert.rho * 0.5)


def test_make_certificate_alpha_clamps_rho():
    cert = ek.make_certificate(_bounds(1.0, 1.0),
                               ek.HessianBounds(alpha=0.1, kappa_A=1.0, kappa_C=0.0))
    assert cert.zeta_plus == pytest.approx(0.25)
    assert cert.rho == pytest.approx(0.1)


def test_make_certificate_rejects_bad_inputs():
    hess = ek.HessianBounds(alpha=1.0, kappa_A=1.0, kappa_C=0.0)
    with pytest.raises(ek.ConfigurationError, match="certification refused"):
        ek.make_certificate(_bounds(0.0, 1.0), hess)
    with pytest.raises(ek.ConfigurationError):
        ek.make_certificate(_bounds(1.0, 1.0), hess, gamma=0.6)
    with pytest.raises(ek.ConfigurationError):
        ek.make_certificate({"p_lo": 1.0, "p_hi": 1.0, "q_lo": 1.0}, hess)
    cert = ek.make_certificate({"p_lo": 1.0, "p_hi": 1.0, "q_lo": 1.0}, hess,
                               r_lo=2.0)
    assert cert.r_lo == 2.0


@pytest.fixture(scope="module")
def ltv_traj():
    entry = ek.make("ltv-linear")
    fc = ek.FilterConfig(model=entry.model, Q=np.eye(2), R=np.eye(1),
                         P0=np.eye(2), x0=np.array([1.0, 0.0]), horizon=4.0)
    truth, y = ek.integrate_truth(entry.model, np.array([0.8, -0.2]), 4.0, fc.step)
    return ek.integrate_ekf(fc, y)


def test_linear_output_check_passes_for_linear_dynamics(ltv_traj):
    model = ltv_traj.config.model
    gamma = ltv_traj.config.q_lo / (4.0 * ltv_traj.p_hi)
    states = [np.array([3.0, -1.0]), np.array([-2.0, 5.0])]
    rep = ek.linear_output_check(model, ltv_traj, states, gamma)
    assert rep["passed"]
    # Atil vanishes identically, so the worst margin is the threshold itself
    assert rep["worst_margin"] == rep["threshold"]
    assert rep["states_sampled"] == 2
    assert rep["times_sampled"] == 50


def test_linear_output_check_fails_above_cap(ltv_traj):
    model = ltv_traj.config.model
    gamma = 1.05 * ltv_traj.config.q_lo / (2.0 * ltv_traj.p_hi)
    rep = ek.linear_output_check(model, ltv_traj, [np.array([1.0, 1.0])], gamma)
    assert not rep["passed"]
    assert rep["worst_margin"] < 0.0


def test_linear_output_check_rejects_nonlinear_output():
    model = ek.SystemModel(
        state_dim=1, output_dim=1,
        dynamics=lambda x, t: -x,
        output=lambda x, t: x ** 2,
        jacobian_A=lambda x, t: -np.eye(1),
        jacobian_C=lambda x, t: np.array([[2.0 * x[0]]]))
    fc = ek.FilterConfig(model=model, Q=np.eye(1), R=np.eye(1), P0=np.eye(1),
                         x0=np.array([0.5]), horizon=1.0, step=0.01)
    traj = ek.integrate_ekf(fc, lambda t: np.zeros(1))
    with pytest.raises(ek.PreconditionError):
        ek.linear_output_check(model, traj, [np.array([1.5])], 0.1)


def test_compare_analyses_unit_parameters():
    out = ek.compare_analyses(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, c_hi=1.0)
    assert out["lyapunov"]["rate"] == pytest.approx(0.25)
    assert out["contraction"]["rate"] == pytest.approx(0.25)
    assert out["ratio"]["rate"] == pytest.approx(1.0)
    assert out["lyapunov"]["basin_kappa_C0"] == pytest.approx(0.25)
    assert out["contraction"]["basin_kappa_C0"] == pytest.approx(0.25)
    assert out["lyapunov"]["basin_kappa_A0"] == pytest.approx(0.25)
    assert out["contraction"]["basin_kappa_A0"] == pytest.approx(1.0 / math.sqrt(2.0))


def test_compare_analyses_conditioning_gap():
    out = ek.compare_analyses(1.0, 2.0, 1.0, 1.0, 1.0, 1.0, c_hi=1.0)
    assert out["lyapunov"]["rate"] == pytest.approx(1.0 / 16.0)
    assert out["contraction"]["rate"] == pytest.approx(1.0 / 8.0)
    assert out["ratio"]["rate"] == pytest.approx(2.0)
    assert out["ratio"]["basin_kappa_C0"] == pytest.approx(math.sqrt(2.0))


def test_compare_analyses_degenerate_cells():
    out = ek.compare_analyses(1.0, 1.0, 1.0, 1.0, 0.0, 1.0, c_hi=1.0)
    assert out["lyapunov"]["basin_kappa_C0"] == float("inf")
    assert out["contraction"]["basin_kappa_C0"] == float("inf")
    assert math.isnan(out["ratio"]["basin_kappa_C0"])
    out = ek.compare_analyses(1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    assert out["lyapunov"]["basin_kappa_A0"] is None
    assert out["ratio"]["basin_kappa_A0"] is None
    with pytest.raises(ek.ConfigurationError):
        ek.compare_analyses(0.0, 1.0, 1.0, 1.0, 1.0, 1.0)


def test_inflation_rate_gain_equality_slack():
    P = 2.0 * np.eye(2)
    gamma = 0.3
    M = -2.0 * gamma * P
    N = 0.5 * np.eye(2)
    assert ek.inflation_rate_gain(M, P, N, gamma)
    assert ek.inflation_rate_gain(M, P, np.zeros((2, 2)), gamma)


def test_inflation_rate_gain_requires_precondition():
    with pytest.raises(ek.PreconditionError):
        ek.inflation_rate_gain(np.eye(2), np.eye(2), np.eye(2), 1.0)


def test_inflation_rate_gain_random_instances():
    rng = np.random.default_rng(31)
    for _ in range(100):
        n = int(rng.integers(1, 5))
        P = random_spd(rng, n)
        gamma = float(rng.uniform(0.0, 1.0))
        W = rng.standard_normal((n, n)) * rng.uniform(0.0, 2.0)
        M = -2.0 * gamma * P - W @ W.T
        N = random_spd(rng, n, lo=0.0, hi=1.5)
        assert ek.inflation_rate_gain(M, P, N, gamma)


def test_offset_term_bounds():
    # the two spectral bounds that turn curvature into the radius polynomial
    rng = np.random.default_rng(37)
    for _ in range(200):
        n = int(rng.integers(1, 5))
        p = int(rng.integers(1, 4))
        P = random_spd(rng, n)
        R = random_spd(rng, p)
        At = rng.standard_normal((n, n))
        Ct = rng.standard_normal((p, n))
        p_hi = float(np.linalg.eigvalsh(P)[-1])
        r_lo = float(np.linalg.eigvalsh(R)[0])
        S1 = At @ P + P @ At.T
        lhs1 = float(np.linalg.eigvalsh(0.5 * (S1 + S1.T))[-1])
        assert lhs1 <= 2.0 * p_hi * np.linalg.norm(At, 2) + 1e-10
        CtP = Ct @ P
        S2 = CtP.T @ np.linalg.solve(R, CtP)
        lhs2 = float(np.linalg.eigvalsh(0.5 * (S2 + S2.T))[-1])
        assert lhs2 <= (p_hi ** 2 / r_lo) * np.linalg.norm(Ct, 2) ** 2 + 1e-10


def test_certified_radius_implies_inequality(cubic_rig):
    # kappa_A valid on the unit tube around the estimate path, which stays
    # inside |x| <= 0.3: sup |f''| there is 6 eps (1 + 0.3)
    traj = cubic_rig["traj"]
    model = cubic_rig["model"]
    rep = ek.covariance_bounds_report(traj)
    reach = float(np.max(np.abs(traj.states)))
    kappa = 6.0 * 0.1 * (1.0 + reach)
    cert = ek.make_certificate(rep, ek.HessianBounds(alpha=1.0, kappa_A=kappa,
                                                     kappa_C=0.0))
    assert 0.0 < cert.rho <= 1.0
    rng = np.random.default_rng(41)
    cfg = traj.config
    for _ in range(50):
        k = int(rng.integers(0, len(traj.times)))
        t = float(traj.times[k])
        xhat = traj.states[k]
        r = float(rng.uniform(0.0, 0.999 * cert.rho))
        z = xhat + r * np.sign(rng.standard_normal()) * np.ones(1)
        assert ek.check_contraction_inequality(model, z, xhat,
                                               traj.covariances[k],
                                               cfg.Q, cfg.R, cert.gamma, t)
