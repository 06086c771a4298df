"""Contraction certification for the filter: rates, radii, certificates.

Central object is the symmetric matrix

    M = P Atil^T + Atil P + P Ctil^T R^{-1} Ctil P - P C^T R^{-1} C P - Q

where Atil and Ctil are the Jacobian offsets between a probe state z and
the estimate, and C is the output Jacobian at z. Trajectories of the
virtual system contract toward each other at rate gamma wherever
M + 2 gamma P is negative semidefinite. This module evaluates that
condition, searches for the largest verified radius around the estimate,
computes the closed-form radius from second-derivative bounds and packages
the results into a certificate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, PreconditionError
from .model import HessianBounds, SystemModel, eval_jacobians, tilde_matrices

# slack allowed when deciding lambda_max(S) <= 0 in floating point
PSD_TOL_SCALE = 1e-9


def psd_tolerance(S: np.ndarray) -> float:
    """Absolute slack below which lambda_max(S) still counts as <= 0."""
    return PSD_TOL_SCALE * (1.0 + float(np.linalg.norm(S, 2)))


def is_negative_semidefinite(S: np.ndarray) -> bool:
    S = 0.5 * (S + S.T)
    return float(np.linalg.eigvalsh(S)[-1]) <= psd_tolerance(S)


@dataclass
class ContractionCertificate:
    """Region and rate for which filter convergence is certified.

    ``basin_euclid`` is the Euclidean radius of certified initial errors,
    ``rho`` the radius in which the differential inequality was
    established, and ``envelope_factor`` the overshoot constant of the
    error envelope envelope_factor * ||e(0)|| * exp(-gamma t). The p
    bounds are grid-level observations when ``grid_verified`` is set, so
    the certificate is conditional on them, not a proof.
    """

    gamma: float
    zeta_plus: float
    rho: float
    p_lo: float
    p_hi: float
    q_lo: float
    r_lo: float
    alpha: float
    kappa_A: float
    kappa_C: float
    basin_euclid: float
    envelope_factor: float
    grid_verified: bool = True
    kappa_sampled: bool = False

    def as_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "zeta_plus": self.zeta_plus,
            "rho": self.rho,
            "p_lo": self.p_lo,
            "p_hi": self.p_hi,
            "q_lo": self.q_lo,
            "r_lo": self.r_lo,
            "alpha": self.alpha,
            "kappa_A": self.kappa_A,
            "kappa_C": self.kappa_C,
            "basin_euclid": self.basin_euclid,
            "envelope_factor": self.envelope_factor,
            "grid_verified": self.grid_verified,
            "kappa_sampled": self.kappa_sampled,
        }


def contraction_matrix(model: SystemModel, z: np.ndarray, xhat: np.ndarray,
                       P: np.ndarray, Q: np.ndarray, R: np.ndarray,
                       t: float) -> np.ndarray:
    """The matrix M governing d/dt of the weighted squared distance.

    Along the linearized virtual flow, d/dt (dz^T P^{-1} dz) equals
    dz^T P^{-1} M P^{-1} dz with this M. Negative semidefiniteness of
    M + 2 gamma P on a region therefore certifies contraction at rate
    gamma there. The result is exactly symmetrized.
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    xhat = np.asarray(xhat, dtype=float).reshape(-1)
    Az, Cz = eval_jacobians(model, z, t)
    Ah, Ch = eval_jacobians(model, xhat, t)
    Atil = Az - Ah
    Ctil = Cz - Ch
    CtP = Ctil @ P
    CzP = Cz @ P
    M = (P @ Atil.T + Atil @ P
         + CtP.T @ np.linalg.solve(R, CtP)
         - CzP.T @ np.linalg.solve(R, CzP)
         - Q)
    return 0.5 * (M + M.T)


def check_contraction_inequality(model: SystemModel, z: np.ndarray, xhat: np.ndarray,
                                 P: np.ndarray, Q: np.ndarray, R: np.ndarray,
                                 gamma: float, t: float) -> bool:
    """True iff M + 2 gamma P is negative semidefinite at the probe point.

    This is the pointwise contraction inequality; gamma must be
    nonnegative.
    """
    if gamma < 0.0:
        raise ConfigurationError(f"gamma must be nonnegative, got {gamma}")
    M = contraction_matrix(model, z, xhat, P, Q, R, t)
    return is_negative_semidefinite(M + 2.0 * gamma * P)


def _probe_directions(dim: int, direction_samples: int,
                      rng: np.random.Generator) -> np.ndarray:
    axes = np.vstack([np.eye(dim), -np.eye(dim)])
    if direction_samples <= 0:
        return axes
    raw = rng.standard_normal((direction_samples, dim))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return np.vstack([axes, raw / norms])


def empirical_radius(model: SystemModel, xhat: np.ndarray, P: np.ndarray,
                     Q: np.ndarray, R: np.ndarray, gamma: float, t: float,
                     direction_samples: int = 64, *, r_max: float = 1e6,
                     rel_tol: float = 1e-6, seed: int = 0) -> float:
    """Largest sampled radius around xhat on which the inequality holds.

    Bisects over the radius, testing the contraction inequality at
    xhat + r u for the signed coordinate axes plus ``direction_samples``
    seeded random unit directions. The value is a sampled over-approximation of the true
    radius: the inequality is only verified on the probed directions, and
    the search assumes the pass set is an interval. Returns ``r_max``
    when even the largest radius passes (linear systems) and 0.0 when the
    center itself fails.
    """
    xhat = np.asarray(xhat, dtype=float).reshape(-1)
    rng = np.random.default_rng(seed)
    dirs = _probe_directions(len(xhat), direction_samples, rng)

    def holds(r: float) -> bool:
        return all(check_contraction_inequality(model, xhat + r * u, xhat,
                                                P, Q, R, gamma, t)
                   for u in dirs)

    if not check_contraction_inequality(model, xhat, xhat, P, Q, R, gamma, t):
        return 0.0
    if holds(r_max):
        return r_max
    lo, hi = 0.0, r_max
    for _ in range(200):
        if hi - lo <= rel_tol * max(lo, 1e-12):
            break
        mid = 0.5 * (lo + hi)
        if holds(mid):
            lo = mid
        else:
            hi = mid
    return lo


def zeta_plus(kappa_A: float, kappa_C: float, p_hi: float, q_lo: float,
              r_lo: float, gamma: float) -> float:
    """Positive root of (p_hi^2/r_lo) kC^2 z^2 + 2 p_hi kA z = q_lo - 2 gamma p_hi.

    The root is the analytic contraction-region radius. Degenerate cases:
    kappa_C = 0 reduces to the linear equation, kappa_A = 0 to a pure
    square root, and both zero means the inequality holds at every radius,
    returned as +inf.
    """
    if p_hi <= 0.0 or q_lo <= 0.0 or r_lo <= 0.0:
        raise ConfigurationError("p_hi, q_lo, r_lo must be positive")
    if kappa_A < 0.0 or kappa_C < 0.0:
        raise ConfigurationError("kappa bounds must be nonnegative")
    slack = q_lo - 2.0 * gamma * p_hi
    if gamma < 0.0 or slack < -PSD_TOL_SCALE * q_lo:
        raise ConfigurationError(
            f"gamma must lie in [0, q_lo/(2 p_hi)] = [0, {q_lo / (2.0 * p_hi):.6g}], "
            f"got {gamma}")
    slack = max(slack, 0.0)
    if kappa_A == 0.0 and kappa_C == 0.0:
        return float("inf")
    if kappa_C == 0.0:
        return slack / (2.0 * p_hi * kappa_A)
    if kappa_A == 0.0:
        return math.sqrt(slack * r_lo) / (p_hi * kappa_C)
    a = (p_hi ** 2 / r_lo) * kappa_C ** 2
    b = 2.0 * p_hi * kappa_A
    return (-b + math.sqrt(b * b + 4.0 * a * slack)) / (2.0 * a)


def make_certificate(bounds: dict, hess: HessianBounds,
                     gamma: float | None = None, *,
                     r_lo: float | None = None) -> ContractionCertificate:
    """Assemble a certificate from covariance bounds and curvature bounds.

    Parameters
    ----------
    bounds : dict
        Covariance bounds report with keys p_lo, p_hi, q_lo and, unless
        ``r_lo`` is passed separately, r_lo.
    hess : HessianBounds
        Curvature bounds kappa_A, kappa_C valid on the radius-alpha ball.
    gamma : float, optional
        Requested rate. Defaults to q_lo / (4 p_hi); values above the cap
        q_lo / (2 p_hi) are rejected.

    Raises
    ------
    ConfigurationError
        If p_lo <= 0 (no certificate without a positive covariance floor),
        if r_lo is unavailable, or if gamma is out of range.
    """
    p_lo = float(bounds["p_lo"])
    p_hi = float(bounds["p_hi"])
    q_lo = float(bounds["q_lo"])
    if r_lo is None:
        if "r_lo" not in bounds:
            raise ConfigurationError("r_lo missing from bounds report; pass r_lo=")
        r_lo = float(bounds["r_lo"])
    if p_lo <= 0.0:
        raise ConfigurationError(
            f"certification refused: covariance floor p_lo = {p_lo:.3e} is not positive")
    if p_hi < p_lo:
        raise ConfigurationError("bounds report has p_hi < p_lo")
    cap = q_lo / (2.0 * p_hi)
    if gamma is None:
        gamma = q_lo / (4.0 * p_hi)
    if not 0.0 <= gamma <= cap * (1.0 + 1e-12):
        raise ConfigurationError(
            f"gamma = {gamma:.6g} outside [0, q_lo/(2 p_hi)] = [0, {cap:.6g}]")
    zeta = zeta_plus(hess.kappa_A, hess.kappa_C, p_hi, q_lo, r_lo, gamma)
    rho = min(hess.alpha, zeta)
    basin = rho * math.sqrt(p_lo / p_hi)
    return ContractionCertificate(
        gamma=float(gamma), zeta_plus=float(zeta), rho=float(rho),
        p_lo=p_lo, p_hi=p_hi, q_lo=q_lo, r_lo=float(r_lo),
        alpha=float(hess.alpha), kappa_A=float(hess.kappa_A),
        kappa_C=float(hess.kappa_C), basin_euclid=float(basin),
        envelope_factor=float(math.sqrt(p_hi / p_lo)),
        grid_verified=bool(bounds.get("grid_verified", True)),
        kappa_sampled=hess.sampled)


def linear_output_check(model: SystemModel, traj, sample_states,
                        gamma: float, time_samples: int = 50) -> dict:
    """Linear-output contraction test over sampled states and times.

    For a linear output map the inequality reduces to
    lambda_max(Atil P + P Atil^T) <= q_lo - 2 gamma p_hi. The check
    runs over every state in ``sample_states`` against up to
    ``time_samples`` nodes of the filter run and reports the worst margin
    (threshold minus left side; negative means failure).

    Raises
    ------
    PreconditionError
        If the output Jacobian varies across the sampled states, i.e. the
        output map is not linear.
    """
    q_lo = traj.config.q_lo
    p_hi = traj.p_hi
    threshold = q_lo - 2.0 * gamma * p_hi
    idx = np.unique(np.linspace(0, len(traj.times) - 1,
                                min(time_samples, len(traj.times))).astype(int))
    sample_states = [np.asarray(z, dtype=float).reshape(-1) for z in sample_states]

    worst = float("inf")
    worst_time = None
    for k in idx:
        t = float(traj.times[k])
        xhat = traj.states[k]
        P = traj.covariances[k]
        _, Ch = eval_jacobians(model, xhat, t)
        for z in sample_states:
            Atil, Ctil = tilde_matrices(model, z, xhat, t)
            if np.linalg.norm(Ctil) > PSD_TOL_SCALE * (1.0 + np.linalg.norm(Ch)):
                raise PreconditionError(
                    "output map is not linear: output Jacobian varies across states")
            S = Atil @ P + P @ Atil.T
            margin = threshold - float(np.linalg.eigvalsh(0.5 * (S + S.T))[-1])
            if margin < worst:
                worst = margin
                worst_time = t
    tol = PSD_TOL_SCALE * (1.0 + abs(threshold))
    return {
        "passed": bool(worst >= -tol),
        "worst_margin": worst,
        "worst_time": worst_time,
        "threshold": threshold,
        "gamma": gamma,
        "states_sampled": len(sample_states),
        "times_sampled": int(len(idx)),
    }


def compare_analyses(p_lo: float, p_hi: float, q_lo: float, r_lo: float,
                     kappa_A: float, kappa_C: float,
                     c_hi: float | None = None) -> dict:
    """Side-by-side rate and basin formulas of the two analysis routes.

    The Lyapunov row needs an output-Jacobian bound ``c_hi`` for its
    kappa_A = 0 basin; when c_hi is omitted that cell is None. The
    second row never uses c_hi. Zero kappa entries yield +inf basins.
    Ratio cells divide row two by row one.
    """
    for name, v in (("p_lo", p_lo), ("p_hi", p_hi), ("q_lo", q_lo), ("r_lo", r_lo)):
        if v <= 0.0:
            raise ConfigurationError(f"{name} must be positive, got {v}")

    def over(num: float, den: float) -> float:
        return num / den if den > 0.0 else float("inf")

    lyap = {
        "rate": q_lo * p_lo / (4.0 * p_hi ** 2),
        "basin_kappa_C0": over((p_lo / p_hi) * q_lo, 4.0 * kappa_A * p_hi),
        "basin_kappa_A0": (over(q_lo * r_lo, 4.0 * c_hi * kappa_C * p_hi ** 2)
                           if c_hi is not None else None),
    }
    contr = {
        "rate": q_lo / (4.0 * p_hi),
        "basin_kappa_C0": over(math.sqrt(p_lo / p_hi) * q_lo, 4.0 * kappa_A * p_hi),
        "basin_kappa_A0": over(math.sqrt(q_lo * p_lo * r_lo),
                               kappa_C * p_hi ** 1.5 * math.sqrt(2.0)),
    }
    ratios = {
        "rate": contr["rate"] / lyap["rate"],
        "basin_kappa_C0": _safe_ratio(contr["basin_kappa_C0"], lyap["basin_kappa_C0"]),
        "basin_kappa_A0": (_safe_ratio(contr["basin_kappa_A0"], lyap["basin_kappa_A0"])
                           if lyap["basin_kappa_A0"] is not None else None),
    }
    return {"lyapunov": lyap, "contraction": contr, "ratio": ratios}


def _safe_ratio(a: float, b: float) -> float:
    if math.isinf(a) and math.isinf(b):
        return float("nan")
    return a / b if b != 0.0 else float("inf")


def inflation_rate_gain(M: np.ndarray, P: np.ndarray, N: np.ndarray,
                        gamma: float) -> bool:
    """Check that additive covariance inflation raises the rate by n_lo/p_hi.

    Given M + 2 gamma P <= 0 (enforced as a precondition), verifies
    (M - 2N) + 2 (gamma + n_lo/p_hi) P <= 0 with n_lo = lambda_min(N) and
    p_hi = lambda_max(P).
    """
    M = np.asarray(M, dtype=float)
    P = np.asarray(P, dtype=float)
    N = np.asarray(N, dtype=float)
    if not is_negative_semidefinite(M + 2.0 * gamma * P):
        raise PreconditionError("M + 2 gamma P is not negative semidefinite")
    n_lo = float(np.linalg.eigvalsh(0.5 * (N + N.T))[0])
    p_hi = float(np.linalg.eigvalsh(0.5 * (P + P.T))[-1])
    S = (M - 2.0 * N) + 2.0 * (gamma + n_lo / p_hi) * P
    return is_negative_semidefinite(S)
