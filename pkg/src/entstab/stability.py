"""Stability bounds for entropic Brenier maps and the diagnostics behind them.

Given a source ``rho`` and two targets ``mu``, ``nu``, the quantities of
interest are the map gap ``||T^mu - T^nu||_{L2(rho)}``, the bound
``(1 + 2 sqrt(H_phi H_psi) / eps) W2(mu, nu)`` and the intermediate KL
terms ``I``, ``I_bar`` and ``I_tilde`` built from an optimal coupling ``tau``
of ``mu`` and ``nu``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .entropic_maps import ConditionalDistribution, backward_map, estimate_hmax, forward_map
from .exact_ot import TransportPlan, solve_discrete_w2
from .measures import DiscreteMeasure
from .sinkhorn import DEFAULT_OPTIONS, EntropicPotentials, SolverOptions, logsumexp, solve_entropic

MAX_TRIPLE_SIZE = 10**7
STEP2_RTOL = 1e-8
STEP2_ATOL = 1e-12
SLACK = 1e-9


@dataclass(frozen=True)
class StabilityReport:
    epsilon: float
    R: float
    lhs: float
    w2: float
    rhs_bounded: float
    rhs_general: float
    rhs_general_orientation: str
    hmax_cap_phi: float
    hmax_cap_psi: float
    hmax_probe_phi: float
    hmax_probe_psi: float
    rhs_smooth: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ChainDiagnostics:
    epsilon: float
    I: float
    I_bar: float
    I_tilde: float
    coupling_term: float
    backward_gap: float
    step1_rhs: float
    lhs: float
    w2: float
    hmax_cap_phi: float
    hmax_cap_psi: float
    q_normalization_residual: float

    def checks(self) -> dict[str, bool]:
        """Each inequality and identity used in the proof chain, evaluated."""
        scale = max(abs(self.coupling_term), abs(self.epsilon * (self.I_bar + self.I_tilde)))
        return {
            "I_nonnegative": self.I >= -SLACK,
            "jensen": self.I <= self.I_bar + SLACK,
            "I_tilde_nonnegative": self.I_tilde >= -SLACK,
            "step2_identity": abs(self.epsilon * (self.I_bar + self.I_tilde) - self.coupling_term)
            <= STEP2_RTOL * scale + STEP2_ATOL,
            "step3": self.backward_gap <= 2.0 * self.hmax_cap_psi * self.I_bar + SLACK,
            "step1": self.lhs <= self.step1_rhs + SLACK,
        }

    def all_hold(self) -> bool:
        return all(self.checks().values())

    def as_dict(self) -> dict:
        return asdict(self)


def map_l2_distance(pA: EntropicPotentials, pB: EntropicPotentials) -> float:
    """``||T_A - T_B||_{L2(rho)}`` for two solutions sharing the source ``rho``."""
    if not pA.source.same_as(pB.source):
        raise ValueError("potentials have different source measures")
    rho = pA.source
    diff = forward_map(pA, rho.points) - forward_map(pB, rho.points)
    return float(math.sqrt(max(rho.weights @ np.sum(diff**2, axis=1), 0.0)))


def _check_tau(pMu: EntropicPotentials, tau: TransportPlan, nu: DiscreteMeasure | None = None):
    if not tau.row_measure.same_as(pMu.target):
        raise ValueError("plan rows must be the target measure of the mu-potentials")
    if nu is not None and not tau.col_measure.same_as(nu):
        raise ValueError("plan columns must be the target measure of the nu-potentials")


def _log_q(pMu: EntropicPotentials, tau: TransportPlan, rows: np.ndarray) -> np.ndarray:
    """``log Q_j(x_i)`` before normalization, for source atoms ``rows``."""
    X = pMu.source.points[rows]
    lg_mu = (X @ pMu.target.points.T - pMu.phi[rows][:, None] - pMu.psi[None, :]) / pMu.epsilon
    with np.errstate(divide="ignore"):
        log_tau = np.log(tau.mass)
    return logsumexp(lg_mu[:, :, None] + log_tau[None, :, :], axis=1)


def q_conditional(pMu: EntropicPotentials, tau: TransportPlan, x_index: int,
                  return_residual: bool = False):
    """The measure on the atoms of ``nu`` with weights ``sum_y gamma^mu(x, y) tau(y, z_j)``."""
    _check_tau(pMu, tau)
    if not 0 <= x_index < pMu.source.size:
        raise IndexError(f"x_index {x_index} out of range")
    lq = _log_q(pMu, tau, np.array([x_index]))[0]
    q = np.exp(lq)
    resid = abs(q.sum() - 1.0)
    q = q / q.sum()
    cond = ConditionalDistribution(tau.col_measure, q, pMu.source.points[x_index].copy(), "x")
    return (cond, resid) if return_residual else cond


def _ball_cap(m: DiscreteMeasure) -> float:
    return m.radius() ** 2


def chain_diagnostics(rho: DiscreteMeasure, mu: DiscreteMeasure, nu: DiscreteMeasure, epsilon: float,
                      R: float | None = None, opts: SolverOptions = DEFAULT_OPTIONS,
                      tau: TransportPlan | None = None) -> ChainDiagnostics:
    """Evaluate ``I``, ``I_bar``, ``I_tilde`` and the related terms on a discrete triple.

    ``H_max`` caps are ``R^2`` when ``R`` is given, otherwise the squared
    support radii of ``nu`` (for phi) and ``rho`` (for psi).
    """
    if not rho.dim == mu.dim == nu.dim:
        raise ValueError("dimension mismatch")
    if rho.size * mu.size * nu.size > MAX_TRIPLE_SIZE:
        raise ValueError(f"|rho| |mu| |nu| exceeds {MAX_TRIPLE_SIZE}")
    if tau is None:
        tau = solve_discrete_w2(mu, nu)
    pMu = solve_entropic(rho, mu, epsilon, opts)
    pNu = solve_entropic(rho, nu, epsilon, opts)
    eps = float(epsilon)
    X = rho.points

    # log Q(z|x) against log pi^nu(z|x), both normalized over the nu atoms
    lq = _log_q(pMu, tau, np.arange(rho.size))
    q_resid = float(np.max(np.abs(np.exp(logsumexp(lq, axis=1)) - 1.0)))
    lq -= logsumexp(lq, axis=1)[:, None]
    lpi_nu = (X @ nu.points.T - pNu.psi[None, :]) / eps + nu.log_weights[None, :]
    lpi_nu -= logsumexp(lpi_nu, axis=1)[:, None]
    q = np.exp(lq)
    terms = np.where(q > 0, q * (lq - np.where(q > 0, lpi_nu, 0.0)), 0.0)
    I = float(rho.weights @ terms.sum(axis=1))

    # sums over the support of tau only
    yi, zj, t = tau.support()
    Y, Z = mu.points[yi], nu.points[zj]
    log_g_mu = (X @ Y.T - pMu.phi[:, None] - pMu.psi[yi][None, :]) / eps
    log_g_nu = (X @ Z.T - pNu.phi[:, None] - pNu.psi[zj][None, :]) / eps
    D = (X @ (Y - Z).T - pMu.phi[:, None] + pNu.phi[:, None] - pMu.psi[yi][None, :] + pNu.psi[zj][None, :]) / eps
    w = rho.weights[:, None] * t[None, :]
    I_bar = float(np.sum(w * np.exp(log_g_mu) * D))
    I_tilde = float(np.sum(w * np.exp(log_g_nu) * -D))

    S_mu = backward_map(pMu, Y)
    S_nu = backward_map(pNu, Z)
    dS = S_mu - S_nu
    coupling_term = float(t @ np.sum(dS * (Y - Z), axis=1))
    backward_gap = float(t @ np.sum(dS**2, axis=1))

    w2 = math.sqrt(max(tau.cost, 0.0))
    lhs = map_l2_distance(pMu, pNu)
    cap_phi = R**2 if R is not None else _ball_cap(nu)
    cap_psi = R**2 if R is not None else _ball_cap(rho)
    step1_rhs = w2 + math.sqrt(2.0 * cap_phi * max(I, 0.0))
    return ChainDiagnostics(eps, I, I_bar, I_tilde, coupling_term, backward_gap, step1_rhs, lhs, w2,
                            cap_phi, cap_psi, q_resid)


def popoviciu_cap(m: DiscreteMeasure) -> float:
    """``diam^2 / 4``: bounds the covariance norm of every law supported on ``m``."""
    return 0.25 * m.diameter() ** 2


def general_rhs(w2: float, epsilon: float, hmax_phi: float, hmax_psi: float) -> float:
    return (1.0 + 2.0 * math.sqrt(hmax_phi * hmax_psi) / epsilon) * w2


def smooth_rhs(w2: float, epsilon: float, R: float, lipschitz: float | None = None,
               inv_lipschitz: float | None = None) -> float | None:
    """Bound under a certified Lipschitz constant of the maps, or ``None``.

    ``lipschitz`` is the constant of the forward map of ``nu``; ``inv_lipschitz``
    is ``lambda`` when the backward map is ``1/lambda``-Lipschitz.
    """
    if lipschitz is None:
        return None
    best = (1.0 + 2.0 * math.sqrt(lipschitz * R**2 / epsilon)) * w2
    if inv_lipschitz is not None:
        best = min(best, (1.0 + 2.0 * math.sqrt(lipschitz / inv_lipschitz)) * w2)
    return best


def stability_report(rho: DiscreteMeasure, mu: DiscreteMeasure, nu: DiscreteMeasure, epsilon: float,
                     R: float, opts: SolverOptions = DEFAULT_OPTIONS, lipschitz: float | None = None,
                     inv_lipschitz: float | None = None, probe_hmax: bool = True) -> StabilityReport:
    """Both sides of the stability bounds on one triple.

    ``rhs_general`` is the smaller of the two orientations (``nu``-side or
    ``mu``-side potentials) of the general bound, each evaluated with the
    ``diam^2 / 4`` covariance caps.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    for name, m in (("rho", rho), ("nu", nu)):
        if m.radius() > R * (1 + 1e-12):
            raise ValueError(f"support of {name} leaves the ball B(0; {R})")
    pMu = solve_entropic(rho, mu, epsilon, opts)
    pNu = solve_entropic(rho, nu, epsilon, opts)
    lhs = map_l2_distance(pMu, pNu)
    w2 = math.sqrt(max(solve_discrete_w2(mu, nu).cost, 0.0))
    cap_src = popoviciu_cap(rho)
    rhs_nu = general_rhs(w2, epsilon, popoviciu_cap(nu), cap_src)
    rhs_mu = general_rhs(w2, epsilon, popoviciu_cap(mu), cap_src)
    orientation = "nu" if rhs_nu <= rhs_mu else "mu"
    if probe_hmax:
        probe_phi = estimate_hmax(pNu, "x").lower_bound
        probe_psi = estimate_hmax(pNu, "z").lower_bound
    else:
        probe_phi = probe_psi = float("nan")
    return StabilityReport(
        epsilon=float(epsilon), R=float(R), lhs=lhs, w2=w2,
        rhs_bounded=(1.0 + 2.0 * R**2 / epsilon) * w2,
        rhs_general=min(rhs_nu, rhs_mu), rhs_general_orientation=orientation,
        hmax_cap_phi=popoviciu_cap(nu if orientation == "nu" else mu), hmax_cap_psi=cap_src,
        hmax_probe_phi=probe_phi, hmax_probe_psi=probe_psi,
        rhs_smooth=smooth_rhs(w2, epsilon, R, lipschitz, inv_lipschitz),
    )
