"""Per-agent sensitivity series and cumulative privacy budgets.

The accountant bounds how far one substituted data point can move an agent's
shared variables (L1 sensitivity), then composes Laplace mechanisms across
rounds.  The tracker sensitivity obeys the damped recursion

    rho_s[t+1] = (1 - c_C) rho_s[t] + 2 c_l lambda_t,        rho_s[0] = 0,

with c_C the smallest |C_ii| and c_l the per-sample gradient L1 bound; the
parameter sensitivity couples to it through the eigenvector-estimate envelope
(c_z, gamma_z) and the agent's Perron weight:

    rho_th[t+1] = (1 - c_R) rho_th[t]
                  + (c_z gamma_z^t + 1/|u_i|)(rho_s[t+1] + rho_s[t]).

With per-round Laplace scales sigma_0 / (sqrt(2) (t+1)^varsigma), agent i's
cumulative budget through round T is bounded by

    eps_i <= sum_{t=1..T} sqrt(2) (t+1)^varsigma (rho_s[t]/sigma0_zeta
             + rho_th[i, t]/sigma0_theta-wise terms).

All reported budgets are upper bounds, never exact epsilon values.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dp_noise import NoiseSchedule, StepsizeSchedule
from .graph_topology import DirectedWeights, PerronVectors
from .learners import RoundTrace


@dataclass(frozen=True)
class SensitivityParams:
    """Constants the sensitivity recursions were evaluated with."""

    c_l: float
    c_C: float
    c_R: float
    c_z: float
    gamma_z: float
    u: np.ndarray
    step: StepsizeSchedule


@dataclass(frozen=True)
class SensitivitySeries:
    """Per-round L1 sensitivity bounds over a horizon T.

    rho_s[t] bounds the tracker divergence at round t (shared by all agents);
    rho_theta[i, t] bounds agent i's parameter divergence using that agent's
    Perron weight, and rho_theta_worst uses the smallest weight for a uniform
    bound.
    """

    rho_s: np.ndarray            # (T+1,)
    rho_theta: np.ndarray        # (m, T+1)
    rho_theta_worst: np.ndarray  # (T+1,)
    params: SensitivityParams


@dataclass(frozen=True)
class BudgetReport:
    """Per-agent cumulative budget bounds at horizon T.

    tail_estimate extrapolates the post-T contribution from the summable
    envelope shape (t+1)^-(1+v-varsigma); it is an estimate for reporting,
    not a proved bound, because the true post-transient constants are not
    computable from the run.
    """

    T: int
    eps_s: np.ndarray
    eps_theta: np.ndarray
    eps_total: np.ndarray
    tail_estimate: np.ndarray


def sensitivity_series(w: DirectedWeights, perron: PerronVectors, c_l: float,
                       c_z: float, gamma_z: float, step: StepsizeSchedule,
                       T: int) -> SensitivitySeries:
    """Evaluate both sensitivity recursions incrementally in O(T).

    Requires every diagonal of R and C to be nonzero: a zero diagonal removes
    the damping and the bounds become vacuous.
    """
    c_C = float(np.abs(np.diag(w.C)).min())
    c_R = float(np.abs(np.diag(w.R)).min())
    if c_C == 0.0 or c_R == 0.0:
        raise ValueError("diagonal-free weight matrix: sensitivity bound vacuous")
    if not (0.0 < c_C < 1.0 and 0.0 < c_R < 1.0):
        raise ValueError(f"diagonal magnitudes must lie in (0, 1); got c_C={c_C}, c_R={c_R}")
    if not 0.0 < gamma_z < 1.0:
        raise ValueError(f"gamma_z must lie in (0, 1), got {gamma_z}")
    if c_z < 0.0:
        raise ValueError(f"c_z must be >= 0, got {c_z}")
    if c_l <= 0.0:
        raise ValueError(f"c_l must be positive, got {c_l}")
    if T < 0:
        raise ValueError(f"horizon must be >= 0, got {T}")
    u_abs = np.abs(perron.u)
    m = w.m
    rho_s = np.zeros(T + 1)
    rho_th = np.zeros((m, T + 1))
    rho_worst = np.zeros(T + 1)
    inv_u = 1.0 / u_abs
    inv_umin = 1.0 / u_abs.min()
    gpow = 1.0
    for t in range(T):
        rho_s[t + 1] = (1.0 - c_C) * rho_s[t] + 2.0 * c_l * step.at(t)
        pair = rho_s[t + 1] + rho_s[t]
        coef = c_z * gpow
        rho_th[:, t + 1] = (1.0 - c_R) * rho_th[:, t] + (coef + inv_u) * pair
        rho_worst[t + 1] = (1.0 - c_R) * rho_worst[t] + (coef + inv_umin) * pair
        gpow *= gamma_z
    params = SensitivityParams(c_l=c_l, c_C=c_C, c_R=c_R, c_z=c_z, gamma_z=gamma_z,
                               u=u_abs, step=step)
    return SensitivitySeries(rho_s=rho_s, rho_theta=rho_th,
                             rho_theta_worst=rho_worst, params=params)


def budget_terms(series: SensitivitySeries,
                 schedules: list[tuple[NoiseSchedule, NoiseSchedule]]
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Per-round budget contributions for each agent (index 0 is zero).

    terms_s[i, t] = sqrt(2) rho_s[t] (t+1)^varsigma_zeta,i / sigma0_zeta,i and
    the analogous parameter terms; disabled schedules (sigma0 = 0) contribute
    +inf, since an unperturbed release has no finite budget.
    """
    T = series.rho_s.shape[0] - 1
    m = len(schedules)
    ts = np.arange(T + 1, dtype=float)
    terms_s = np.zeros((m, T + 1))
    terms_th = np.zeros((m, T + 1))
    for i, (zeta_sched, theta_sched) in enumerate(schedules):
        if zeta_sched.enabled:
            terms_s[i, 1:] = (np.sqrt(2.0) * series.rho_s[1:]
                              * (ts[1:] + 1.0) ** zeta_sched.varsigma / zeta_sched.sigma0)
        else:
            terms_s[i, 1:] = np.inf
        if theta_sched.enabled:
            terms_th[i, 1:] = (np.sqrt(2.0) * series.rho_theta[i, 1:]
                               * (ts[1:] + 1.0) ** theta_sched.varsigma / theta_sched.sigma0)
        else:
            terms_th[i, 1:] = np.inf
    return terms_s, terms_th


def cumulative_budget(series: SensitivitySeries,
                      schedules: list[tuple[NoiseSchedule, NoiseSchedule]],
                      T: int) -> BudgetReport:
    """Per-agent cumulative budget bounds through round T."""
    if T > series.rho_s.shape[0] - 1:
        raise ValueError(f"series covers T={series.rho_s.shape[0] - 1}, asked for {T}")
    terms_s, terms_th = budget_terms(series, schedules)
    eps_s = terms_s[:, 1:T + 1].sum(axis=1) if T > 0 else np.zeros(len(schedules))
    eps_th = terms_th[:, 1:T + 1].sum(axis=1) if T > 0 else np.zeros(len(schedules))
    v = series.params.step.v
    tail = np.zeros(len(schedules))
    for i, (zeta_sched, theta_sched) in enumerate(schedules):
        if T == 0 or not (zeta_sched.enabled and theta_sched.enabled):
            tail[i] = 0.0 if T == 0 else np.inf
            continue
        t_axis = np.arange(1, T + 1, dtype=float)
        for terms, sched in ((terms_s, zeta_sched), (terms_th, theta_sched)):
            decay = 1.0 + v - sched.varsigma
            prefactor = float((terms[i, 1:T + 1] * (t_axis + 1.0) ** decay).max())
            tail[i] += prefactor * (T + 1.0) ** (-(v - sched.varsigma)) / (v - sched.varsigma)
    return BudgetReport(T=T, eps_s=eps_s, eps_theta=eps_th,
                        eps_total=eps_s + eps_th, tail_estimate=tail)


def budget_curve(series: SensitivitySeries,
                 schedules: list[tuple[NoiseSchedule, NoiseSchedule]],
                 horizons: list[int]) -> np.ndarray:
    """Worst-agent budget growth: rows of (T, max_i eps_s, max_i eps_theta)."""
    terms_s, terms_th = budget_terms(series, schedules)
    cum_s = np.cumsum(terms_s, axis=1)
    cum_th = np.cumsum(terms_th, axis=1)
    out = np.empty((len(horizons), 3))
    for k, T in enumerate(horizons):
        if T > series.rho_s.shape[0] - 1:
            raise ValueError(f"series covers T={series.rho_s.shape[0] - 1}, asked for {T}")
        out[k] = (T, cum_s[:, T].max(), cum_th[:, T].max())
    return out


@dataclass(frozen=True)
class EmpiricalDivergence:
    """Realized per-round L1 divergences between two adjacent-dataset runs."""

    rounds: np.ndarray
    s_l1: np.ndarray
    theta_l1: np.ndarray
    agent: int | None


def empirical_sensitivity(run_a: RoundTrace, run_b: RoundTrace) -> EmpiricalDivergence:
    """Realized divergence of the agent whose dataset differs between two runs.

    Both runs must come from the gradient-tracking algorithm with identical
    shapes, seeds, and noise; the divergence of the differing agent is then
    driven purely by the substituted data point, and should stay below the
    analytic sensitivity series when clipping is active.
    """
    for name in ("theta", "s"):
        a, b = getattr(run_a, name), getattr(run_b, name)
        if a is None or b is None:
            raise ValueError("empirical sensitivity needs gradient-tracking traces "
                             "(tracker snapshots missing)")
        if a.shape != b.shape:
            raise ValueError(f"trace shapes differ for {name}: {a.shape} vs {b.shape}")
    if not np.array_equal(run_a.rounds, run_b.rounds):
        raise ValueError("traces record different rounds")
    diff_s = np.abs(run_a.s - run_b.s).sum(axis=2)          # (K, m)
    diff_th = np.abs(run_a.theta - run_b.theta).sum(axis=2)
    totals = diff_s.sum(axis=0) + diff_th.sum(axis=0)
    if totals.max() == 0.0:
        return EmpiricalDivergence(rounds=run_a.rounds.copy(),
                                   s_l1=np.zeros(len(run_a.rounds)),
                                   theta_l1=np.zeros(len(run_a.rounds)), agent=None)
    agent = int(np.argmax(totals))
    return EmpiricalDivergence(rounds=run_a.rounds.copy(), s_l1=diff_s[:, agent],
                               theta_l1=diff_th[:, agent], agent=agent)


@dataclass(frozen=True)
class EnvelopeReport:
    """Numeric scan results for the two decay-envelope inequalities."""

    geometric_ok: bool
    geometric_violations: int
    geometric_amplitude: float      # a = (ln(gamma) e)^2 / 4
    recursion_ok: bool
    recursion_violations: int
    recursion_constant: float       # C2 of the damped-recursion envelope

    @property
    def ok(self) -> bool:
        return self.geometric_ok and self.recursion_ok


def envelope_checks(gamma: float, c: float, q: float, T: int,
                    beta0: float = 1.0, v0: float = 1.0) -> EnvelopeReport:
    """Scan two envelope inequalities used by the budget analysis over t <= T.

    (1) With a = (ln(gamma) e)^2 / 4, check a gamma^t <= t^-2 for t = 1..T.
    (2) Drive v_{t+1} = (1-c) v_t + beta0/(t+1)^q at equality from v_0 and
        check v_t <= C2 beta_t with
        C2 = (4q / (e ln(2/(2-c))))^q (v_0 (1-c)/beta0 + 2/c).
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if not 0.0 < c < 1.0:
        raise ValueError(f"c must lie in (0, 1), got {c}")
    if q <= 0.0:
        raise ValueError(f"q must be positive, got {q}")
    if beta0 <= 0.0 or v0 < 0.0:
        raise ValueError("beta0 must be positive and v0 nonnegative")
    if T < 1:
        raise ValueError(f"need T >= 1, got {T}")

    ts = np.arange(1, T + 1, dtype=float)
    a = (np.log(gamma) * np.e) ** 2 / 4.0
    with np.errstate(under="ignore"):
        lhs = a * gamma ** ts
    geo_viol = int((lhs > ts ** -2.0).sum())

    C2 = (4.0 * q / (np.e * np.log(2.0 / (2.0 - c)))) ** q * (v0 * (1.0 - c) / beta0 + 2.0 / c)
    beta = beta0 / (np.arange(T + 1, dtype=float) + 1.0) ** q
    v = np.empty(T + 1)
    v[0] = v0
    for t in range(T):
        v[t + 1] = (1.0 - c) * v[t] + beta[t]
    rec_viol = int((v > C2 * beta).sum())

    return EnvelopeReport(geometric_ok=geo_viol == 0, geometric_violations=geo_viol,
                          geometric_amplitude=float(a),
                          recursion_ok=rec_viol == 0, recursion_violations=rec_viol,
                          recursion_constant=float(C2))
