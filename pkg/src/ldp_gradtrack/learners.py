"""Round-synchronous multi-agent engine.

Two algorithms share the same message pattern (push the perturbed tracking
variable along C, push the perturbed parameter along R):

* ``ldp_gradtrack`` feeds the *increment* of the tracking variable into the
  parameter update, scaled by the local eigenvector estimate.  Because the
  column sums of C vanish, the column sum of the tracker increment equals the
  injected noise plus the stepped gradient sum, round by round, so noise never
  accumulates in the gradient estimate.
* ``pushpull_noisy`` is the conventional push-pull update, whose tracker
  column sum provably accumulates every past noise injection.

Rounds are barrier-synchronous: every update reads only the previous
snapshot, and each agent draws one noise vector per shared variable per round
which all of its out-neighbors receive.  With the counter-keyed noise streams
the whole simulation is a pure function of (config, seed) under any
evaluation order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dp_noise import NoiseSource, StepsizeSchedule
from .graph_topology import DirectedWeights
from .online_problem import SampleBuffer, StreamProblem, all_grads_empirical

_TAG_INIT = 104

ALGORITHMS = ("ldp_gradtrack", "pushpull_noisy")


class DivergenceError(RuntimeError):
    """A state entry became non-finite."""

    def __init__(self, message: str, round_index: int):
        super().__init__(message)
        self.round_index = round_index


class CorruptedStateError(RuntimeError):
    """An eigenvector estimate lost positivity on its own coordinate."""


@dataclass(frozen=True)
class AgentState:
    """One agent's view: parameter theta, tracker s, eigenvector estimate z."""

    theta: np.ndarray
    s: np.ndarray
    z: np.ndarray


@dataclass
class AgentStates:
    """Stacked gradient-tracking state: rows index agents."""

    theta: np.ndarray   # (m, n)
    s: np.ndarray       # (m, n)
    z: np.ndarray       # (m, m)

    @property
    def m(self) -> int:
        return self.theta.shape[0]

    def agent(self, i: int) -> AgentState:
        return AgentState(theta=self.theta[i], s=self.s[i], z=self.z[i])


@dataclass
class PushPullStates:
    """Stacked conventional push-pull state; grad_prev caches the gradients
    already evaluated at (theta, current buffers)."""

    theta: np.ndarray       # (m, n)
    y: np.ndarray           # (m, n)
    grad_prev: np.ndarray   # (m, n)


@dataclass
class RoundEvents:
    """What one round injected and computed, for tracing and audits."""

    zeta: np.ndarray
    vartheta: np.ndarray
    grads: np.ndarray
    telescope_dev: float | None = None


@dataclass
class RoundTrace:
    """Recorded snapshots plus per-round identity audits.

    States are recorded at rounds 0, k, 2k, ... (and always at the final
    round); noise rows cover the recorded rounds below T.  telescope_dev and
    accum_dev hold per-round maximum deviations of the column-sum identities,
    evaluated every round regardless of thinning.
    """

    algorithm: str
    seed: int
    T: int
    record_every: int
    rounds: np.ndarray
    theta: np.ndarray                 # (K, m, n)
    s: np.ndarray | None = None       # (K, m, n), ldp_gradtrack only
    y: np.ndarray | None = None       # (K, m, n), pushpull_noisy only
    zeta: np.ndarray | None = None    # (K', m, n)
    vartheta: np.ndarray | None = None
    noise_rounds: np.ndarray | None = None
    telescope_dev: np.ndarray | None = None   # (T,)
    accum_dev: np.ndarray | None = None       # (T+1,)
    clip_events: int = 0


def _check_finite(arrays: dict[str, np.ndarray], t: int) -> None:
    for name, arr in arrays.items():
        if not np.all(np.isfinite(arr)):
            bad = int((~np.isfinite(arr)).sum())
            raise DivergenceError(
                f"non-finite entries in {name} after round {t} ({bad} entries); "
                "the run diverged", round_index=t)


def init_states(w: DirectedWeights, n: int, theta0: str = "zeros",
                seed: int = 0) -> AgentStates:
    """Fresh gradient-tracking state: z_i starts at the i-th unit vector,
    the tracker at zero, and theta at zero or a seeded unit Gaussian."""
    if theta0 == "zeros":
        theta = np.zeros((w.m, n))
    elif theta0 == "gaussian":
        rng = np.random.Generator(np.random.Philox(
            key=np.random.SeedSequence((seed, 0, _TAG_INIT)).generate_state(2, np.uint64)))
        theta = rng.standard_normal((w.m, n))
    else:
        raise ValueError(f"unknown init mode {theta0!r}; expected 'zeros' or 'gaussian'")
    return AgentStates(theta=theta, s=np.zeros((w.m, n)), z=np.eye(w.m))


def init_pushpull_states(w: DirectedWeights, problem: StreamProblem,
                         buffers: SampleBuffer, theta0: str = "zeros",
                         seed: int = 0) -> PushPullStates:
    """Conventional push-pull start: the tracker is the round-0 gradient."""
    base = init_states(w, problem.dim, theta0=theta0, seed=seed)
    g0 = all_grads_empirical(problem, buffers, base.theta, 0)
    return PushPullStates(theta=base.theta, y=g0.copy(), grad_prev=g0)


def gradtrack_round(states: AgentStates, w: DirectedWeights, problem: StreamProblem,
                    buffers: SampleBuffer, step: StepsizeSchedule, noise: NoiseSource,
                    t: int) -> tuple[AgentStates, RoundEvents]:
    """One synchronous round of the noise-cancelling gradient tracker.

    Reads only round-t values.  Agent i's updates:

        s_i   <- (1+C_ii) s_i + sum_j C_ij (s_j + zeta_j) + lambda_t grad_i
        theta_i <- (1+R_ii) theta_i + sum_j R_ij (theta_j + vartheta_j)
                   - (s_i' - s_i) / (m [z_i]_i)
        z_i   <- z_i + sum_j R_ij (z_j - z_i)

    where grad_i is the running-average gradient over samples 0..t and each
    neighbor contribution reuses that neighbor's single broadcast noise draw.
    """
    n = states.theta.shape[1]
    zdiag = w.m * np.diag(states.z)
    if np.any(zdiag <= 0):
        raise CorruptedStateError(
            f"[z_i]_i <= 0 at round {t}; the parameter update would be invalid")
    grads = all_grads_empirical(problem, buffers, states.theta, t)
    lam = step.at(t)
    zeta = noise.zeta(t, n)
    vartheta = noise.vartheta(t, n)
    # Overflow is handled by the explicit divergence guard below.
    with np.errstate(over="ignore", invalid="ignore"):
        mixed_zeta = w.offdiag_C @ zeta
        s_new = w.mixing_C @ states.s + mixed_zeta + lam * grads
        theta_new = (w.mixing_R @ states.theta + w.offdiag_R @ vartheta
                     - (s_new - states.s) / zdiag[:, None])
        z_new = w.mixing_R @ states.z
    _check_finite({"theta": theta_new, "s": s_new}, t)
    dev = float(np.abs((s_new - states.s).sum(axis=0)
                       - mixed_zeta.sum(axis=0) - lam * grads.sum(axis=0)).max())
    events = RoundEvents(zeta=zeta, vartheta=vartheta, grads=grads, telescope_dev=dev)
    return AgentStates(theta=theta_new, s=s_new, z=z_new), events


def pushpull_noisy_round(states: PushPullStates, w: DirectedWeights,
                         problem: StreamProblem, buffers: SampleBuffer,
                         step: StepsizeSchedule, noise: NoiseSource,
                         t: int) -> tuple[PushPullStates, RoundEvents]:
    """One synchronous round of the conventional noisy push-pull baseline.

        theta <- (I+R) theta + mixed parameter noise - lambda_t y
        y     <- (I+C) y + mixed tracker noise + grad(theta', t+1) - grad(theta, t)

    Requires buffers already holding samples 0..t+1 (the new gradient is
    evaluated on next round's data, matching the online tracker recursion);
    states.grad_prev must hold the gradients at (theta, t).
    """
    n = states.theta.shape[1]
    lam = step.at(t)
    zeta = noise.zeta(t, n)
    vartheta = noise.vartheta(t, n)
    with np.errstate(over="ignore", invalid="ignore"):
        theta_new = w.mixing_R @ states.theta + w.offdiag_R @ vartheta - lam * states.y
    _check_finite({"theta": theta_new}, t)
    with np.errstate(over="ignore", invalid="ignore"):
        grads_new = all_grads_empirical(problem, buffers, theta_new, t + 1)
        y_new = w.mixing_C @ states.y + w.offdiag_C @ zeta + grads_new - states.grad_prev
    _check_finite({"y": y_new}, t)
    events = RoundEvents(zeta=zeta, vartheta=vartheta, grads=grads_new)
    return PushPullStates(theta=theta_new, y=y_new, grad_prev=grads_new), events


def run(w: DirectedWeights, problem: StreamProblem, step: StepsizeSchedule,
        noise: NoiseSource, rounds: int, algorithm: str = "ldp_gradtrack",
        record_every: int = 1, theta0: str = "zeros", seed: int = 0) -> RoundTrace:
    """Execute `rounds` synchronous rounds and return the recorded trace.

    One fresh data point per agent is appended before each round's gradient
    step.  The per-round column-sum audits (telescoping identity for the
    gradient tracker, accumulation law for the baseline) are evaluated every
    round even when snapshots are thinned.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    if rounds < 0:
        raise ValueError(f"rounds must be >= 0, got {rounds}")
    if record_every < 1:
        raise ValueError(f"record_every must be >= 1, got {record_every}")
    m, n = w.m, problem.dim
    buffers = SampleBuffer(m, problem.feature_dim)

    rec_rounds: list[int] = []
    rec_theta: list[np.ndarray] = []
    rec_aux: list[np.ndarray] = []
    rec_zeta: list[np.ndarray] = []
    rec_vartheta: list[np.ndarray] = []
    rec_noise_rounds: list[int] = []

    def record_state(t, theta, aux):
        rec_rounds.append(t)
        rec_theta.append(theta.copy())
        rec_aux.append(aux.copy())

    if algorithm == "ldp_gradtrack":
        for i in range(m):
            buffers.append(i, problem.sample_point(i, 0))
        states = init_states(w, n, theta0=theta0, seed=seed)
        record_state(0, states.theta, states.s)
        telescope = np.empty(rounds)
        accum = None
        for t in range(rounds):
            if t > 0:
                for i in range(m):
                    buffers.append(i, problem.sample_point(i, t))
            states, ev = gradtrack_round(states, w, problem, buffers, step, noise, t)
            telescope[t] = ev.telescope_dev
            if t % record_every == 0:
                rec_noise_rounds.append(t)
                rec_zeta.append(ev.zeta)
                rec_vartheta.append(ev.vartheta)
            t_next = t + 1
            if t_next % record_every == 0 or t_next == rounds:
                record_state(t_next, states.theta, states.s)
        final_aux_name = "s"
    else:
        for i in range(m):
            buffers.append(i, problem.sample_point(i, 0))
        states = init_pushpull_states(w, problem, buffers, theta0=theta0, seed=seed)
        record_state(0, states.theta, states.y)
        telescope = None
        accum = np.empty(rounds + 1)
        noise_colsum = np.zeros(n)
        for t in range(rounds):
            accum[t] = float(np.abs(states.y.sum(axis=0) - states.grad_prev.sum(axis=0)
                                    - noise_colsum).max())
            for i in range(m):
                buffers.append(i, problem.sample_point(i, t + 1))
            states, ev = pushpull_noisy_round(states, w, problem, buffers, step, noise, t)
            noise_colsum = noise_colsum + (w.offdiag_C @ ev.zeta).sum(axis=0)
            if t % record_every == 0:
                rec_noise_rounds.append(t)
                rec_zeta.append(ev.zeta)
                rec_vartheta.append(ev.vartheta)
            t_next = t + 1
            if t_next % record_every == 0 or t_next == rounds:
                record_state(t_next, states.theta, states.y)
        accum[rounds] = float(np.abs(states.y.sum(axis=0) - states.grad_prev.sum(axis=0)
                                     - noise_colsum).max())
        final_aux_name = "y"

    trace = RoundTrace(
        algorithm=algorithm,
        seed=seed,
        T=rounds,
        record_every=record_every,
        rounds=np.array(rec_rounds, dtype=int),
        theta=np.stack(rec_theta),
        zeta=np.stack(rec_zeta) if rec_zeta else None,
        vartheta=np.stack(rec_vartheta) if rec_vartheta else None,
        noise_rounds=np.array(rec_noise_rounds, dtype=int) if rec_noise_rounds else None,
        telescope_dev=telescope,
        accum_dev=accum,
        clip_events=buffers.clip_events,
    )
    if final_aux_name == "s":
        trace.s = np.stack(rec_aux)
    else:
        trace.y = np.stack(rec_aux)
    return trace


def export_trace_csv(trace: RoundTrace, path, theta_star: np.ndarray | None = None,
                     include_theta: bool = False) -> None:
    """Write the per-(round, agent) trace table.

    Columns: round, agent, optional theta components, tracking_error (needs
    theta_star), consensus_gap.  Deterministic bytes for identical inputs.
    """
    import csv as _csv

    K, m, n = trace.theta.shape
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        header = ["round", "agent"]
        if include_theta:
            header += [f"theta_{j}" for j in range(n)]
        header += ["tracking_error", "consensus_gap"]
        writer.writerow(header)
        for k in range(K):
            th = trace.theta[k]
            gap = consensus_gap(th)
            errs = (np.linalg.norm(th - theta_star, axis=1)
                    if theta_star is not None else np.full(m, np.nan))
            for i in range(m):
                row = [int(trace.rounds[k]), i]
                if include_theta:
                    row += [f"{v:.17g}" for v in th[i]]
                row += [f"{errs[i]:.17g}", f"{gap:.17g}"]
                writer.writerow(row)


def consensus_gap(theta: np.ndarray) -> float:
    """Largest pairwise parameter distance max_{i,j} ||theta_i - theta_j||_2."""
    diffs = theta[:, None, :] - theta[None, :, :]
    return float(np.sqrt((diffs ** 2).sum(axis=2)).max())
