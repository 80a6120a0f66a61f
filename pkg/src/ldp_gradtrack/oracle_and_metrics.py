"""Centralized baselines, error metrics, and decay-rate estimation.

The tracking metrics compare every agent against the noiseless centralized
optimum: closed-form for the quadratic model, gradient descent on the full
dataset or on a large frozen surrogate sample for logistic streams.  The
drift check verifies that the minimizer of the running empirical objective
moves at the expected O(1/t) statistical rate, and the decay-rate fit turns a
metric curve into a power-law exponent.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .online_problem import (StreamProblem, SampleBuffer, draw_surrogate_sample,
                             global_grad, global_objective)


class OracleConvergenceError(RuntimeError):
    """The centralized solver did not reach its gradient tolerance."""


@dataclass
class OracleSolution:
    """Centralized minimizer with the residual gradient norm it achieved.

    For synthetic logistic streams the optimum is computed on a frozen
    surrogate sample; surrogate_residual reports a Monte-Carlo estimate (with
    standard error) of the true population gradient norm at theta_star.
    """

    theta_star: np.ndarray
    residual: float
    surrogate_sample: tuple[np.ndarray, np.ndarray] | None = None
    surrogate_residual: float | None = None
    surrogate_residual_se: float | None = None


@dataclass(frozen=True)
class MetricRow:
    """Per-round summary: mean distance to the optimum, mean objective gap,
    and the largest pairwise parameter distance."""

    round: int
    avg_tracking_error: float
    avg_loss_gap: float
    consensus_gap: float
    eps_s_max: float = float("nan")
    eps_theta_max: float = float("nan")


def _objective_and_grad(problem: StreamProblem, theta: np.ndarray,
                        X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    losses, grads = problem.batch_loss_grad(theta, X, y)
    return float(losses.mean()), grads.mean(axis=0)


def _descend(problem: StreamProblem, X: np.ndarray, y: np.ndarray,
             tol: float, max_iter: int) -> tuple[np.ndarray, float]:
    """Backtracking gradient descent on the mean loss over (X, y).

    Armijo backtracking drives the bulk of the descent.  Once the best
    achievable decrease falls below float resolution the objective can no
    longer certify progress, so the search switches to fixed steps at 1/L
    (L computed from the rows being descended), under which the gradient norm
    keeps contracting to the requested tolerance.
    """
    if problem.loss == "quadratic":
        L_data = 1.0
    else:
        L_data = problem.reg + float((X ** 2).sum(axis=1).max()) / 4.0
    alpha_safe = 1.0 / L_data
    theta = np.zeros(problem.dim)
    f, g = _objective_and_grad(problem, theta, X, y)
    alpha = 1.0
    for _ in range(max_iter):
        gnorm2 = float(g @ g)
        if np.sqrt(gnorm2) < tol:
            return theta, float(np.sqrt(gnorm2))
        if 0.5 * alpha_safe * gnorm2 < 1e-13 * max(1.0, abs(f)):
            theta = theta - alpha_safe * g
            f, g = _objective_and_grad(problem, theta, X, y)
            continue
        alpha = min(alpha * 2.0, 1e6)
        while True:
            cand = theta - alpha * g
            f_cand, g_cand = _objective_and_grad(problem, cand, X, y)
            if f_cand <= f - 0.5 * alpha * gnorm2 or alpha <= alpha_safe:
                break
            alpha *= 0.5
        theta, f, g = cand, f_cand, g_cand
    raise OracleConvergenceError(
        f"gradient descent stalled at ||grad|| = {np.linalg.norm(g):.3e} "
        f"after {max_iter} iterations (tol {tol:.1e})")


def solve_centralized(problem: StreamProblem, buffers: SampleBuffer | None = None,
                      t: int | None = None, tol: float = 1e-10,
                      max_iter: int = 500_000,
                      surrogate_size: int = 1_000_000) -> OracleSolution:
    """Noiseless centralized optimum.

    Without buffers this minimizes the population objective: closed form for
    the quadratic model, full-data descent for dataset-backed streams, and
    descent on a frozen surrogate sample of `surrogate_size` draws for
    synthetic logistic streams (surrogate error reported).  With buffers it
    minimizes the empirical objective over every agent's points 0..t.
    """
    if buffers is not None:
        if t is None:
            raise ValueError("empirical mode needs the round index t")
        if problem.loss == "quadratic":
            stacked = [np.hstack([buffers.points(i)[0][:t + 1],
                                  buffers.points(i)[1][:t + 1, None]])
                       for i in range(problem.m)]
            theta = np.vstack(stacked).mean(axis=0)
            return OracleSolution(theta_star=theta, residual=0.0)
        X = np.vstack([buffers.points(i)[0][:t + 1] for i in range(problem.m)])
        y = np.concatenate([buffers.points(i)[1][:t + 1] for i in range(problem.m)])
        theta, res = _descend(problem, X, y, tol, max_iter)
        return OracleSolution(theta_star=theta, residual=res)

    if problem.loss == "quadratic":
        theta = problem._means.mean(axis=0)
        return OracleSolution(theta_star=theta, residual=0.0)
    if problem._data_X is not None:
        theta, res = _descend(problem, problem._data_X, problem._data_y, tol, max_iter)
        return OracleSolution(theta_star=theta, residual=res)
    sample = draw_surrogate_sample(problem, surrogate_size)
    theta, res = _descend(problem, sample[0], sample[1], tol, max_iter)
    # Estimate how far the surrogate optimum sits from the true one.
    check = global_grad(problem, theta, mc_samples=max(10_000, surrogate_size // 100),
                        seed=2)
    se = problem.meta().L / np.sqrt(surrogate_size)
    return OracleSolution(theta_star=theta, residual=res, surrogate_sample=sample,
                          surrogate_residual=float(np.linalg.norm(check)),
                          surrogate_residual_se=float(se))


@dataclass(frozen=True)
class DriftRow:
    """Monte-Carlo check of the empirical-minimizer drift at one round."""

    t: int
    step_lhs: float          # mean ||theta*_{t+1} - theta*_t||^2
    step_se: float
    step_bound: float
    step_holds: bool
    dist_lhs: float          # mean ||theta*_t - theta*||^2
    dist_se: float
    dist_bound: float
    dist_holds: bool


def drift_check(problem: StreamProblem, t_values: list[int], repetitions: int,
                seed: int = 0) -> list[DriftRow]:
    """Check the statistical drift of the running empirical minimizer.

    For the quadratic model the minimizer of the round-t empirical objective
    is the grand mean of all samples received through t, so both drift
    quantities are simulated exactly.  The expected-squared bounds are

        E||theta*_{t+1} - theta*_t||^2 <= 16 (kappa^2 + D^2)(2/mu^2 + 1/L^2) (t+1)^-2
        E||theta*_t  - theta*||^2      <= 4 kappa^2 / mu^2 (t+1)^-1

    and "holds" means the MC mean is below the bound within two standard
    errors.
    """
    meta = problem.meta()
    if problem.loss != "quadratic" or meta.kappa is None or meta.D is None:
        raise ValueError("drift check needs the quadratic model's exact constants")
    if meta.mu <= 0:
        raise ValueError("drift check needs a strongly convex problem (mu > 0)")
    t_values = sorted(t_values)
    t_max = t_values[-1]
    theta_star = problem._means.mean(axis=0)
    step_sq = {t: [] for t in t_values}
    dist_sq = {t: [] for t in t_values}
    for r in range(repetitions):
        rep = problem.replica((seed, r))
        sums = np.zeros(problem.dim)
        minimizers = {}
        for k in range(t_max + 2):
            for i in range(problem.m):
                p = rep.sample_point(i, k)
                sums += np.concatenate([p.x, [p.y]])
            minimizers[k] = sums / ((k + 1) * problem.m)
        for t in t_values:
            step_sq[t].append(float(((minimizers[t + 1] - minimizers[t]) ** 2).sum()))
            dist_sq[t].append(float(((minimizers[t] - theta_star) ** 2).sum()))
    rows = []
    kap2, D2 = meta.kappa ** 2, meta.D ** 2
    for t in t_values:
        s_mean = float(np.mean(step_sq[t]))
        s_se = float(np.std(step_sq[t], ddof=1) / np.sqrt(repetitions))
        d_mean = float(np.mean(dist_sq[t]))
        d_se = float(np.std(dist_sq[t], ddof=1) / np.sqrt(repetitions))
        s_bound = 16.0 * (kap2 + D2) * (2.0 / meta.mu ** 2 + 1.0 / meta.L ** 2) / (t + 1) ** 2
        d_bound = 4.0 * kap2 / meta.mu ** 2 / (t + 1)
        rows.append(DriftRow(
            t=t,
            step_lhs=s_mean, step_se=s_se, step_bound=s_bound,
            step_holds=s_mean <= s_bound + 2 * s_se,
            dist_lhs=d_mean, dist_se=d_se, dist_bound=d_bound,
            dist_holds=d_mean <= d_bound + 2 * d_se,
        ))
    return rows


def fit_decay_rate(metric: np.ndarray, window: float = 0.5) -> float:
    """Power-law exponent of a decaying metric curve.

    Fits a least-squares line to (ln t, ln metric_t) over the last `window`
    fraction of log-spaced sample rounds in [1, T] and returns the negated
    slope, so an exact t^-beta input recovers beta.
    """
    metric = np.asarray(metric, dtype=float)
    if not 0.0 < window <= 1.0:
        raise ValueError(f"window must lie in (0, 1], got {window}")
    T = metric.shape[0] - 1
    if T < 2:
        raise ValueError("need at least rounds 0..2 to fit a decay rate")
    ts = np.unique(np.round(np.geomspace(1, T, 200)).astype(int))
    ts = ts[int(np.ceil((1.0 - window) * len(ts))):]
    vals = metric[ts]
    if np.any(vals <= 0) or not np.all(np.isfinite(vals)):
        raise ValueError("metric has nonpositive or non-finite entries in the fit window")
    slope, _ = np.polyfit(np.log(ts), np.log(vals), 1)
    return float(-slope)


def metric_rows(trace, oracle: OracleSolution, problem: StreamProblem,
                budget_curve: dict[int, tuple[float, float]] | None = None) -> list[MetricRow]:
    """Per-recorded-round metrics of a trace against the centralized optimum."""
    theta_star = oracle.theta_star
    if problem.loss != "quadratic":
        f_star = global_objective(problem, theta_star, sample=oracle.surrogate_sample)
    rows = []
    for k, t in enumerate(trace.rounds):
        th = trace.theta[k]
        errs = np.linalg.norm(th - theta_star, axis=1)
        if problem.loss == "quadratic":
            # theta_star is the distribution center, so the objective gap is
            # exactly half the squared distance to it.
            loss_gap = float((0.5 * ((th - theta_star) ** 2).sum(axis=1)).mean())
        else:
            vals = [global_objective(problem, th[i], sample=oracle.surrogate_sample)
                    for i in range(th.shape[0])]
            loss_gap = float(np.mean(vals) - f_star)
        diffs = th[:, None, :] - th[None, :, :]
        gap = float(np.sqrt((diffs ** 2).sum(axis=2)).max())
        eps_s, eps_th = (budget_curve.get(int(t), (float("nan"), float("nan")))
                         if budget_curve else (float("nan"), float("nan")))
        rows.append(MetricRow(round=int(t),
                              avg_tracking_error=float(errs.mean()),
                              avg_loss_gap=loss_gap,
                              consensus_gap=gap,
                              eps_s_max=eps_s, eps_theta_max=eps_th))
    return rows


METRIC_COLUMNS = ("round", "avg_tracking_error", "avg_loss_gap", "consensus_gap",
                  "eps_s_max", "eps_theta_max")


def emit_metrics(rows: list[MetricRow], out_path) -> None:
    """Write metric rows as CSV with a stable column order and stable bytes."""
    try:
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(METRIC_COLUMNS)
            for r in rows:
                writer.writerow([r.round] + [f"{v:.17g}" for v in
                                             (r.avg_tracking_error, r.avg_loss_gap,
                                              r.consensus_gap, r.eps_s_max, r.eps_theta_max)])
    except OSError as exc:
        raise OSError(f"cannot write metrics to {out_path}: {exc}") from exc


def average_rows(per_rep: list[list[MetricRow]]) -> list[MetricRow]:
    """Deterministic fold averaging metric rows across repetitions."""
    if not per_rep:
        raise ValueError("no repetitions to average")
    base = per_rep[0]
    out = []
    for k, row in enumerate(base):
        te = np.mean([rep[k].avg_tracking_error for rep in per_rep])
        lg = np.mean([rep[k].avg_loss_gap for rep in per_rep])
        cg = np.mean([rep[k].consensus_gap for rep in per_rep])
        out.append(MetricRow(round=row.round, avg_tracking_error=float(te),
                             avg_loss_gap=float(lg), consensus_gap=float(cg),
                             eps_s_max=row.eps_s_max, eps_theta_max=row.eps_theta_max))
    return out
