"""Directed interaction matrices, their Perron eigenvectors, and the
distributed eigenvector estimator.

The simulator works with a pair (R, C) of m-by-m weight matrices: R has zero
row sums and mixes pulled model parameters, C has zero column sums and mixes
pushed tracking variables.  The induced mixing matrices I+R (row-stochastic)
and I+C (column-stochastic) must be nonnegative, the graph induced by R must
be strongly connected, and the graph induced by C^T must contain a directed
spanning tree.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

ROWSUM_TOL = 1e-12
PERRON_TOL = 1e-10


class ConvergenceError(RuntimeError):
    """Power iteration failed to reach its tolerance."""


@dataclass(frozen=True)
class DirectedWeights:
    """Interaction matrices for an m-agent directed network.

    R has nonnegative off-diagonal entries with R_ii = -sum_j R_ij (zero row
    sums); C has nonnegative off-diagonal entries with zero column sums.
    """

    m: int
    R: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        R = np.ascontiguousarray(np.asarray(self.R, dtype=float))
        C = np.ascontiguousarray(np.asarray(self.C, dtype=float))
        if R.shape != (self.m, self.m) or C.shape != (self.m, self.m):
            raise ValueError(f"weight matrices must be {self.m}x{self.m}")
        R.flags.writeable = False
        C.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "C", C)

    @property
    def mixing_R(self) -> np.ndarray:
        """Row-stochastic mixing matrix I + R."""
        return np.eye(self.m) + self.R

    @property
    def mixing_C(self) -> np.ndarray:
        """Column-stochastic mixing matrix I + C."""
        return np.eye(self.m) + self.C

    @property
    def offdiag_R(self) -> np.ndarray:
        """R with its diagonal zeroed (the pull weights applied to neighbor noise)."""
        out = self.R.copy()
        np.fill_diagonal(out, 0.0)
        return out

    @property
    def offdiag_C(self) -> np.ndarray:
        """C with its diagonal zeroed (the push weights applied to neighbor noise)."""
        out = self.C.copy()
        np.fill_diagonal(out, 0.0)
        return out


@dataclass(frozen=True)
class PerronVectors:
    """Positive eigenvectors of the mixing matrices at eigenvalue 1.

    u is the left eigenvector of I+R scaled so sum(u) = m; omega is the right
    eigenvector of I+C scaled so sum(omega) = m.
    """

    u: np.ndarray
    omega: np.ndarray


@dataclass(frozen=True)
class EigEstimate:
    """Per-agent eigenvector estimates; row i of z is agent i's estimate."""

    z: np.ndarray
    t: int


def build_ring(m: int, a: float) -> DirectedWeights:
    """Directed cycle where agent i pulls from agent i-1 with weight a.

    For m = 1 the neighbor set is empty and R is the 1x1 zero matrix.
    C is set to R^T, which makes both mixing matrices doubly stochastic.
    """
    if m < 1:
        raise ValueError(f"agent count must be >= 1, got {m}")
    if not 0.0 < a < 1.0:
        raise ValueError(f"edge weight must lie in (0, 1), got {a}")
    R = np.zeros((m, m))
    if m > 1:
        for i in range(m):
            R[i, (i - 1) % m] = a
            R[i, i] = -a
    return DirectedWeights(m=m, R=R, C=R.T.copy())


def build_random_strongly_connected(m: int, density: float, rng_seed: int) -> DirectedWeights:
    """Random directed graph with a superimposed ring guaranteeing strong connectivity.

    Each ordered pair (i, j), i != j, becomes an edge with probability
    `density`; the ring edge i <- i-1 is always added.  Row i's off-diagonal
    entries share the uniform weight 0.9 / degree, so the off-diagonal row
    mass is 0.9 and the mixing diagonal stays at 0.1.  C = R^T.  Deterministic
    for a fixed seed.
    """
    if m < 2:
        raise ValueError(f"agent count must be >= 2, got {m}")
    if not 0.0 < density <= 1.0:
        raise ValueError(f"edge density must lie in (0, 1], got {density}")
    rng = np.random.default_rng(rng_seed)
    adjacency = rng.random((m, m)) < density
    np.fill_diagonal(adjacency, False)
    for i in range(m):
        adjacency[i, (i - 1) % m] = True
    R = np.zeros((m, m))
    for i in range(m):
        degree = int(adjacency[i].sum())
        R[i, adjacency[i]] = 0.9 / degree
        R[i, i] = -0.9
    return DirectedWeights(m=m, R=R, C=R.T.copy())


def _strongly_connected(adjacency: np.ndarray) -> bool:
    graph = csr_matrix(adjacency.astype(float))
    n_components, _ = connected_components(graph, directed=True, connection="strong")
    return n_components == 1


def _has_spanning_tree(adjacency: np.ndarray) -> bool:
    """True if some root reaches every node along directed edges."""
    graph = csr_matrix(adjacency.astype(float))
    n_components, labels = connected_components(graph, directed=True, connection="strong")
    if n_components == 1:
        return True
    # A root component exists iff the condensation has a unique source.
    rows, cols = np.nonzero(adjacency)
    has_incoming = np.zeros(n_components, dtype=bool)
    for r, c in zip(rows, cols):
        if labels[r] != labels[c]:
            has_incoming[labels[c]] = True
    return int((~has_incoming).sum()) == 1


def validate_weights(w: DirectedWeights) -> list[str]:
    """Check every structural requirement on (R, C); returns violation messages.

    An empty report means the pair is admissible.  Violations are reported,
    never raised, so callers can surface all problems at once.
    """
    report: list[str] = []
    R, C, m = w.R, w.C, w.m
    off = ~np.eye(m, dtype=bool)
    if np.any(R[off] < 0):
        report.append("R has a negative off-diagonal entry")
    if np.any(C[off] < 0):
        report.append("C has a negative off-diagonal entry")
    row = np.abs(R.sum(axis=1)).max() if m else 0.0
    if row > ROWSUM_TOL:
        report.append(f"R row sums are nonzero (max |R.1| = {row:.3e})")
    col = np.abs(C.sum(axis=0)).max() if m else 0.0
    if col > ROWSUM_TOL:
        report.append(f"C column sums are nonzero (max |1^T C| = {col:.3e})")
    if np.any(1.0 + np.diag(R) <= 0):
        report.append("1 + R_ii <= 0 for some agent (row mass not below 1)")
    if np.any(1.0 + np.diag(C) <= 0):
        report.append("1 + C_ii <= 0 for some agent (column mass not below 1)")
    if m > 1:
        if not _strongly_connected(R > 0):
            report.append("G_R not strongly connected")
        if not _has_spanning_tree((C > 0).T):
            report.append("G_{C^T} contains no spanning tree")
    return report


def _power_iteration(M: np.ndarray, tol: float, max_iter: int, label: str) -> np.ndarray:
    m = M.shape[0]
    x = np.ones(m)
    for _ in range(max_iter):
        x_new = M @ x
        x_new *= m / x_new.sum()
        if np.abs(x_new - x).max() < tol:
            return x_new
        x = x_new
    residual = np.abs(M @ x - x).max()
    raise ConvergenceError(
        f"power iteration for {label} did not converge within {max_iter} "
        f"iterations (residual {residual:.3e})"
    )


def left_perron(w: DirectedWeights, tol: float = 1e-13, max_iter: int = 100_000) -> PerronVectors:
    """Perron vectors of the mixing matrices by power iteration.

    u solves u^T (I+R) = u^T with sum(u) = m; omega solves (I+C) omega = omega
    with sum(omega) = m.  Both iterations start from the all-ones vector and
    stop when successive iterates change by less than `tol` in max norm.
    """
    u = _power_iteration(w.mixing_R.T, tol, max_iter, "u")
    omega = _power_iteration(w.mixing_C, tol, max_iter, "omega")
    return PerronVectors(u=u, omega=omega)


def init_eig_estimate(m: int) -> EigEstimate:
    """Initial estimates: agent i starts from the i-th canonical unit vector."""
    return EigEstimate(z=np.eye(m), t=0)


def eig_estimator_step(z: EigEstimate, w: DirectedWeights) -> EigEstimate:
    """One round of the distributed eigenvector estimator.

    Each agent mixes its estimate with pulled neighbor estimates:
    z_i <- z_i + sum_j R_ij (z_j - z_i).  Stacked into rows this is
    Z <- (I+R) Z, so row sums are preserved and m * Z_ii converges to u_i
    geometrically.
    """
    if np.any(np.diag(z.z) <= 0):
        raise ValueError(
            f"eigenvector estimate corrupted at round {z.t}: [z_i]_i <= 0 for some agent"
        )
    z_new = w.mixing_R @ z.z
    return EigEstimate(z=z_new, t=z.t + 1)


def estimator_errors(w: DirectedWeights, u: np.ndarray, rounds: int,
                     kind: str = "direct") -> np.ndarray:
    """Per-round worst-agent estimator error over `rounds` steps.

    kind="direct" measures max_i |m [z_i]_i - u_i|; kind="reciprocal"
    measures max_i |1 / (m [z_i]_i) - 1 / u_i|, the quantity whose geometric
    envelope feeds the sensitivity recursion.
    """
    if kind not in ("direct", "reciprocal"):
        raise ValueError(f"unknown error kind {kind!r}")
    est = init_eig_estimate(w.m)
    out = np.empty(rounds + 1)
    for t in range(rounds + 1):
        scaled = w.m * np.diag(est.z)
        if kind == "direct":
            out[t] = np.abs(scaled - u).max()
        else:
            out[t] = np.abs(1.0 / scaled - 1.0 / u).max()
        if t < rounds:
            est = eig_estimator_step(est, w)
    return out


def fit_geometric_envelope(errors: np.ndarray) -> tuple[float, float]:
    """Fit a valid geometric envelope e_t <= c * gamma^t to a decaying sequence.

    A least-squares line is fit to (t, ln e_t) over rounds with e_t > 1e-14;
    gamma = exp(slope) and c = exp(intercept) inflated by the largest positive
    residual, so the envelope dominates every fitted round rather than merely
    regressing through them.
    """
    errors = np.asarray(errors, dtype=float)
    t_idx = np.nonzero(errors > 1e-14)[0]
    if t_idx.size < 10:
        raise ValueError(
            f"need at least 10 rounds above the 1e-14 floor to fit, got {t_idx.size}"
        )
    log_e = np.log(errors[t_idx])
    slope, intercept = np.polyfit(t_idx.astype(float), log_e, 1)
    if slope >= 0:
        raise ValueError("no geometric decay detected (fitted rate >= 1)")
    residuals = log_e - (intercept + slope * t_idx)
    c = float(np.exp(intercept + max(residuals.max(), 0.0)))
    gamma = float(np.exp(slope))
    return c, gamma


def fit_estimator_envelope(w: DirectedWeights, u: np.ndarray,
                           rounds: int = 600) -> tuple[float, float]:
    """Geometric envelope (c_z, gamma_z) for the reciprocal estimator error.

    This is the default source of the envelope constants consumed by the
    privacy accountant; callers may override both values.  Graphs whose
    estimator collapses to machine zero within a few rounds (or is exact from
    the start, as for a single agent) get a conservative direct envelope
    instead of a regression.
    """
    errs = estimator_errors(w, u, rounds, kind="reciprocal")
    positive = np.nonzero(errs > 1e-14)[0]
    if positive.size == 0:
        return 0.0, 0.5
    if positive.size >= 10:
        return fit_geometric_envelope(errs)
    # Too few rounds above the floor for a regression; dominate them directly.
    gamma = 0.5
    c = float((errs[positive] / gamma ** positive).max())
    return c, gamma
