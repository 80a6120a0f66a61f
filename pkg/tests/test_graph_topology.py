import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldp_gradtrack.graph_topology import (ConvergenceError, DirectedWeights,
                                          EigEstimate, build_random_strongly_connected,
                                          build_ring, eig_estimator_step,
                                          estimator_errors, fit_estimator_envelope,
                                          fit_geometric_envelope, init_eig_estimate,
                                          left_perron, validate_weights)


def nx_strongly_connected(R: np.ndarray) -> bool:
    """Independent strong-connectivity oracle on the induced edge set."""
    g = nx.DiGraph()
    m = R.shape[0]
    g.add_nodes_from(range(m))
    for i in range(m):
        for j in range(m):
            if i != j and R[i, j] > 0:
                g.add_edge(i, j)
    return nx.is_strongly_connected(g)


def dense_perron(M: np.ndarray) -> np.ndarray:
    """Dense eigendecomposition oracle for the eigenvalue-1 left eigenvector."""
    vals, vecs = np.linalg.eig(M.T)
    idx = np.argmin(np.abs(vals - 1.0))
    u = np.real(vecs[:, idx])
    return u / u.sum() * M.shape[0]


class TestBuildRing:
    def test_single_node_is_zero_matrix(self):
        w = build_ring(1, 0.5)
        assert w.R.shape == (1, 1)
        assert w.R[0, 0] == 0.0
        assert validate_weights(w) == []

    def test_ring3_structure(self):
        w = build_ring(3, 0.5)
        for i in range(3):
            assert w.R[i, i] == -0.5
            assert w.R[i, (i - 1) % 3] == 0.5
        assert np.all(w.R @ np.ones(3) == 0.0)
        assert np.array_equal(w.C, w.R.T)

    def test_ring10_validates_and_connectivity_matches_oracle(self, ring10):
        assert validate_weights(ring10) == []
        assert nx_strongly_connected(ring10.R)

    @pytest.mark.parametrize("m,a", [(0, 0.5), (3, 0.0), (3, 1.0), (3, -0.2)])
    def test_rejects_bad_arguments(self, m, a):
        with pytest.raises(ValueError):
            build_ring(m, a)


class TestBuildRandom:
    def test_m2_full_density_is_doubly_stochastic(self):
        w = build_random_strongly_connected(2, 1.0, 0)
        mix = w.mixing_R
        assert np.allclose(mix.sum(axis=0), 1.0)
        assert np.allclose(mix.sum(axis=1), 1.0)

    def test_random_graph_passes_validator(self):
        w = build_random_strongly_connected(5, 0.3, 7)
        assert validate_weights(w) == []
        assert nx_strongly_connected(w.R)

    def test_deterministic_for_fixed_seed(self):
        a = build_random_strongly_connected(6, 0.4, 99)
        b = build_random_strongly_connected(6, 0.4, 99)
        assert np.array_equal(a.R, b.R)
        assert np.array_equal(a.C, b.C)

    def test_row_mass_capped(self):
        w = build_random_strongly_connected(8, 0.9, 3)
        off = w.R.copy()
        np.fill_diagonal(off, 0.0)
        assert np.all(off.sum(axis=1) <= 0.9 + 1e-15)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            build_random_strongly_connected(1, 0.5, 0)
        with pytest.raises(ValueError):
            build_random_strongly_connected(4, 0.0, 0)


class TestValidateWeights:
    def test_negative_offdiagonal_reported(self):
        R = build_ring(3, 0.5).R.copy()
        R.flags.writeable = True
        R[0, 1] = -0.1
        w = DirectedWeights(m=3, R=R, C=R.T.copy())
        report = validate_weights(w)
        assert any("negative off-diagonal" in msg for msg in report)

    def test_disconnected_blocks_reported(self):
        r3 = build_ring(3, 0.5).R
        R = np.block([[r3, np.zeros((3, 3))], [np.zeros((3, 3)), r3]])
        w = DirectedWeights(m=6, R=R, C=R.T.copy())
        report = validate_weights(w)
        assert any("not strongly connected" in msg for msg in report)
        # Independent oracle agrees there are two components.
        g = nx.DiGraph([(i, j) for i in range(6) for j in range(6)
                        if i != j and R[i, j] > 0])
        assert nx.number_strongly_connected_components(g) == 2

    def test_missing_spanning_tree_reported(self):
        w = DirectedWeights(m=3, R=build_ring(3, 0.5).R, C=np.zeros((3, 3)))
        report = validate_weights(w)
        assert any("spanning tree" in msg for msg in report)

    def test_nonzero_row_sums_reported(self):
        R = np.array([[-0.4, 0.5], [0.5, -0.5]])
        w = DirectedWeights(m=2, R=R, C=R.T.copy())
        assert any("row sums" in msg for msg in validate_weights(w))

    def test_excess_row_mass_reported(self):
        R = np.array([[-1.5, 1.5], [1.5, -1.5]])
        w = DirectedWeights(m=2, R=R, C=R.T.copy())
        assert any("1 + R_ii" in msg for msg in validate_weights(w))


class TestLeftPerron:
    def test_ring_gives_all_ones(self, ring10):
        pv = left_perron(ring10)
        assert np.allclose(pv.u, 1.0, atol=1e-10)
        assert np.allclose(pv.omega, 1.0, atol=1e-10)

    def test_single_node(self):
        pv = left_perron(build_ring(1, 0.5))
        assert pv.u[0] == pytest.approx(1.0, abs=1e-12)
        assert pv.omega[0] == pytest.approx(1.0, abs=1e-12)

    def test_asymmetric_graph_matches_dense_oracle(self):
        R = np.array([[-0.7, 0.3, 0.4],
                      [0.2, -0.2, 0.0],
                      [0.5, 0.1, -0.6]])
        w = DirectedWeights(m=3, R=R, C=R.T.copy())
        assert validate_weights(w) == []
        pv = left_perron(w)
        assert np.abs(pv.u - dense_perron(w.mixing_R)).max() < 1e-8
        assert np.abs(pv.omega - dense_perron(w.mixing_C.T)).max() < 1e-8

    def test_invariants_on_100_random_graphs(self):
        for seed in range(100):
            m = 2 + seed % 11
            density = min(0.2 + 0.8 * (seed % 7) / 6, 1.0)
            w = build_random_strongly_connected(m, density, seed)
            pv = left_perron(w)
            assert np.abs(pv.u @ w.mixing_R - pv.u).max() < 1e-10
            assert np.abs(w.mixing_C @ pv.omega - pv.omega).max() < 1e-10
            assert pv.u.sum() == pytest.approx(m, abs=1e-10)
            assert pv.omega.sum() == pytest.approx(m, abs=1e-10)
            assert np.all(pv.u > 0) and np.all(pv.omega > 0)

    def test_nonconvergence_raises_with_residual(self):
        w = build_random_strongly_connected(8, 0.3, 1)
        with pytest.raises(ConvergenceError, match="residual"):
            left_perron(w, tol=1e-13, max_iter=3)


class TestEigEstimator:
    def test_initialization_diagonal(self, ring10):
        est = init_eig_estimate(10)
        assert np.all(10 * np.diag(est.z) == 10.0)
        assert np.allclose(est.z.sum(axis=1), 1.0)

    def test_single_node_fixed_point(self):
        w = build_ring(1, 0.5)
        est = init_eig_estimate(1)
        for _ in range(5):
            est = eig_estimator_step(est, w)
        assert est.z[0, 0] == 1.0

    def test_geometric_convergence_on_ring10(self, ring10):
        # Mixing rate of ring(10, 0.3) is |0.7 + 0.3 e^{i pi/5}| ~ 0.959, so
        # the error is ~3.5e-4 at t=200 and crosses 1e-10 around t=600.
        pv = left_perron(ring10)
        errs = estimator_errors(ring10, pv.u, 650, kind="direct")
        assert errs[200] < 1e-3
        assert errs[650] < 1e-10
        rate = np.abs(0.7 + 0.3 * np.exp(1j * np.pi / 5))
        c, gamma = fit_geometric_envelope(errs)
        assert abs(gamma - rate) < 0.01
        assert np.all(errs[errs > 1e-14] <= c * gamma ** np.nonzero(errs > 1e-14)[0] + 1e-15)

    def test_row_sums_preserved_many_rounds(self):
        w = build_ring(6, 0.4)
        est = init_eig_estimate(6)
        for _ in range(10_000):
            est = eig_estimator_step(est, w)
            assert np.abs(est.z.sum(axis=1) - 1.0).max() < 1e-12

    def test_corrupted_state_raises(self, ring10):
        z = np.eye(10)
        z[3, 3] = -0.1
        with pytest.raises(ValueError, match="corrupted"):
            eig_estimator_step(EigEstimate(z=z, t=5), ring10)


class TestFitGeometricEnvelope:
    def test_exact_geometric_input(self):
        t = np.arange(60)
        c, gamma = fit_geometric_envelope(0.5 ** t)
        assert gamma == pytest.approx(0.5, abs=1e-6)
        assert c >= 1.0 - 1e-12

    def test_constant_sequence_rejected(self):
        with pytest.raises(ValueError, match="no geometric decay"):
            fit_geometric_envelope(np.ones(50))

    def test_too_few_rounds_rejected(self):
        with pytest.raises(ValueError, match="at least 10"):
            fit_geometric_envelope(0.5 ** np.arange(5))

    @settings(max_examples=25, deadline=None)
    @given(gamma=st.floats(0.3, 0.95), c0=st.floats(0.5, 10.0),
           seed=st.integers(0, 2**31 - 1))
    def test_envelope_dominates_noisy_geometric(self, gamma, c0, seed):
        t = np.arange(80)
        noise = 1.0 + 0.01 * np.random.default_rng(seed).uniform(-1, 1, 80)
        errs = c0 * gamma ** t * noise
        c, g = fit_geometric_envelope(errs)
        fitted = errs > 1e-14
        assert np.all(errs[fitted] <= c * g ** t[fitted] * (1 + 1e-9))
        assert abs(g - gamma) < 0.05

    def test_estimator_envelope_on_fast_mixing_graph(self):
        # Full-density graphs collapse the estimator within a few rounds; the
        # fallback must still return a valid envelope.
        w = build_random_strongly_connected(10, 1.0, 0)
        pv = left_perron(w)
        c, gamma = fit_estimator_envelope(w, pv.u)
        errs = estimator_errors(w, pv.u, 100, kind="reciprocal")
        fitted = errs > 1e-14
        assert np.all(errs[fitted] <= c * gamma ** np.nonzero(fitted)[0] * (1 + 1e-9))
