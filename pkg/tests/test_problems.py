import math

import numpy as np
import pytest

from conftest import constant_stream
from impopt import problems as pb
from impopt.problems import (LogisticTerm, OracleError, StreamParams, build_stream,
                             inequality_oracle, kkt_equality_oracle, kkt_residuals,
                             lagrangian_gradients, newton_oracle, oracle_trajectory)


class TestBounds:
    def test_singular_value_bounds(self):
        b = pb.bounds_from_singular_values(1, 10, 1, 1)
        assert (b.mu_lo, b.mu_hi) == (0.1, 1.0)

    def test_invalid_bounds(self):
        with pytest.raises(ValueError):
            pb.SpectralBounds(2.0, 1.0, 0.1, 1.0)
        with pytest.raises(ValueError):
            pb.bounds_from_singular_values(1, 10, 0, 1)

    def test_static_stream_bounds_hold(self, sine_stream):
        sine_stream.check_bounds([0])
        A = sine_stream.A(0)
        G = sine_stream.G(0)
        mu = np.linalg.eigvalsh(G @ np.linalg.solve(A, G.T))
        b = sine_stream.bounds
        assert b.mu_lo - 1e-12 <= mu.min() and mu.max() <= b.mu_hi + 1e-12

    def test_time_varying_bounds_hold(self):
        s = build_stream(StreamParams(seed=3, n=10, p=2, sigma_hi=3.0, omega=0.5, time_varying=True,
                                      b_signal="constant", h_signal="constant"))
        s.check_bounds(range(0, 200))
        b = s.bounds
        for k in range(0, 200, 7):
            A, G = s.A(k), s.G(k)
            mu = np.linalg.eigvalsh(G @ np.linalg.solve(A, G.T))
            assert b.mu_lo <= mu.min() and mu.max() <= b.mu_hi


class TestGenerators:
    def test_random_spd_spectrum(self, rng):
        ev = np.linalg.eigvalsh(pb.random_spd(rng, 10, 1.0, 10.0))
        assert ev[0] == pytest.approx(1.0) and ev[-1] == pytest.approx(10.0)

    def test_orthogonal_rows(self, rng):
        G = pb.random_with_singular_values(rng, 3, 10, 1.0, 1.0)
        np.testing.assert_allclose(G @ G.T, np.eye(3), atol=1e-14)

    def test_sparse_ones_density(self, rng):
        M = pb.sparse_ones(rng, (10, 10), 0.1, symmetric=True)
        assert M.sum() == 10 and np.array_equal(M, M.T)

    def test_build_is_deterministic(self):
        a = build_stream(StreamParams(seed=5, p=2, time_varying=True, omega=0.5))
        b = build_stream(StreamParams(seed=5, p=2, time_varying=True, omega=0.5))
        assert np.array_equal(a.A2, b.A2) and np.array_equal(a.G1, b.G1)
        assert a.record == b.record and a.record["seed"] == 5

    def test_inequality_matrix_matches_equality_draw(self):
        eq = build_stream(StreamParams(seed=1, p=2, b_signal="triangle", h_signal="triangle"))
        ineq = build_stream(StreamParams(seed=1, pp=2, b_signal="triangle", hp_signal="triangle"))
        np.testing.assert_array_equal(eq.G1, ineq.Gp)
        np.testing.assert_array_equal(eq.A1, ineq.A1)

    def test_rank_deficient_constraints_rejected(self, rng):
        spec = pb.SignalSpec(pb.SignalKind.CONSTANT, direction=np.ones(3))
        with pytest.raises(ValueError, match="rank"):
            pb.QuadraticStream(A1=np.eye(3), b_spec=spec, G1=np.ones((2, 3)),
                               h_spec=pb.SignalSpec(pb.SignalKind.CONSTANT, direction=np.ones(2)))


class TestGradients:
    def test_one_dimensional_example(self):
        spec = pb.SignalSpec(pb.SignalKind.CONSTANT, direction=np.array([-1.0]))
        s = pb.QuadraticStream(A1=np.eye(1), b_spec=spec)
        e, f, fp = lagrangian_gradients(s, 0, np.zeros(1))
        np.testing.assert_array_equal(e, [-1.0])
        assert f.size == 0 and fp.size == 0

    def test_batch_matches_loop(self, rng):
        s = constant_stream(rng, pp=2)
        X = rng.standard_normal((4, s.n))
        W = rng.standard_normal((4, 2))
        WP = rng.random((4, 2))
        e, f, fp = lagrangian_gradients(s, 0, X, W, WP)
        for i in range(4):
            ei, fi, fpi = lagrangian_gradients(s, 0, X[i], W[i], WP[i])
            np.testing.assert_allclose(e[i], ei)
            np.testing.assert_allclose(fp[i], fpi)

    def test_logistic_gradient_matches_finite_differences(self):
        s = build_stream(StreamParams(seed=2, n=10, p=1, omega=0.5, nonquad=True,
                                      b_signal="constant", b_direction="random"))
        rng = np.random.default_rng(0)
        for k in (1, 3, 10):
            x = rng.standard_normal(s.n)
            e, _, _ = lagrangian_gradients(s, k, x, np.zeros(1))
            h = 1e-6
            fd = np.array([(pb.nonquadratic_cost(s, k, x + h * d) - pb.nonquadratic_cost(s, k, x - h * d)) / (2 * h)
                           for d in np.eye(s.n)])
            assert np.linalg.norm(e - fd) <= 1e-6 * np.linalg.norm(fd)

    def test_sigmoid_softplus_stable(self):
        assert pb.sigmoid(-1000.0) == 0.0 and pb.sigmoid(1000.0) == 1.0
        assert pb.softplus(1000.0) == 1000.0
        assert pb.softplus(0.0) == pytest.approx(math.log(2.0))

    def test_logistic_direction_must_be_unit(self):
        with pytest.raises(ValueError):
            LogisticTerm(np.array([1.0, 1.0]), 0.5)


class TestOracles:
    def test_equality_oracle_residuals(self, sine_stream):
        for k in (0, 1234, 99999):
            sol = kkt_equality_oracle(sine_stream, k)
            assert max(kkt_residuals(sine_stream, k, sol).values()) < 1e-12

    def test_vectorized_trajectory_matches_per_step(self, sine_stream):
        tr = oracle_trajectory(sine_stream, 500)
        for k in (0, 17, 499):
            np.testing.assert_allclose(tr.x_star[k], kkt_equality_oracle(sine_stream, k).x_star, atol=1e-14)

    def test_inequality_oracle_hand_case(self):
        # min 0.5 x^2 - x  s.t. x <= h: x* = min(1, h)
        b = pb.SignalSpec(pb.SignalKind.CONSTANT, direction=np.array([-1.0]))
        for h, x_star, w_star in ((2.0, 1.0, 0.0), (0.5, 0.5, 0.5)):
            hp = pb.SignalSpec(pb.SignalKind.CONSTANT, direction=np.array([h]))
            s = pb.QuadraticStream(A1=np.eye(1), b_spec=b, Gp=np.eye(1), hp_spec=hp)
            sol = inequality_oracle(s, 0)
            assert sol.x_star[0] == pytest.approx(x_star)
            assert sol.wp_star[0] == pytest.approx(w_star)

    def test_inequality_oracle_with_equalities(self, rng):
        s = constant_stream(rng, n=8, p=2, pp=3)
        sol = inequality_oracle(s, 0)
        assert max(kkt_residuals(s, 0, sol).values()) < 1e-10

    def test_enumeration_envelope(self, rng):
        s = constant_stream(rng, n=25, p=0, pp=21)
        with pytest.raises(OracleError, match="envelope"):
            inequality_oracle(s, 0)

    def test_newton_oracle_reduces_to_kkt(self, rng):
        s = constant_stream(rng)
        a, b = newton_oracle(s, 0), kkt_equality_oracle(s, 0)
        np.testing.assert_allclose(a.x_star, b.x_star, atol=1e-12)

    def test_newton_oracle_logistic(self):
        s = build_stream(StreamParams(seed=2, n=10, p=1, omega=0.5, nonquad=True,
                                      b_signal="constant", b_direction="random"))
        tr = oracle_trajectory(s, 50)
        assert tr.max_residual.max() <= pb.KKT_TOL

    def test_active_set_flags(self):
        s = build_stream(StreamParams(seed=1, pp=2, b_signal="triangle", hp_signal="triangle",
                                      omega=2 * np.pi / 400))
        tr = oracle_trajectory(s, 800)
        assert tr.active_any.any() and not tr.active_any.all()
        assert tr.active_changed.sum() >= 2
