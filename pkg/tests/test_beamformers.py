import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qpskbf.beamformers import (QPSK, ObjectiveParams, OracleTooLargeError, QpskWeights,
                                canonicalize, capon_weights, coordinate_descent,
                                coordinate_descent_path, greedy_sample, naive_quantize, objective,
                                objective_batch, oracle_search, rotate, to_complex)
from qpskbf.linalg import HermitianMatrix

from conftest import random_psd, random_unit_steering, scenario_instance

P = ObjectiveParams()


def brute_force(r, a_g, p=P):
    """Full 4^N search, objective re-evaluated from scratch by explicit loops."""
    n = len(a_g)
    best, best_s = -np.inf, None
    for s in itertools.product(range(4), repeat=n):
        w = QPSK[list(s)] / np.sqrt(2 * n)
        gain = abs(sum(np.conj(w[i]) * a_g[i] for i in range(n))) ** 2
        power = sum(np.conj(w[i]) * r.array[i, j] * w[j] for i in range(n) for j in range(n)).real
        f = p.alpha * gain - (1 - p.alpha) * power
        if f > best:
            best, best_s = f, s
    return best, best_s


def random_instance(rng, n):
    return random_psd(rng, n), random_unit_steering(rng, n)


class TestQpskWeights:
    def test_validation(self):
        with pytest.raises(ValueError):
            QpskWeights((0,))
        with pytest.raises(ValueError):
            QpskWeights((0, 4))

    def test_json_and_encoding(self):
        s = QpskWeights((0, 3, 1, 2))
        assert s.to_json() == "[0, 3, 1, 2]"
        assert QpskWeights.from_json(s.to_json()) == s
        assert s.encoding() == 0 * 64 + 3 * 16 + 1 * 4 + 2
        assert s.is_canonical and not QpskWeights((1, 0)).is_canonical


class TestToComplex:
    def test_n2(self):
        w = to_complex(QpskWeights((0, 0)))
        np.testing.assert_allclose(w, [(1 + 1j) / 2, (1 + 1j) / 2])
        assert np.linalg.norm(w) == pytest.approx(1.0, abs=1e-12)

    def test_constant_modulus(self, rng):
        w = to_complex(QpskWeights(tuple(rng.integers(0, 4, 8))))
        np.testing.assert_allclose(np.abs(w), 1 / np.sqrt(8), atol=1e-15)

    def test_exhaustive_round_trip_n3(self):
        for s in itertools.product(range(4), repeat=3):
            assert naive_quantize(to_complex(QpskWeights(s))).symbols == s

    def test_phase_alignment_bound_n3(self, rng):
        for _ in range(5):
            a = random_unit_steering(rng, 3)
            for s in itertools.product(range(4), repeat=3):
                assert abs(np.vdot(to_complex(QpskWeights(s)), a)) ** 2 <= 3 + 1e-12
        # equality iff every element is phase aligned: steering phases on the QPSK grid
        a = QPSK[[0, 2, 3]] / np.sqrt(2)
        gains = [abs(np.vdot(to_complex(QpskWeights(s)), a)) ** 2
                 for s in itertools.product(range(4), repeat=3)]
        assert max(gains) == pytest.approx(3, abs=1e-12)
        assert sum(g > 3 - 1e-9 for g in gains) == 4  # one aligned vector per global rotation


class TestObjective:
    def test_identity_orthogonal(self):
        s = QpskWeights((0, 2))
        w = to_complex(s)
        a = np.array([1, -np.conj(w[0]) / np.conj(w[1])])
        assert abs(np.vdot(w, a)) < 1e-15
        assert objective(s, HermitianMatrix.identity(2), a, P) == pytest.approx(-(1 - P.alpha))

    def test_phase_aligned_maximum(self):
        f = objective(QpskWeights((0, 0)), HermitianMatrix.identity(2), np.array([1, 1]), P)
        assert f == pytest.approx(P.alpha * 2 - (1 - P.alpha) * 1, abs=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 8), k=st.integers(0, 3))
    def test_rotation_invariance(self, seed, n, k):
        rng = np.random.default_rng(seed)
        r, a = random_instance(rng, n)
        s = QpskWeights(tuple(rng.integers(0, 4, n)))
        assert abs(objective(rotate(s, k), r, a, P) - objective(s, r, a, P)) <= 1e-12

    def test_rotate_multiplies_by_j(self):
        s = QpskWeights((0, 1, 2, 3))
        np.testing.assert_allclose(to_complex(rotate(s, 1)), 1j * to_complex(s), atol=1e-15)
        assert rotate(s, 4) == s
        assert canonicalize(QpskWeights((3, 1))).symbols[0] == 0

    def test_batch_matches_scalar(self, rng):
        r, a = random_instance(rng, 5)
        syms = rng.integers(0, 4, (30, 5))
        ref = [objective(QpskWeights(tuple(s)), r, a, P) for s in syms]
        np.testing.assert_allclose(objective_batch(syms, r, a, P.alpha), ref, rtol=1e-12, atol=1e-14)

    def test_dimension_mismatch(self, rng):
        r, a = random_instance(rng, 4)
        with pytest.raises(ValueError):
            objective(QpskWeights((0, 0, 0)), r, a, P)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            ObjectiveParams(alpha=1.5)
        with pytest.raises(ValueError):
            ObjectiveParams(loading_scale=-1)


class TestCapon:
    def test_identity(self, rng):
        a = random_unit_steering(rng, 6)
        np.testing.assert_allclose(capon_weights(HermitianMatrix.identity(6), a, P), a / 6, atol=1e-12)

    def test_null_property(self, rng):
        from qpskbf.array_model import Direction, steering_vector, uca_geometry
        g = uca_geometry(8)
        a_g = steering_vector(g, Direction(0, 70))
        a_j = steering_vector(g, Direction(120, 5))
        r = HermitianMatrix(np.eye(8) + 1e6 * np.outer(a_j, a_j.conj()))
        w = capon_weights(r, a_g, P)
        assert abs(np.vdot(w, a_j)) ** 2 <= 1e-4 * abs(np.vdot(w, a_g)) ** 2

    def test_distortionless(self, rng):
        for i in range(100):
            n = 2 + i % 9
            r, a = random_instance(rng, n)
            assert abs(np.vdot(capon_weights(r, a, P), a) - 1) <= 1e-9
        for seed in range(20):
            r, a, _ = scenario_instance(8, seed)
            assert abs(np.vdot(capon_weights(r, a, P), a) - 1) <= 1e-9


class TestNaiveQuantize:
    @pytest.mark.parametrize("w, sym", [(0.3 - 0.2j, 1), (-0.7 + 0.1j, 2), (0j, 0), (-1 - 1j, 3),
                                        (-0.0 + 0j, 0)])
    def test_sign_mapping(self, w, sym):
        assert naive_quantize([w, w]).symbols == (sym, sym)

    def test_scale_invariant(self, rng):
        w = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        assert naive_quantize(w) == naive_quantize(37.5 * w)


class TestOracle:
    def test_n2_alignment(self):
        s = oracle_search(HermitianMatrix.identity(2), np.array([1, 1j]), P)
        assert s.symbols == (0, 2)
        assert abs(np.vdot(to_complex(s), [1, 1j])) ** 2 == pytest.approx(2)

    @pytest.mark.parametrize("n", [2, 3, 4])
    def test_matches_full_brute_force(self, rng, n):
        for _ in range(15):
            r, a = random_instance(rng, n)
            best, _ = brute_force(r, a)
            s = oracle_search(r, a, P)
            assert s.is_canonical
            assert objective(s, r, a, P) == pytest.approx(best, abs=1e-12)

    def test_gray_enumeration_matches_naive_reevaluation(self, rng):
        # the incremental kernel must agree with from-scratch evaluation of every canonical vector
        for n in (5, 6):
            r, a = random_instance(rng, n)
            cands = np.array([(0,) + c for c in itertools.product(range(4), repeat=n - 1)])
            vals = objective_batch(cands, r, a, P.alpha)
            s = oracle_search(r, a, P)
            assert objective(s, r, a, P) == pytest.approx(vals.max(), abs=1e-10)

    def test_tie_goes_to_smallest_encoding(self):
        # R = I and a_g = 0: every candidate scores -(1 - alpha)
        s = oracle_search(HermitianMatrix.identity(4), np.zeros(4), P)
        assert s.symbols == (0, 0, 0, 0)

    def test_refuses_large_n(self):
        with pytest.raises(OracleTooLargeError, match=r"4\^\(N-1\)"):
            oracle_search(HermitianMatrix.identity(15), np.ones(15), P)

    def test_dominance_on_scenarios(self):
        for seed in range(25):
            for n in (2, 3, 4, 8):
                r, a, _ = scenario_instance(n, seed)
                f = objective(oracle_search(r, a, P), r, a, P)
                naive = naive_quantize(capon_weights(r, a, P))
                assert f >= objective(naive, r, a, P) - 1e-12
                assert f >= objective(greedy_sample(r, a, P, 100, seed), r, a, P) - 1e-12
                assert f >= objective(coordinate_descent(naive, r, a, P), r, a, P) - 1e-12


class TestGreedy:
    def test_reproducible(self, rng):
        r, a = random_instance(rng, 6)
        assert greedy_sample(r, a, P, 100, 5) == greedy_sample(r, a, P, 100, 5)

    def test_single_sample_is_first_draw(self, rng):
        from qpskbf.array_model import make_rng
        r, a = random_instance(rng, 5)
        expect = tuple(make_rng(11).integers(0, 4, size=(1, 5))[0])
        assert greedy_sample(r, a, P, 1, 11).symbols == expect

    def test_never_beats_oracle(self, rng):
        for _ in range(50):
            r, a = random_instance(rng, 4)
            g = greedy_sample(r, a, P, 256, int(rng.integers(1 << 32)))
            assert objective(g, r, a, P) <= objective(oracle_search(r, a, P), r, a, P) + 1e-12

    def test_bad_count(self, rng):
        r, a = random_instance(rng, 3)
        with pytest.raises(ValueError):
            greedy_sample(r, a, P, 0)


class TestCoordinateDescent:
    def test_oracle_is_fixed_point(self, rng):
        for _ in range(30):
            r, a = random_instance(rng, 5)
            s = oracle_search(r, a, P)
            res = coordinate_descent_path(s, r, a, P)
            assert res.weights == s and res.converged and res.sweeps == 1

    def test_monotone_from_naive(self):
        for seed in range(100):
            r, a, _ = scenario_instance(4, seed)
            init = naive_quantize(capon_weights(r, a, P))
            res = coordinate_descent_path(init, r, a, P)
            assert np.all(np.diff(res.history) > 0)
            assert objective(res.weights, r, a, P) >= objective(init, r, a, P)

    def test_local_optimum_on_convergence(self, rng):
        for _ in range(30):
            r, a = random_instance(rng, 6)
            res = coordinate_descent_path(QpskWeights(tuple(rng.integers(0, 4, 6))), r, a, P)
            assert res.converged
            f = objective(res.weights, r, a, P)
            for i in range(6):
                for q in range(4):
                    s = list(res.weights.symbols)
                    s[i] = q
                    assert objective(QpskWeights(tuple(s)), r, a, P) <= f + 1e-12 * max(1, abs(f))

    def test_all_starts_reach_oracle_n4(self, rng):
        for _ in range(10):
            r, a = random_instance(rng, 4)
            best, _ = brute_force(r, a)
            finals = [objective(coordinate_descent(QpskWeights(s), r, a, P), r, a, P)
                      for s in itertools.product(range(4), repeat=4)]
            assert max(finals) == pytest.approx(best, abs=1e-12)

    def test_sweep_count_n8(self):
        hist = np.zeros(21, int)
        for seed in range(100):
            r, a, _ = scenario_instance(8, seed)
            res = coordinate_descent_path(naive_quantize(capon_weights(r, a, P)), r, a, P, 20)
            assert res.converged
            hist[res.sweeps] += 1
        print("coordinate-descent sweep histogram (N=8):", dict(enumerate(hist)))

    def test_max_sweeps_respected(self, rng):
        r, a = random_instance(rng, 8)
        res = coordinate_descent_path(QpskWeights((0,) * 8), r, a, P, max_sweeps=1)
        assert res.sweeps == 1
        with pytest.raises(ValueError):
            coordinate_descent(QpskWeights((0, 0)), HermitianMatrix.identity(2), np.ones(2), P, 0)
