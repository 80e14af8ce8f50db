"""
Unit tests for the M/M/infinity, M/M/s and M/M/s/K closed forms.
"""

import itertools
import math
import unittest

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import binom, poisson

from transient_queues.models.generator import build_birth_death_generator
from transient_queues.models.spec import BirthDeathSpec, RateMap, birth_death_to_prp
from transient_queues.oracles.resolvent import level_resolvent, resolvent_pmf
from transient_queues.queues.mms import (
    MmsParams,
    QueueModelError,
    erlang_loss_law,
    mm1_mean,
    mminfty_hitting_lst,
    mminfty_point_pmf,
    mms_mean,
    mms_pmf,
    mms_to_birth_death,
    mmsk_pmf,
    reference_point_pmf,
    stationary_pmf,
)


def queue_resolvent(params, initial, q, top):
    return level_resolvent(birth_death_to_prp(mms_to_birth_death(params)), initial, q, top)


def mminfty_quadrature(k, s, lam, mu, q):
    """q int e^{-qt} P_k(Q(t) = s) dt with Q(t) = Binomial(k, e^{-mu t}) + Poisson."""
    rho = lam / mu

    def integrand(t):
        survive = math.exp(-mu * t)
        mean = rho * (1.0 - survive)
        return q * math.exp(-q * t) * sum(
            binom.pmf(j, k, survive) * poisson.pmf(s - j, mean) for j in range(min(k, s) + 1)
        )

    value, _ = quad(integrand, 0.0, np.inf, epsabs=1e-13, epsrel=1e-12, limit=200)
    return value


class TestMmInfinity(unittest.TestCase):
    """Test cases for the M/M/infinity queue."""

    def setUp(self):
        """Set up test fixtures."""
        self.params = MmsParams(lam=1.0, mu=1.0)

    def test_known_values(self):
        """Test P_1(Q(e_1) = 1) = 2 - 4/e and E_0[exp(-tau_1)] = 1/2."""
        self.assertAlmostEqual(mminfty_point_pmf(1, 1, self.params, 1.0), 2.0 - 4.0 / math.e, places=12)
        self.assertAlmostEqual(mminfty_hitting_lst(0, 1, self.params, 1.0), 0.5, places=12)
        self.assertEqual(mminfty_hitting_lst(2, 2, self.params, 1.0), 1.0)

    def test_matches_quadrature(self):
        """Test the point pmf against quadrature of the binomial-Poisson law."""
        for s in range(7):
            for k in range(s + 1):
                expected = mminfty_quadrature(k, s, 1.0, 1.0, 1.0)
                self.assertAlmostEqual(mminfty_point_pmf(k, s, self.params, 1.0), expected,
                                       delta=1e-10, msg=f"k={k}, s={s}")

    def test_large_load_uses_recursion(self):
        """Test agreement with quadrature when the double sum is not attempted."""
        params = MmsParams(lam=40.0, mu=1.0)
        expected = mminfty_quadrature(38, 42, 40.0, 1.0, 2.0)
        self.assertAlmostEqual(mminfty_point_pmf(38, 42, params, 2.0), expected, delta=1e-9)

    def test_invalid_states(self):
        """Test rejecting k > s."""
        with self.assertRaises(QueueModelError):
            mminfty_point_pmf(3, 2, self.params, 1.0)
        with self.assertRaises(QueueModelError):
            mminfty_hitting_lst(3, 2, self.params, 1.0)


class TestMms(unittest.TestCase):
    """Test cases for the M/M/s queue."""

    def setUp(self):
        """Set up test fixtures."""
        self.params = MmsParams(lam=2.0, mu=1.0, servers=3)

    def test_matches_resolvent(self):
        """Test every initial-state case against the truncated resolvent."""
        for q in (0.5, 1.0, 4.0):
            for k in (0, 2, 3, 5):
                oracle = queue_resolvent(self.params, k, q, 80)
                for n in range(21):
                    self.assertAlmostEqual(mms_pmf(k, n, self.params, q), oracle.get(n), delta=1e-9,
                                           msg=f"q={q}, k={k}, n={n}")

    def test_rows_sum_to_one(self):
        """Test that each law sums to one."""
        for k in (0, 1, 3, 6):
            total = math.fsum(mms_pmf(k, n, self.params, 1.0) for n in range(120))
            self.assertAlmostEqual(total, 1.0, delta=1e-9)

    def test_small_q_limit(self):
        """Test convergence to the stationary law as q -> 0."""
        stationary = stationary_pmf(mms_to_birth_death(self.params))
        for n in range(15):
            self.assertAlmostEqual(mms_pmf(0, n, self.params, 1e-8), stationary[n], delta=1e-6)

    def test_single_server_reference_point(self):
        """Test the single-server case against the reference-point formula."""
        params = MmsParams(lam=1.0, mu=2.0, servers=1)
        spec = mms_to_birth_death(params)
        for n in range(10):
            self.assertAlmostEqual(mms_pmf(0, n, params, 0.7), reference_point_pmf(spec, 0, n, 0.7),
                                   delta=1e-12)

    def test_complex_argument(self):
        """Test that a complex argument returns a complex value."""
        value = mms_pmf(2, 4, self.params, 1.0 + 1.0j)
        self.assertIsInstance(value, complex)
        mirrored = mms_pmf(2, 4, self.params, 1.0 - 1.0j)
        self.assertLess(abs(value - mirrored.conjugate()), 1e-12)

    def test_invalid_states(self):
        """Test rejecting negative states and invalid parameters."""
        with self.assertRaises(QueueModelError):
            mms_pmf(-1, 0, self.params, 1.0)
        with self.assertRaises(QueueModelError):
            MmsParams(lam=0.0, mu=1.0)
        with self.assertRaises(QueueModelError):
            MmsParams(lam=1.0, mu=1.0, servers=0)
        with self.assertRaises(QueueModelError):
            MmsParams(lam=1.0, mu=1.0, servers=3, capacity=3)

    @pytest.mark.slow
    def test_acceptance_grid(self):
        """Test the closed form against the resolvent over servers, loads and rates."""
        for servers, load, q in itertools.product((1, 2, 3), (0.5, 0.8), (0.1, 1.0, 10.0)):
            params = MmsParams(lam=load * servers, mu=1.0, servers=servers)
            for k in range(7):
                oracle = queue_resolvent(params, k, q, 150)
                for n in range(11):
                    self.assertAlmostEqual(mms_pmf(k, n, params, q), oracle.get(n), delta=1e-9,
                                           msg=f"s={servers}, load={load}, q={q}, k={k}, n={n}")

    def test_overloaded_and_critical_grid(self):
        """Test every (k, n) in {0..10}^2 with lam >= s mu included, and the row sums."""
        for servers, (lam, mu), q in itertools.product((1, 2, 3), ((1.0, 2.0), (2.0, 1.0)), (0.5, 1.0, 2.0)):
            params = MmsParams(lam=lam, mu=mu, servers=servers)
            for k in range(11):
                oracle = queue_resolvent(params, k, q, 80)
                for n in range(11):
                    self.assertAlmostEqual(mms_pmf(k, n, params, q), oracle.get(n), delta=1e-7,
                                           msg=f"s={servers}, lam={lam}, mu={mu}, q={q}, k={k}, n={n}")
                row = sum(mms_pmf(k, n, params, q) for n in range(301))
                self.assertAlmostEqual(row, 1.0, delta=1e-7,
                                       msg=f"s={servers}, lam={lam}, mu={mu}, q={q}, k={k}")


class TestMmsk(unittest.TestCase):
    """Test cases for the M/M/s/K queue."""

    def setUp(self):
        """Set up test fixtures."""
        self.params = MmsParams(lam=1.0, mu=1.0, servers=2, capacity=5)
        self.generator = build_birth_death_generator(mms_to_birth_death(self.params))

    def test_matches_resolvent(self):
        """Test every (k, n) pair against the finite chain."""
        for k in range(6):
            oracle = resolvent_pmf(self.generator, k, 1.0)
            for n in range(6):
                self.assertAlmostEqual(mmsk_pmf(k, n, self.params, 1.0), oracle.get(n), delta=1e-10,
                                       msg=f"k={k}, n={n}")

    def test_mms_pmf_delegates(self):
        """Test that mms_pmf routes capacity-limited queues."""
        self.assertEqual(mms_pmf(4, 2, self.params, 0.5), mmsk_pmf(4, 2, self.params, 0.5))

    def test_small_q_limit(self):
        """Test convergence to the stationary law as q -> 0."""
        stationary = stationary_pmf(mms_to_birth_death(self.params))
        for k, n in itertools.product(range(6), range(6)):
            self.assertAlmostEqual(mmsk_pmf(k, n, self.params, 1e-8), stationary[n], delta=1e-6)

    def test_invalid_states(self):
        """Test rejecting states beyond the capacity and missing capacities."""
        with self.assertRaises(QueueModelError):
            mmsk_pmf(6, 0, self.params, 1.0)
        with self.assertRaises(QueueModelError):
            mmsk_pmf(0, 0, MmsParams(lam=1.0, mu=1.0, servers=2), 1.0)


class TestErlangLoss(unittest.TestCase):
    """Test cases for the Erlang loss law."""

    def test_matches_resolvent(self):
        """Test the M/M/l/l law started full against the finite chain."""
        params = MmsParams(lam=2.0, mu=1.0)
        spec = BirthDeathSpec(birth=RateMap.constant(2.0), death=RateMap.linear(1.0), upper=3)
        oracle = resolvent_pmf(build_birth_death_generator(spec), 3, 1.0)
        law = erlang_loss_law(3, params, 1.0)
        np.testing.assert_allclose(law, oracle.probabilities, atol=1e-10)
        self.assertAlmostEqual(law.sum(), 1.0, places=12)


class TestMeans(unittest.TestCase):
    """Test cases for the mean queue length."""

    def test_mm1_known_value(self):
        """Test E_0[Q(e_1)] = sqrt(2) - 1 for lam=1, mu=2."""
        self.assertAlmostEqual(mm1_mean(0, 1.0, 2.0, 1.0), math.sqrt(2.0) - 1.0, places=14)

    def test_mm1_small_q_limit(self):
        """Test convergence to rho / (1 - rho) as q -> 0."""
        self.assertAlmostEqual(mm1_mean(0, 1.0, 2.0, 1e-9), 1.0, delta=1e-6)

    def test_mm1_unstable(self):
        """Test rejecting lam >= mu."""
        with self.assertRaises(QueueModelError):
            mm1_mean(0, 2.0, 2.0, 1.0)

    def test_mms_matches_resolvent(self):
        """Test the M/M/s mean below, at and above the server count."""
        params = MmsParams(lam=1.0, mu=1.0, servers=2)
        for initial in (0, 2, 5):
            oracle = queue_resolvent(params, initial, 1.0, 60)
            self.assertAlmostEqual(mms_mean(initial, params, 1.0), oracle.mean(), delta=1e-9,
                                   msg=f"initial={initial}")

    def test_mms_single_server(self):
        """Test that one server reproduces the M/M/1 mean."""
        params = MmsParams(lam=1.0, mu=2.0, servers=1)
        self.assertAlmostEqual(mms_mean(3, params, 0.7), mm1_mean(3, 1.0, 2.0, 0.7), places=12)

    def test_mms_unstable(self):
        """Test rejecting lam >= s mu."""
        with self.assertRaises(QueueModelError):
            mms_mean(0, MmsParams(lam=4.0, mu=1.0, servers=2), 1.0)


if __name__ == "__main__":
    unittest.main()
