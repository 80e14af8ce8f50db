"""
Unit tests for the conditional-law solver and the identity checks.
"""

import itertools
import math
import unittest

import numpy as np

from transient_queues.errors import TruncationError
from transient_queues.factorization import (
    solve_conditional_pmf,
    transient_pmf,
    verify_corollary_1,
    verify_corollary_2,
    verify_theorem_1,
    verify_theorem_2,
)
from transient_queues.factorization.engine import (
    BirthDeathLst,
    FunctionLst,
    GeneratorPassageLst,
    PreconditionError,
    PsiPowerLst,
)
from transient_queues.factorization.verification import DEFAULT_OMEGAS
from transient_queues.models.spec import BirthDeathSpec, MarkovPrpSpec, PmfMap, RateMap
from transient_queues.oracles.resolvent import level_resolvent
from transient_queues.transforms.core import mm1_busy_period_lst


def mm1(lam=1.0, mu=2.0, reflection=None):
    return MarkovPrpSpec(single_arrival=RateMap.constant(lam), service=RateMap.constant(mu),
                         reflection_level=reflection)


def batch_catastrophe(reflection=None):
    return MarkovPrpSpec(
        single_arrival=RateMap.constant(1.0),
        batch_rate=RateMap.constant(0.5),
        batch_sizes=PmfMap.fixed([0.5, 0.5]),
        service=RateMap.constant(2.0),
        catastrophe_rate=RateMap.constant(0.3),
        catastrophe_sizes=PmfMap.fixed([0.7, 0.3]),
        reflection_level=reflection,
    )


def batch_only(reflection=None):
    return MarkovPrpSpec(
        single_arrival=RateMap.constant(1.0),
        batch_rate=RateMap.constant(0.5),
        batch_sizes=PmfMap.fixed([0.5, 0.5]),
        service=RateMap.constant(2.0),
        reflection_level=reflection,
    )


def catastrophe_only(reflection=None):
    return MarkovPrpSpec(
        single_arrival=RateMap.constant(1.0),
        service=RateMap.constant(2.0),
        catastrophe_rate=RateMap.constant(0.3),
        catastrophe_sizes=PmfMap.fixed([0.7, 0.3]),
        reflection_level=reflection,
    )


SPECS = {"mm1": mm1, "batch": batch_only, "catastrophe": catastrophe_only, "combined": batch_catastrophe}


class TestConditionalSolver(unittest.TestCase):
    """Test cases for the forward-substitution solver."""

    def setUp(self):
        """Set up test fixtures."""
        self.psi = mm1_busy_period_lst(1.0, 2.0, 1.0)
        self.r = self.psi / 2.0

    def test_mm1_geometric_law(self):
        """Test c_k = (1 - r) r^k for the M/M/1 queue."""
        result = solve_conditional_pmf(mm1(), 0, 1.0, PsiPowerLst(1.0, 2.0), k_max=40)
        self.assertAlmostEqual(result.get(0), 0.7071068, places=7)
        self.assertAlmostEqual(result.get(1), 0.2071068, places=7)
        for k in range(41):
            self.assertAlmostEqual(result.get(k), (1.0 - self.r) * self.r ** k, delta=1e-14)
        self.assertAlmostEqual(result.total(), 1.0, places=12)
        self.assertEqual(result.get(41), 0.0)

    def test_disasters_law(self):
        """Test c_k = (2/3)(1/3)^k when every passage takes an Exp(1) time."""
        spec = MarkovPrpSpec(
            single_arrival=RateMap.constant(1.0),
            catastrophe_rate=RateMap.constant(1.0),
            catastrophe_sizes=PmfMap.clear_to(0),
        )
        phi = FunctionLst(lambda m, k, q: 1.0 / (1.0 + q))
        result = solve_conditional_pmf(spec, 0, 1.0, phi, k_max=40)
        for k in range(41):
            self.assertAlmostEqual(result.get(k), (2.0 / 3.0) * (1.0 / 3.0) ** k, delta=1e-14)

    def test_large_q_concentrates_at_zero(self):
        """Test c_0 -> 1 as q grows."""
        result = solve_conditional_pmf(mm1(), 0, 1e8, PsiPowerLst(1.0, 2.0), k_max=10)
        self.assertGreater(result.get(0), 1.0 - 1e-6)

    def test_independent_of_k_max(self):
        """Test that extending k_max does not change earlier masses."""
        spec = batch_catastrophe()
        phi = GeneratorPassageLst(spec, bottom=0, top=150)
        short = solve_conditional_pmf(spec, 0, 1.0, phi, k_max=30)
        long = solve_conditional_pmf(spec, 0, 1.0, phi, k_max=60)
        np.testing.assert_allclose(short.masses, long.masses[:31], atol=1e-15)

    def test_birth_death_transforms(self):
        """Test that birth-death and busy-period transforms give the same law."""
        chain = BirthDeathSpec(birth=RateMap.constant(1.0), death=RateMap.constant(2.0), truncation=200)
        first = solve_conditional_pmf(mm1(), 0, 1.0, BirthDeathLst(chain), k_max=40)
        second = solve_conditional_pmf(mm1(), 0, 1.0, PsiPowerLst(1.0, 2.0), k_max=40)
        np.testing.assert_allclose(first.masses, second.masses, atol=1e-12)

    def test_passage_top_sensitivity(self):
        """Test that raising the passage top is checked and a low top is reported."""
        psi = mm1_busy_period_lst(1.0, 2.0, 1.0)
        phi = GeneratorPassageLst(mm1(), bottom=0, top=150, checked_top=100)
        self.assertAlmostEqual(phi(3, 1, 1.0), psi ** 3, delta=1e-12)
        self.assertLess(phi.sensitivity, 1e-9)

        low = GeneratorPassageLst(mm1(), bottom=0, top=6, checked_top=6)
        with self.assertLogs("transient_queues.factorization.engine", level="WARNING"):
            low(3, 1, 1.0)
        self.assertGreater(low.sensitivity, 1e-6)

        unchecked = GeneratorPassageLst(mm1(), bottom=0, top=6, extension=0)
        unchecked(3, 1, 1.0)
        self.assertEqual(unchecked.sensitivity, 0.0)

    def test_complex_argument(self):
        """Test that the complex-q solution still sums to one."""
        result = solve_conditional_pmf(mm1(), 0, 1.0 + 2.0j, PsiPowerLst(1.0, 2.0), k_max=60)
        self.assertEqual(result.masses.dtype, np.complex128)
        self.assertLess(abs(result.total() - 1.0), 1e-10)

    def test_truncation_error(self):
        """Test that a k_max too small for the mass is detected."""
        with self.assertRaises(TruncationError):
            solve_conditional_pmf(mm1(), 0, 1.0, PsiPowerLst(1.0, 2.0), k_max=3)

    def test_reflected_spec_rejected(self):
        """Test that the solver refuses a reflected spec."""
        with self.assertRaises(PreconditionError):
            solve_conditional_pmf(mm1(reflection=0), 0, 1.0, PsiPowerLst(1.0, 2.0), k_max=10)


class TestInfimumLaw(unittest.TestCase):
    """Test cases for the running-infimum law from hitting transforms."""

    def test_free_infimum(self):
        """Test P(inf = l) = psi^(n0 - l) - psi^(n0 - l + 1)."""
        psi = mm1_busy_period_lst(1.0, 2.0, 1.0)
        masses = PsiPowerLst(1.0, 2.0).infimum_pmf(3, 1.0, bottom=-10)
        self.assertEqual(sorted(masses), list(range(-10, 4)))
        self.assertAlmostEqual(masses[3], 1.0 - psi, places=14)
        self.assertAlmostEqual(masses[0], psi ** 3 - psi ** 4, places=14)

    def test_reflected_infimum(self):
        """Test that the reflection level collects the remaining mass."""
        psi = mm1_busy_period_lst(1.0, 2.0, 1.0)
        masses = PsiPowerLst(1.0, 2.0).infimum_pmf(3, 1.0, bottom=-10, reflection_level=0)
        self.assertEqual(sorted(masses), [0, 1, 2, 3])
        self.assertAlmostEqual(masses[0], psi ** 3, places=14)
        self.assertAlmostEqual(sum(masses.values()), 1.0, places=14)


class TestTransientPmf(unittest.TestCase):
    """Test cases for the composed transient law."""

    def test_reflected_matches_resolvent(self):
        """Test the infimum decomposition against the resolvent."""
        spec = batch_catastrophe(reflection=0)
        phi = GeneratorPassageLst(spec, bottom=0, top=40 + 2 * 37)
        result = transient_pmf(spec, 3, 0.8, phi, k_max=37)
        oracle = level_resolvent(spec, 3, 0.8, 40)
        self.assertEqual(list(result.levels), list(range(41)))
        for level in range(41):
            self.assertAlmostEqual(result.get(level), oracle.get(level), delta=1e-9)

    def test_free_matches_resolvent(self):
        """Test the free M/M/1 process with an explicit bottom."""
        spec = mm1()
        result = transient_pmf(spec, 0, 1.0, PsiPowerLst(1.0, 2.0), k_max=40, bottom=-40)
        oracle = level_resolvent(spec, 0, 1.0, 40, bottom=-70)
        self.assertLess(abs(result.neglected), 1e-9)
        for level in range(-40, 41):
            self.assertAlmostEqual(result.get(level), oracle.get(level), delta=1e-9)

    def test_missing_bottom(self):
        """Test that a free model needs a bottom."""
        with self.assertRaises(PreconditionError):
            transient_pmf(mm1(), 0, 1.0, PsiPowerLst(1.0, 2.0), k_max=20)

    def test_initial_below_reflection(self):
        """Test rejecting an initial level below the reflection level."""
        with self.assertRaises(PreconditionError):
            transient_pmf(mm1(reflection=2), 1, 1.0, PsiPowerLst(1.0, 2.0), k_max=20)

    def test_bottom_too_high(self):
        """Test that neglected infimum mass above the tolerance is reported."""
        with self.assertRaises(TruncationError):
            transient_pmf(mm1(), 0, 1.0, PsiPowerLst(1.0, 2.0), k_max=40, bottom=-5)


class TestIdentities(unittest.TestCase):
    """Test cases for the identity checks."""

    def test_theorem_1(self):
        """Test the three computations of the conditional law agree on every jump structure."""
        for (name, build), level, q in itertools.product(SPECS.items(), (0, 1), (0.5, 1.0)):
            report = verify_theorem_1(build(), level, q, level + 2, 50)
            self.assertTrue(report.passed, msg=f"{name}, l={level}, q={q}: {report.to_dict()}")
            self.assertLess(report.max_deviation, 1e-8)

    def test_theorem_1_preconditions(self):
        """Test rejecting reflected specs and initial levels below the conditioning level."""
        with self.assertRaises(PreconditionError):
            verify_theorem_1(mm1(reflection=0), 0, 1.0, 2, 40)
        with self.assertRaises(PreconditionError):
            verify_theorem_1(mm1(), 3, 1.0, 2, 40)

    def test_theorem_2(self):
        """Test the free and reflected conditional laws agree."""
        report = verify_theorem_2(mm1(), 3, 1.0, 40)
        self.assertTrue(report.passed, report.to_dict())
        report = verify_theorem_2(batch_catastrophe(), 2, 0.5, 50)
        self.assertTrue(report.passed, report.to_dict())

    def test_theorem_2_levels(self):
        """Test rejecting conditioning levels above the initial level."""
        with self.assertRaises(PreconditionError):
            verify_theorem_2(mm1(), 2, 1.0, 40, levels=[3])

    def test_wiener_hopf(self):
        """Test the Wiener-Hopf factorization on skip-free and compound chains."""
        report = verify_corollary_1(mm1(), 1.0, 40)
        self.assertTrue(report.passed, report.to_dict())
        report = verify_corollary_1(batch_catastrophe(), 1.0, 50, depth=80)
        self.assertTrue(report.passed, report.to_dict())
        self.assertEqual(report.identity, "wiener-hopf")
        self.assertIn(report.details["worst_at"], DEFAULT_OMEGAS)

    def test_wiener_hopf_state_dependent(self):
        """Test rejecting level-dependent rates."""
        spec = MarkovPrpSpec(single_arrival=RateMap.constant(1.0), service=RateMap.linear(1.0, offset=-50))
        with self.assertRaises(PreconditionError):
            verify_corollary_1(spec, 1.0, 40)

    def test_reflected_factorization(self):
        """Test the reflected factorization at reflection levels 0 and 2."""
        for initial in (1, 2, 3):
            report = verify_corollary_2(mm1(reflection=0), initial, 1.0, 40)
            self.assertTrue(report.passed, msg=f"mm1, n0={initial}: {report.to_dict()}")
            report = verify_corollary_2(batch_catastrophe(reflection=0), initial, 0.5, 50)
            self.assertTrue(report.passed, msg=f"combined, n0={initial}: {report.to_dict()}")
        report = verify_corollary_2(mm1(reflection=2), 5, 1.0, 40)
        self.assertTrue(report.passed, report.to_dict())

    def test_reflected_factorization_preconditions(self):
        """Test rejecting free specs and initial levels below the reflection level."""
        with self.assertRaises(PreconditionError):
            verify_corollary_2(mm1(), 3, 1.0, 40)
        with self.assertRaises(PreconditionError):
            verify_corollary_2(mm1(reflection=2), 1, 1.0, 40)

    def test_report_fails_on_loose_model(self):
        """Test that a deliberately wrong transform fails theorem1."""
        wrong = FunctionLst(lambda m, k, q: 0.5 * mm1_busy_period_lst(1.0, 2.0, q) ** (m - k + 1))
        report = verify_theorem_1(mm1(), 0, 1.0, 0, 40, phi=wrong)
        self.assertFalse(report.passed)
        self.assertGreater(report.max_deviation, 1e-3)
        self.assertFalse(report.to_dict()["passed"])
        self.assertTrue(math.isfinite(report.max_deviation))


if __name__ == "__main__":
    unittest.main()
