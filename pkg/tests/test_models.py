"""
Unit tests for model specifications, truncated generators and model files.
"""

import os
import tempfile
import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from transient_queues.errors import TruncationError
from transient_queues.models.generator import (
    build_birth_death_generator,
    build_joint_inf_generator,
    build_level_generator,
)
from transient_queues.models.model_file import (
    ModelFileError,
    RbmModel,
    dumps_model,
    load_model,
    loads_model,
    save_model,
)
from transient_queues.models.spec import (
    BirthDeathSpec,
    MarkovPrpSpec,
    ModelError,
    PmfMap,
    RateMap,
    birth_death_to_prp,
    normalize_pmf,
)
from transient_queues.queues.mms import MmsParams


def disasters_spec():
    return MarkovPrpSpec(
        single_arrival=RateMap.constant(1.0),
        catastrophe_rate=RateMap.constant(1.0),
        catastrophe_sizes=PmfMap.clear_to(0),
        reflection_level=0,
    )


class TestRateMap(unittest.TestCase):
    """Test cases for level-indexed rates."""

    def test_forms(self):
        """Test evaluating each rate form."""
        self.assertEqual(RateMap.constant(2.0)(17), 2.0)

        array = RateMap.from_values([1.0, 2.0, 3.0], offset=1, fill=0.5)
        self.assertEqual(array(1), 1.0)
        self.assertEqual(array(3), 3.0)
        self.assertEqual(array(0), 0.5)
        self.assertEqual(array(10), 0.5)

        linear = RateMap.linear(1.5, offset=1)
        self.assertEqual(linear(3), 3.0)
        self.assertEqual(linear(0), 0.0)

        capped = RateMap.linear_capped(1.0, 3)
        self.assertEqual(capped(2), 2.0)
        self.assertEqual(capped(5), 3.0)

    def test_invalid_rates(self):
        """Test rejecting negative rates and malformed forms."""
        with self.assertRaises(ModelError):
            RateMap.constant(-1.0)
        with self.assertRaises(ModelError):
            RateMap.from_values([1.0, float("nan")])
        with self.assertRaises(ModelError):
            RateMap(form="linear-capped", rate=1.0)
        with self.assertRaises(ModelError):
            RateMap(form="quadratic")


class TestPmfMap(unittest.TestCase):
    """Test cases for jump-size distributions."""

    def test_fixed(self):
        """Test a fixed pmf at every level."""
        pmf = PmfMap.fixed([0.5, 0.5])
        self.assertEqual(pmf(0), (0.5, 0.5))
        self.assertEqual(pmf(9), (0.5, 0.5))

    def test_clear_to(self):
        """Test removal down to a floor."""
        pmf = PmfMap.clear_to(2)
        self.assertEqual(pmf(5), (0.0, 0.0, 1.0))
        self.assertEqual(pmf(2), (1.0,))

    def test_by_level(self):
        """Test level-specific pmfs with a default."""
        pmf = PmfMap.by_level({3: [0.2, 0.8]}, default=[1.0])
        self.assertEqual(pmf(3), (0.2, 0.8))
        self.assertEqual(pmf(4), (1.0,))

    def test_normalize_cuts_tail(self):
        """Test that negligible tail mass is cut and the rest renormalized."""
        masses = normalize_pmf([0.3, 0.7 - 1e-13, 1e-13])
        self.assertEqual(len(masses), 2)
        self.assertAlmostEqual(sum(masses), 1.0, places=15)

    def test_normalize_is_idempotent(self):
        """Test that a normalized pmf is returned unchanged."""
        masses = (0.25, 0.25, 0.5)
        self.assertEqual(normalize_pmf(masses), masses)
        self.assertEqual(normalize_pmf(normalize_pmf([0.1, 0.2, 0.7])), normalize_pmf([0.1, 0.2, 0.7]))

    def test_invalid_pmfs(self):
        """Test rejecting pmfs that do not sum to one or have negative mass."""
        with self.assertRaises(ModelError):
            PmfMap.fixed([0.5, 0.4])
        with self.assertRaises(ModelError):
            PmfMap.fixed([1.5, -0.5])
        with self.assertRaises(ModelError):
            PmfMap.fixed([])


class TestMarkovPrpSpec(unittest.TestCase):
    """Test cases for the PRP level-process specification."""

    def test_reflection_lumps_downward_moves(self):
        """Test that downward moves past the reflection level end at it."""
        spec = MarkovPrpSpec(
            service=RateMap.constant(2.0),
            catastrophe_rate=RateMap.constant(1.0),
            catastrophe_sizes=PmfMap.fixed([0.5, 0.5]),
            reflection_level=0,
        )
        self.assertEqual(spec.downward_moves(1), [(0, 3.0)])
        self.assertEqual(spec.downward_moves(0), [])
        self.assertEqual(spec.unreflected().downward_moves(1), [(-1, 0.5), (0, 2.5)])

    def test_upward_moves_merge_batches(self):
        """Test that single arrivals and batches to the same level add up."""
        spec = MarkovPrpSpec(
            single_arrival=RateMap.constant(1.0),
            batch_rate=RateMap.constant(0.5),
            batch_sizes=PmfMap.fixed([0.5, 0.5]),
        )
        self.assertEqual(spec.upward_moves(3), [(4, 1.25), (5, 0.25)])

    def test_state_independence(self):
        """Test detecting level-dependent rates."""
        constant = MarkovPrpSpec(single_arrival=RateMap.constant(1.0), service=RateMap.constant(2.0))
        self.assertTrue(constant.is_state_independent(range(-5, 6)))

        linear = MarkovPrpSpec(single_arrival=RateMap.constant(1.0), service=RateMap.linear(1.0))
        self.assertFalse(linear.is_state_independent(range(0, 6)))

        # Levels at or below the reflection level are not compared
        reflected = birth_death_to_prp(BirthDeathSpec(birth=RateMap.constant(1.0),
                                                      death=RateMap.constant(2.0)))
        self.assertTrue(reflected.is_state_independent(range(0, 10)))

    def test_birth_death_bounds(self):
        """Test rejecting an empty birth-death range."""
        with self.assertRaises(ModelError):
            BirthDeathSpec(birth=RateMap.constant(1.0), death=RateMap.constant(1.0), lower=3, upper=3)


class TestGenerators(unittest.TestCase):
    """Test cases for truncated generators."""

    def test_disasters_generator(self):
        """Test the generator of the chain with arrivals and clearing disasters."""
        generator = build_level_generator(disasters_spec(), (0, 3))
        expected = np.array([
            [-1.0, 1.0, 0.0, 0.0],
            [1.0, -2.0, 1.0, 0.0],
            [1.0, 0.0, -2.0, 1.0],
            [1.0, 0.0, 0.0, -1.0],
        ])
        np.testing.assert_allclose(generator.dense(), expected)
        self.assertFalse(generator.is_tridiagonal())

    def test_row_sums_vanish(self):
        """Test that rows sum to zero once escape is added back."""
        spec = MarkovPrpSpec(
            single_arrival=RateMap.constant(1.0),
            batch_rate=RateMap.constant(0.5),
            batch_sizes=PmfMap.fixed([0.5, 0.3, 0.2]),
            service=RateMap.constant(2.0),
            catastrophe_rate=RateMap.constant(0.3),
            catastrophe_sizes=PmfMap.fixed([0.7, 0.3]),
        )
        generator = build_level_generator(spec, (-10, 10), escape_tol=None)
        np.testing.assert_allclose(generator.row_defects(), 0.0, atol=1e-13)
        self.assertGreater(generator.escape[0], 0.0)
        self.assertEqual(generator.escape[-1], 0.0)

    @settings(max_examples=40, deadline=None)
    @given(
        arrival=st.floats(0.0, 5.0),
        batch=st.floats(0.0, 2.0),
        service=st.floats(0.0, 5.0),
        catastrophe=st.floats(0.0, 2.0),
        reflection=st.one_of(st.none(), st.integers(-3, 0)),
    )
    def test_row_sums_property(self, arrival, batch, service, catastrophe, reflection):
        """Test generator row sums and signs over random rates."""
        spec = MarkovPrpSpec(
            single_arrival=RateMap.constant(arrival),
            batch_rate=RateMap.constant(batch),
            batch_sizes=PmfMap.fixed([0.6, 0.4]),
            service=RateMap.constant(service),
            catastrophe_rate=RateMap.constant(catastrophe),
            catastrophe_sizes=PmfMap.fixed([0.5, 0.5]),
            reflection_level=reflection,
        )
        bottom = -3 if reflection is None else reflection
        generator = build_level_generator(spec, (bottom, 6), escape_tol=None)
        dense = generator.dense()
        np.testing.assert_allclose(generator.row_defects(), 0.0, atol=1e-12)
        off_diagonal = dense - np.diag(np.diag(dense))
        self.assertTrue(np.all(off_diagonal >= 0.0))
        self.assertTrue(np.all(np.diag(dense) <= 0.0))

    def test_escape_is_an_error_by_default(self):
        """Test that losing mass below the bottom fails construction."""
        spec = MarkovPrpSpec(single_arrival=RateMap.constant(1.0), service=RateMap.constant(2.0))
        with self.assertRaises(TruncationError):
            build_level_generator(spec, (0, 5))
        generator = build_level_generator(spec, (0, 5), escape_tol=None)
        self.assertEqual(generator.escape[0], 2.0)

    def test_reflection_level_must_be_bottom(self):
        """Test rejecting a truncation that disagrees with the reflection level."""
        with self.assertRaises(ModelError):
            build_level_generator(disasters_spec(), (1, 5))
        with self.assertRaises(ModelError):
            build_level_generator(disasters_spec(), (0, -1))

    def test_birth_death_matches_level_generator(self):
        """Test the tridiagonal builder against the PRP builder."""
        spec = BirthDeathSpec(birth=RateMap.constant(1.5), death=RateMap.linear(1.0), truncation=20)
        tridiagonal = build_birth_death_generator(spec)
        general = build_level_generator(birth_death_to_prp(spec), (0, 20))
        self.assertTrue(tridiagonal.is_tridiagonal())
        self.assertEqual(tridiagonal.labels, general.labels)
        np.testing.assert_allclose(tridiagonal.dense(), general.dense(), atol=1e-14)

    def test_joint_generator_pure_birth(self):
        """Test that the infimum coordinate never moves without downward jumps."""
        spec = MarkovPrpSpec(single_arrival=RateMap.constant(1.0))
        generator = build_joint_inf_generator(spec, 2, (0, 5))
        self.assertEqual(generator.size, 6 + 5 + 4)
        dense = generator.dense()
        row = generator.index_of((2, 2))
        self.assertEqual(dense[row, generator.index_of((3, 2))], 1.0)
        self.assertEqual(np.count_nonzero(dense[row]), 2)

    def test_joint_generator_updates_infimum(self):
        """Test that a downward move lowers the infimum coordinate."""
        spec = MarkovPrpSpec(single_arrival=RateMap.constant(1.0), service=RateMap.constant(1.0))
        generator = build_joint_inf_generator(spec, 2, (0, 4))
        dense = generator.dense()
        row = generator.index_of((2, 2))
        self.assertEqual(dense[row, generator.index_of((1, 1))], 1.0)
        self.assertEqual(dense[row, generator.index_of((3, 2))], 1.0)
        self.assertEqual(dense[generator.index_of((3, 1)), generator.index_of((2, 1))], 1.0)
        # Service from level 0 leaves the truncation
        self.assertEqual(generator.escape[generator.index_of((0, 0))], 1.0)
        np.testing.assert_allclose(generator.row_defects(), 0.0, atol=1e-14)

    def test_joint_generator_initial_outside(self):
        """Test rejecting an initial level outside the truncation."""
        spec = MarkovPrpSpec(single_arrival=RateMap.constant(1.0))
        with self.assertRaises(ModelError):
            build_joint_inf_generator(spec, 7, (0, 5))
        with self.assertRaises(ModelError):
            build_level_generator(spec, (0, 5)).index_of(9)


class TestModelFile(unittest.TestCase):
    """Test cases for YAML model files."""

    def setUp(self):
        """Set up test fixtures."""
        self.temp_dir = tempfile.TemporaryDirectory()

    def tearDown(self):
        """Tear down test fixtures."""
        self.temp_dir.cleanup()

    def test_parse_prp(self):
        """Test parsing every rate and pmf form."""
        model = loads_model(
            "type: prp\n"
            "reflection_level: 0\n"
            "single_arrival: 1.0\n"
            "batch_rate: {constant: 0.5}\n"
            "batch_sizes: [0.5, 0.5]\n"
            "service: {linear-capped: {rate: 1.0, servers: 3}}\n"
            "catastrophe_rate: [0.0, 0.2, 0.2]\n"
            "catastrophe_sizes: {clear-to: 0}\n"
        )
        self.assertIsInstance(model, MarkovPrpSpec)
        self.assertEqual(model.reflection_level, 0)
        self.assertEqual(model.single_arrival(7), 1.0)
        self.assertEqual(model.service(5), 3.0)
        self.assertEqual(model.catastrophe_rate(1), 0.2)
        self.assertEqual(model.catastrophe_rate(3), 0.0)
        self.assertEqual(model.catastrophe_sizes(2), (0.0, 1.0))

    def test_parse_queue_types(self):
        """Test parsing birth-death, mms, mmsk and rbm documents."""
        chain = loads_model("type: birth-death\nbirth: 1.0\ndeath: {linear: 1.0}\nupper: 10\n")
        self.assertIsInstance(chain, BirthDeathSpec)
        self.assertEqual(chain.top, 10)
        self.assertEqual(chain.death_rate(4), 4.0)

        self.assertEqual(loads_model("type: mms\nlam: 2.0\nmu: 1.0\nservers: 3\n"),
                         MmsParams(lam=2.0, mu=1.0, servers=3))
        self.assertEqual(loads_model("type: mmsk\nlam: 1.0\nmu: 1.0\nservers: 2\ncapacity: 5\n"),
                         MmsParams(lam=1.0, mu=1.0, servers=2, capacity=5))
        self.assertEqual(loads_model("type: rbm\nx0: 1.5\n"), RbmModel(x0=1.5))

    def test_round_trip(self):
        """Test that writing and reading a model gives it back."""
        models = [
            disasters_spec(),
            MarkovPrpSpec(
                single_arrival=RateMap.from_values([1.0, 0.5], offset=2, fill=0.25),
                batch_rate=RateMap.linear(0.1, offset=1),
                batch_sizes=PmfMap.by_level({0: [0.2, 0.8]}, default=[0.5, 0.5]),
                service=RateMap.linear_capped(1.0, 2),
            ),
            BirthDeathSpec(birth=RateMap.constant(1.0), death=RateMap.linear(2.0), upper=9),
            MmsParams(lam=2.0, mu=1.0, servers=3),
            MmsParams(lam=1.0, mu=1.0, servers=2, capacity=5),
            RbmModel(x0=0.5),
        ]
        for model in models:
            self.assertEqual(loads_model(dumps_model(model)), model)

    def test_save_and_load(self):
        """Test writing a model file to disk and loading it."""
        path = os.path.join(self.temp_dir.name, "model.yaml")
        save_model(disasters_spec(), path)
        self.assertEqual(load_model(path), disasters_spec())

    def test_load_missing_file(self):
        """Test loading a model file that does not exist."""
        with self.assertRaises(FileNotFoundError):
            load_model(os.path.join(self.temp_dir.name, "missing.yaml"))

    def test_schema_errors(self):
        """Test rejecting documents that violate the schema."""
        bad_documents = [
            "- 1\n- 2\n",
            "type: gg1\n",
            "type: prp\nservice: 1.0\narrival: 1.0\n",
            "type: prp\nservice: {quadratic: 1.0}\n",
            "type: prp\nservice: -1.0\n",
            "type: prp\nbatch_sizes: [0.5, 0.4]\n",
            "type: prp\nservice: true\n",
            "type: mmsk\nlam: 1.0\nmu: 1.0\nservers: 2\n",
            "type: mms\nlam: 1.0\nmu: 1.0\ncapacity: 4\n",
            "type: mms\nmu: 1.0\n",
            "type: mms\nlam: 1.0\nmu: 1.0\nservers: 0\n",
            "type: birth-death\nbirth: 1.0\n",
            "type: rbm\nx0: -1.0\n",
            "type: prp\nservice: [1.0\n",
        ]
        for text in bad_documents:
            with self.assertRaises(ModelFileError, msg=text):
                loads_model(text)

    def test_dump_rejects_callables(self):
        """Test that models with plain callables cannot be written."""
        spec = MarkovPrpSpec(single_arrival=lambda level: 1.0)
        with self.assertRaises(ModelFileError):
            dumps_model(spec)


if __name__ == "__main__":
    unittest.main()
