"""
Test the fitting loop from train.py: sampling, AdamW, freezing, determinism and failure modes.
"""
import unittest
from unittest import mock
import numpy as np
from assertpy import assert_that
import test_baseclass
import tensors
import partition
import model
import metrics
import signalio
import train
from errors import DivergenceError, PartitionError, ShapeError


def constant_image(value, size=16):
    return signalio.Signal((size, size), 1, np.full((size, size, 1), value))


class SamplingTest(test_baseclass.InrTest):
    """
    Batches with equally many coordinates per partition.
    """

    # pylint: disable=missing-docstring

    def setUp(self):
        super().setUp()
        self.signal = self.random_image(64, 64)
        self.grid = partition.PartitionGrid(partition.Bounds.unit(2), (4, 4))

    def test_full_grid(self):
        coords, ids, targets = train.sample_batch(self.signal, self.grid, 1.0, tensors.Rng(0))
        self.assertEqual(coords.shape, (4096, 2))
        self.assertEqual(len(np.unique(coords, axis=0)), 4096)
        self.assertTrue(np.array_equal(targets, self.signal.flat_values()))
        self.assertTrue(np.array_equal(ids, partition.partition_ids(self.grid, coords)))

    def test_fraction(self):
        coords, ids, targets = train.sample_batch(self.signal, self.grid, 0.25, tensors.Rng(0))
        self.assertEqual(coords.shape, (1024, 2))
        self.assertEqual(np.bincount(ids, minlength=16).tolist(), [64] * 16)
        self.assertEqual(len(np.unique(coords, axis=0)), 1024)
        self.assertTrue(np.array_equal(ids, partition.partition_ids(self.grid, coords)))
        lookup = {tuple(point): value for point, value
                  in zip(signalio.grid_coords((64, 64)).tolist(), self.signal.flat_values())}
        for point, value in zip(coords.tolist(), targets):
            self.assertTrue(np.array_equal(lookup[tuple(point)], value))

    def test_unequal_partitions(self):
        signal = self.random_image(10, 13)
        grid = partition.PartitionGrid(partition.Bounds.unit(2), (3, 3))
        full = partition.check_coverage(grid, signalio.grid_coords((10, 13)))
        _, ids, _ = train.sample_batch(signal, grid, 0.5, tensors.Rng(2))
        counts = np.bincount(ids, minlength=9)
        self.assertEqual(counts.tolist(), [int(0.5 * full.min())] * 9)

    def test_cropped_partitions_skipped(self):
        present = model.CropMask.full(16).without([0, 5])
        _, ids, _ = train.sample_batch(self.signal, self.grid, 0.5, tensors.Rng(0), present)
        self.assertEqual(set(ids.tolist()), set(range(16)) - {0, 5})

    def test_seeded(self):
        first = train.sample_batch(self.signal, self.grid, 0.1, tensors.Rng(9))[0]
        second = train.sample_batch(self.signal, self.grid, 0.1, tensors.Rng(9))[0]
        self.assertTrue(np.array_equal(first, second))

    def test_empty_batch(self):
        with self.assertRaises(ShapeError):
            train.sample_batch(self.signal, self.grid, 0.001, tensors.Rng(0))

    def test_too_fine_grid(self):
        grid = partition.PartitionGrid(partition.Bounds.unit(2), (8, 8))
        with self.assertRaises(PartitionError):
            train.sample_batch(self.random_image(4, 4), grid, 1.0, tensors.Rng(0))


class AdamWTest(test_baseclass.InrTest):
    """
    Single optimizer steps.
    """

    # pylint: disable=missing-docstring

    def setUp(self):
        super().setUp()
        self.params = {"local.0.weight": np.array([[0.5, -2.0]]),
                       "global.0.weight": np.array([[1.0]])}
        self.state = train.OptimizerState.zeros(self.params)

    def step(self, grads, **config):
        config = train.TrainConfig(**dict(dict(iters=1, lr=0.1), **config))
        return train.adamw_step(self.params, grads, self.state, config)

    def test_zero_gradient_keeps_weights(self):
        zeros = {name: np.zeros_like(array) for name, array in self.params.items()}
        updated, state = self.step(zeros)
        for name, array in self.params.items():
            self.assertTrue(np.array_equal(updated[name], array))
        self.assertEqual(state.step, 1)

    def test_first_step_moves_by_learning_rate(self):
        ones = {name: np.ones_like(array) for name, array in self.params.items()}
        updated, _ = self.step(ones)
        for name, array in self.params.items():
            np.testing.assert_allclose(updated[name] - array, -0.1, rtol=1e-6)

    def test_weight_decay(self):
        zeros = {name: np.zeros_like(array) for name, array in self.params.items()}
        updated, _ = self.step(zeros, weight_decay=0.01)
        for name, array in self.params.items():
            np.testing.assert_allclose(updated[name], array * (1 - 0.1 * 0.01), rtol=1e-12)

    def test_group_learning_rates(self):
        ones = {name: np.ones_like(array) for name, array in self.params.items()}
        updated, _ = self.step(ones, local_lr=0.01, global_lr=0.2)
        np.testing.assert_allclose(updated["local.0.weight"] - self.params["local.0.weight"],
                                   -0.01, rtol=1e-6)
        np.testing.assert_allclose(updated["global.0.weight"] - self.params["global.0.weight"],
                                   -0.2, rtol=1e-6)

    def test_frozen_entries(self):
        ones = {name: np.ones_like(array) for name, array in self.params.items()}
        config = train.TrainConfig(iters=1, lr=0.1)
        masks = {"local.0.weight": np.array([[True, False]]), "global.0.weight": np.True_}
        updated, state = train.adamw_step(self.params, ones, self.state, config, masks)
        self.assertEqual(updated["local.0.weight"][0, 0], 0.5)
        self.assertNotEqual(updated["local.0.weight"][0, 1], -2.0)
        self.assertEqual(state.first["local.0.weight"][0, 0], 0)
        self.assertTrue(np.array_equal(updated["global.0.weight"], self.params["global.0.weight"]))

    def test_non_finite_gradient(self):
        grads = {name: np.full_like(array, np.nan) for name, array in self.params.items()}
        with self.assertRaises(DivergenceError):
            self.step(grads)

    def test_invalid_config(self):
        with self.assertRaises(ValueError):
            train.TrainConfig(iters=1, lr=0)
        with self.assertRaises(ValueError):
            train.TrainConfig(iters=1, lr=1e-3, sample_fraction=0)
        with self.assertRaises(ValueError):
            train.TrainConfig(iters=-1, lr=1e-3)


class FitTest(test_baseclass.InrTest):
    """
    Complete fitting runs on small signals.
    """

    # pylint: disable=missing-docstring

    def setUp(self):
        super().setUp()
        self.spec = self.small_spec(local_hidden=8, global_hidden=8)
        self.network = self.small_model(self.spec, seed=1)

    def test_zero_iterations(self):
        trained, history = train.fit(self.network, self.random_image(),
                                     train.TrainConfig(iters=0, lr=1e-3))
        self.assertEqual(len(history), 0)
        for name, array in self.network.parameters().items():
            self.assertTrue(np.array_equal(trained.parameters()[name], array))

    def test_constant_signal(self):
        signal = constant_image(0.5)
        trained, history = train.fit(self.network, signal,
                                     train.TrainConfig(iters=300, lr=1e-3, log_every=100))
        decoded, _ = model.reconstruct(trained, signal.resolution)
        assert_that(metrics.mse(signal, decoded)).is_less_than(1e-3)
        self.assertEqual([record["iteration"] for record in history.records], [100, 200, 300])
        assert_that(history.final_loss).is_less_than(history.records[0]["loss"])
        assert_that(history.seconds).is_greater_than(0)

    def test_reproducible(self):
        config = train.TrainConfig(iters=5, lr=1e-3, sample_fraction=0.5, seed=3)
        first, _ = train.fit(self.network, self.random_image(), config)
        second, _ = train.fit(self.network, self.random_image(), config)
        for name, array in first.parameters().items():
            self.assertTrue(np.array_equal(second.parameters()[name], array))

    def test_packed_layout_built_once(self):
        config = train.TrainConfig(iters=5, lr=1e-3, sample_fraction=0.5, seed=3)
        expected, _ = train.fit(self.network, self.random_image(), config)
        with mock.patch("train.PackedBatch", wraps=model.PackedBatch) as packed:
            trained, _ = train.fit(self.network, self.random_image(), config)
        self.assertEqual(packed.call_count, 1)
        for name, array in expected.parameters().items():
            self.assertTrue(np.array_equal(trained.parameters()[name], array))

    def test_input_untouched(self):
        before = {name: array.copy() for name, array in self.network.parameters().items()}
        train.fit(self.network, self.random_image(), train.TrainConfig(iters=2, lr=1e-3))
        for name, array in self.network.parameters().items():
            self.assertTrue(np.array_equal(before[name], array))

    def test_frozen_partitions(self):
        mask = train.FreezeMask([True, False, False, True], merge=True)
        trained, _ = train.fit(self.network, self.random_image(),
                               train.TrainConfig(iters=3, lr=1e-3), mask)
        for name, array in self.network.parameters().items():
            updated = trained.parameters()[name]
            if name.startswith("local."):
                self.assertTrue(np.array_equal(updated[[0, 3]], array[[0, 3]]))
                self.assertFalse(np.array_equal(updated[[1, 2]], array[[1, 2]]))
            elif name.startswith("merge."):
                self.assertTrue(np.array_equal(updated, array))
        self.assertFalse(np.array_equal(trained.parameters()["global.0.weight"],
                                        self.network.parameters()["global.0.weight"]))

    def test_history_records(self):
        _, history = train.fit(self.network, self.random_image(),
                               train.TrainConfig(iters=5, lr=1e-3, log_every=2))
        self.assertEqual([record["iteration"] for record in history.records], [2, 4, 5])
        record = history.records[-1]
        self.assertAlmostEqual(record["mse"], record["loss"] / 4)
        self.assertAlmostEqual(record["psnr"], metrics.psnr_from_mse(record["mse"]))

    def test_divergence_reports_iteration(self):
        grads = {name: np.zeros_like(array) for name, array in self.network.parameters().items()}
        with mock.patch("train.backward", return_value=(grads, float("nan"))):
            with self.assertRaises(DivergenceError) as context:
                train.fit(self.network, self.random_image(), train.TrainConfig(iters=3, lr=1e-3))
        self.assertEqual(context.exception.iteration, 0)

    def test_signal_shape_mismatch(self):
        signal = signalio.Signal((32,), 1, np.zeros(32))
        with self.assertRaises(ShapeError):
            train.fit(self.network, signal, train.TrainConfig(iters=1, lr=1e-3))

    def test_single_partition_grid(self):
        network = self.small_model(self.small_spec(factors=(1, 1)))
        trained, history = train.fit(network, self.random_image(),
                                     train.TrainConfig(iters=3, lr=1e-3))
        self.assertEqual(len(history), 1)
        self.assertEqual(trained.param_count, network.param_count)

    def test_too_fine_grid(self):
        network = self.small_model(self.small_spec(factors=(8, 8)))
        with self.assertRaises(PartitionError):
            train.fit(network, self.random_image(4, 4), train.TrainConfig(iters=1, lr=1e-3))


if __name__ == '__main__':
    unittest.main()
