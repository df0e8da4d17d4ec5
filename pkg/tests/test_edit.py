"""
Test cropping and extending trained models from edit.py.
"""
import unittest
import numpy as np
from assertpy import assert_that
import test_baseclass
import tensors
import partition
import model
import signalio
import edit
import train
from errors import CropError


class CropTest(test_baseclass.InrTest):
    """
    Removing local sub-networks.
    """

    # pylint: disable=missing-docstring

    def setUp(self):
        super().setUp()
        self.network = self.small_model(self.small_spec(factors=(4, 4)))

    def test_empty_drop_is_a_copy(self):
        cropped = edit.crop(self.network, [])
        self.assertEqual(cropped.param_count, self.network.param_count)
        self.assertEqual(cropped.present, self.network.present)
        cropped.local_weights[0][0][...] = 0
        self.assertTrue(self.network.local_weights[0][0].any())

    def test_parameter_counts_of_large_model(self):
        grid = partition.PartitionGrid(partition.Bounds.unit(2), (16, 16))
        spec = model.ModelSpec("lgs", 2, 1, 5, 14, 84, grid=grid)
        network = self.small_model(spec)
        self.assertEqual(edit.crop(network, range(1, 256)).param_count, 23745)
        self.assertEqual(edit.crop(network, range(64)).param_count, 154962)

    def test_kept_partitions_reconstruct_bitwise(self):
        drop = [0, 5, 6, 15]
        cropped = edit.crop(self.network, drop)
        self.assertEqual(cropped.param_count,
                         self.network.param_count - 4 * model.local_param_count(cropped.spec))
        full, _ = model.reconstruct(self.network, (16, 16))
        part, dropped = model.reconstruct(cropped, (16, 16))
        self.assertEqual(dropped, drop)
        ids = partition.partition_ids(cropped.spec.grid, signalio.grid_coords((16, 16)))
        kept = ~np.isin(ids, drop)
        self.assertTrue(np.array_equal(part.flat_values()[kept], full.flat_values()[kept]))
        self.assertFalse(part.flat_values()[~kept].any())

    def test_global_weights_untouched(self):
        cropped = edit.crop(self.network, [3])
        for name, array in self.network.parameters().items():
            if not name.startswith("local."):
                self.assertTrue(np.array_equal(cropped.parameters()[name], array))
        self.assertTrue(np.array_equal(cropped.local_block(4)[0][0],
                                       self.network.local_block(4)[0][0]))

    def test_crop_twice(self):
        once = edit.crop(self.network, [1, 2])
        twice = edit.crop(once, [7])
        self.assertEqual(twice.present.dropped.tolist(), [1, 2, 7])
        self.assertEqual(twice.param_count, edit.crop(self.network, [1, 2, 7]).param_count)
        with self.assertRaises(CropError):
            edit.crop(once, [1])

    def test_invalid_drops(self):
        with self.assertRaises(CropError):
            edit.crop(self.network, range(16))
        with self.assertRaises(CropError):
            edit.crop(self.network, [16])


class MirrorTest(test_baseclass.InrTest):
    """
    Source partitions of new partitions.
    """

    # pylint: disable=missing-docstring

    def test_reflect(self):
        self.assertEqual(edit.mirror_source(np.arange(12), 8).tolist(),
                         [0, 1, 2, 3, 4, 5, 6, 7, 7, 6, 5, 4])
        self.assertEqual(edit.mirror_source(np.arange(6), 2).tolist(), [0, 1, 1, 0, 0, 0])

    def test_replicate(self):
        self.assertEqual(edit.mirror_source(np.arange(5), 3, "replicate").tolist(),
                         [0, 1, 2, 2, 2])

    def test_unknown_mode(self):
        with self.assertRaises(ValueError):
            edit.mirror_source(np.arange(3), 2, "wrap")


class ExtendTest(test_baseclass.InrTest):
    """
    Enlarging the partition grid.
    """

    # pylint: disable=missing-docstring

    def test_mirrored_local_networks(self):
        network = self.small_model(self.small_spec(factors=(16, 8)))
        extended = edit.extend(network, (16, 16))
        grid = extended.spec.grid
        self.assertEqual(grid.factors, (16, 16))
        self.assertEqual(extended.present.count, 256)
        old = network.spec.grid
        for row in range(16):
            for new_col, old_col in ((3, 3), (8, 7), (9, 6), (15, 0)):
                for (new_w, new_b), (old_w, old_b) in zip(
                        extended.local_block(grid.flat_index((row, new_col))),
                        network.local_block(old.flat_index((row, old_col)))):
                    self.assertTrue(np.array_equal(new_w, old_w))
                    self.assertTrue(np.array_equal(new_b, old_b))
        self.assertEqual(extended.param_count,
                         network.param_count + 128 * model.local_param_count(network.spec))

    def test_bounds_grow_by_whole_partitions(self):
        network = self.small_model(self.small_spec())
        extended = edit.extend(network, (2, 4))
        self.assertEqual(extended.spec.grid.bounds, partition.Bounds((-1.0, -1.0), (1.0, 3.0)))
        np.testing.assert_allclose(extended.spec.grid.deltas, network.spec.grid.deltas)

    def test_old_region_outputs_bitwise(self):
        network = self.small_model(self.small_spec())
        extended = edit.extend(network, (2, 4), partition.Bounds((-1.0, -1.0), (1.0, 3.0)))
        coords = signalio.grid_coords((16, 16))
        self.assertTrue(np.array_equal(model.predict(extended, coords),
                                       model.predict(network, coords)))
        # the old upper border now lies in a new partition mirrored from its neighbour
        border = np.array([[0.3, 1.0]], dtype=np.float32)
        self.assertEqual(extended.spec.grid.locate(border[0]), (1, 2))
        self.assertTrue(np.array_equal(model.predict(extended, border),
                                       model.predict(network, border)))

    def test_renormalize(self):
        network = self.small_model(self.small_spec())
        extended = edit.extend(network, (2, 4), renormalize=True)
        self.assertEqual(extended.spec.grid.bounds, network.spec.grid.bounds)
        np.testing.assert_allclose(extended.spec.grid.deltas, (1.0, 0.5))

    def test_replicate(self):
        network = self.small_model(self.small_spec(factors=(1, 2)))
        extended = edit.extend(network, (1, 4), mirror="replicate")
        for col in (2, 3):
            self.assertTrue(np.array_equal(extended.local_block(col)[0][0],
                                           network.local_block(1)[0][0]))

    def test_global_weights_copied(self):
        network = self.small_model(self.small_spec())
        extended = edit.extend(network, (3, 2))
        for name, array in network.parameters().items():
            if not name.startswith("local."):
                self.assertTrue(np.array_equal(extended.parameters()[name], array))

    def test_noop_warns(self):
        network = self.small_model(self.small_spec())
        with self.assertLogs("lginr_logger", level="WARNING"):
            same = edit.extend(network, (2, 2))
        self.assertEqual(same.spec, network.spec)

    def test_invalid_extensions(self):
        network = self.small_model(self.small_spec())
        with self.assertRaises(CropError):
            edit.extend(network, (1, 2))
        with self.assertRaises(CropError):
            edit.extend(network, (2, 2, 2))
        with self.assertRaises(CropError):
            edit.extend(edit.crop(network, [0]), (2, 4))
        with self.assertRaises(CropError):
            edit.extend(network, (2, 4), partition.Bounds((0.0, -1.0), (1.0, 3.0)))
        with self.assertRaises(CropError):
            edit.extend(network, (2, 4), partition.Bounds((-1.0, -1.0), (0.5, 3.0)))
        with self.assertRaises(ValueError):
            edit.extend(network, (2, 4), mirror="wrap")
        siren = self.small_model(model.ModelSpec("siren", 2, 1, 3, 4))
        with self.assertRaises(CropError):
            edit.extend(siren, (2, 1))

    def test_explicit_bounds_keep_partition_size(self):
        network = self.small_model(self.small_spec(factors=(2,)))
        with self.assertRaises(CropError):
            edit.extend(network, (4,), partition.Bounds((-1.0,), (2.0,)))
        extended = edit.extend(network, (4,), partition.Bounds((-1.0,), (3.0,)))
        np.testing.assert_allclose(extended.spec.grid.deltas, (1.0,))
        renormalized = edit.extend(network, (4,), partition.Bounds((-1.0,), (2.0,)),
                                   renormalize=True)
        np.testing.assert_allclose(renormalized.spec.grid.deltas, (0.75,))

    def test_uneven_partition_sizes_train_and_reconstruct(self):
        # partition sizes 2/7 and 2/11 give upper bounds float32 cannot represent
        config = train.TrainConfig(iters=2, lr=1e-3, log_every=1)
        network = edit.extend(self.small_model(self.small_spec(factors=(7,))), (12,))
        values = tensors.uniform(tensors.Rng(4), -1.0, 1.0, (48, 1), np.float64)
        trained, history = train.fit(network, signalio.Signal((48,), 1, values), config)
        self.assertEqual(len(history), 2)
        signal, dropped = model.reconstruct(trained, (48,))
        self.assertEqual(signal.values.shape, (48, 1))
        self.assertEqual(dropped, [])

        network = edit.extend(self.small_model(self.small_spec(factors=(11, 2))), (13, 2))
        coords = signalio.grid_coords((26, 4), network.spec.grid.bounds)
        self.assertTrue(np.all(coords.astype(np.float64) <= network.spec.grid.bounds.maxs))
        self.assertEqual(partition.partition_ids(network.spec.grid, coords).max(), 25)
        signal, _ = model.reconstruct(network, (26, 4))
        self.assertEqual(signal.resolution, (26, 4))
        trained, _ = train.fit(network, self.random_image(26, 4), config)
        self.assertEqual(trained.param_count, network.param_count)

    def test_freeze_mask(self):
        network = edit.extend(self.small_model(self.small_spec()), (2, 3))
        mask = edit.extension_freeze_mask(network, (2, 2))
        self.assertEqual(mask.local.tolist(), [True, True, False, True, True, False])
        assert_that(mask.global_weights).is_false()
        with self.assertRaises(CropError):
            edit.extension_freeze_mask(network, (3, 2))


if __name__ == '__main__':
    unittest.main()
