"""
Test everything from model.py: parameter accounting, initialization, forward passes and
reconstruction.
"""
import unittest
from unittest import mock
import numpy as np
from assertpy import assert_that
import test_baseclass
import tensors
import partition
import model
import signalio
from errors import CropError, PartitionError, ShapeError


def image_spec(kind, factors, local_hidden, global_hidden=0, in_dim=2):
    grid = partition.PartitionGrid(partition.Bounds.unit(in_dim), factors)
    return model.ModelSpec(kind, in_dim, 1, 5, local_hidden, global_hidden, grid=grid)


class ParamCountTest(test_baseclass.InrTest):
    """
    Parameter counts of the standard configurations, exact integers.
    """

    # pylint: disable=missing-docstring

    def test_image_configurations(self):
        self.assertEqual(model.param_count(model.ModelSpec("siren", 2, 1, 5, 256)), 198401)
        self.assertEqual(model.param_count(image_spec("spp", (16, 16), 15)), 199936)
        lgs = image_spec("lgs", (16, 16), 14, 84)
        self.assertEqual(model.param_count(lgs), 198930)
        self.assertEqual(model.local_param_count(lgs), 687)
        self.assertEqual(lgs.partition_count * model.local_param_count(lgs), 175872)
        self.assertEqual(model.global_subnetwork_param_count(lgs), 21672)
        self.assertEqual(model.merge_param_count(lgs), 1386)
        self.assertEqual(model.global_param_count(lgs), 23058)

    def test_audio_configurations(self):
        self.assertEqual(model.param_count(model.ModelSpec("siren", 1, 1, 5, 256)), 198145)
        self.assertEqual(model.param_count(image_spec("spp", (32,), 45, in_dim=1)), 203072)
        lgs = image_spec("lgs", (32,), 42, 72, in_dim=1)
        self.assertEqual(model.param_count(lgs), 198182)
        self.assertEqual(lgs.partition_count * model.local_param_count(lgs), 177440)
        self.assertEqual(model.global_param_count(lgs), 20742)

    def test_fc_add_merge_shape(self):
        spec = self.small_spec(merge_kind="fc_add")
        self.assertEqual(model.merge_shape(spec), (4, 3))
        self.assertEqual(model.merge_shape(self.small_spec()), (7, 3))
        self.assertIsNone(model.merge_shape(self.small_spec(kind="spp")))

    def test_global_ratio(self):
        ratio = model.global_ratio(image_spec("lgs", (16, 16), 14, 84))
        self.assertAlmostEqual(ratio, 23058 / 198930)
        self.assertEqual(model.global_ratio(image_spec("spp", (16, 16), 15)), 0)

    def test_cropped_count(self):
        lgs = image_spec("lgs", (16, 16), 14, 84)
        self.assertEqual(model.param_count(lgs, kept=1), 23745)


class SpecTest(test_baseclass.InrTest):
    """
    Validation of architecture descriptions.
    """

    # pylint: disable=missing-docstring

    def test_invalid_specs(self):
        with self.assertRaises(ValueError):
            model.ModelSpec("mlp", 2, 1)
        with self.assertRaises(ValueError):
            model.ModelSpec("siren", 2, 1, depth=1)
        with self.assertRaises(ValueError):
            self.small_spec(global_hidden=0)
        with self.assertRaises(ValueError):
            self.small_spec(merge_kind="sum")
        with self.assertRaises(PartitionError):
            model.ModelSpec("spp", 2, 1)
        with self.assertRaises(PartitionError):
            self.small_spec(kind="siren")

    def test_siren_defaults(self):
        spec = model.ModelSpec("siren", 2, 3)
        self.assertEqual(spec.partition_count, 1)
        self.assertEqual(spec.global_hidden, 0)
        self.assertEqual(spec.omega, 30.0)
        self.assertEqual(spec.merge_omega, 30.0)

    def test_replace_and_equality(self):
        spec = self.small_spec()
        self.assertEqual(spec, self.small_spec())
        self.assertEqual(hash(spec), hash(self.small_spec()))
        changed = spec.replace(local_hidden=5)
        self.assertNotEqual(spec, changed)
        self.assertEqual(changed.local_hidden, 5)


class CropMaskTest(test_baseclass.InrTest):
    """
    Slots of present partitions.
    """

    # pylint: disable=missing-docstring

    def test_slots(self):
        mask = model.CropMask([True, False, True, True])
        self.assertEqual(mask.kept_count, 3)
        self.assertEqual(mask.slots_of([0, 2, 3]).tolist(), [0, 1, 2])
        self.assertEqual(mask.dropped.tolist(), [1])
        with self.assertRaises(CropError):
            mask.slots_of([1])
        with self.assertRaises(PartitionError):
            mask.slots_of([4])

    def test_without(self):
        mask = model.CropMask.full(3).without([0, 2])
        self.assertEqual(mask.kept.tolist(), [1])
        with self.assertRaises(CropError):
            mask.without([1])
        with self.assertRaises(CropError):
            mask.without([0])


class InitTest(test_baseclass.InrTest):
    """
    SIREN initialization ranges and determinism.
    """

    # pylint: disable=missing-docstring

    def test_ranges(self):
        spec = self.small_spec(local_hidden=8, global_hidden=16)
        network = self.small_model(spec)
        first_weight = network.local_weights[0][0]
        assert_that(float(np.abs(first_weight).max())).is_less_than_or_equal_to(1 / 2)
        for weight, bias in network.local_weights[1:]:
            bound = np.sqrt(6 / weight.shape[1]) / 30
            assert_that(float(np.abs(weight).max())).is_less_than_or_equal_to(bound)
            self.assertFalse(bias.any())
        merge_weight = network.merge_weights[0]
        bound = np.sqrt(6 / merge_weight.shape[0]) / 30
        assert_that(float(np.abs(merge_weight).max())).is_less_than_or_equal_to(bound)

    def test_local_networks_differ(self):
        network = self.small_model(self.small_spec())
        weight = network.local_weights[0][0]
        self.assertFalse(np.array_equal(weight[0], weight[1]))

    def test_same_seed_same_model(self):
        first = self.small_model(self.small_spec(), seed=4).parameters()
        second = self.small_model(self.small_spec(), seed=4).parameters()
        self.assertEqual(list(first), list(second))
        for name in first:
            self.assertTrue(np.array_equal(first[name], second[name]))

    def test_parameter_names(self):
        names = list(self.small_model(self.small_spec()).parameters())
        self.assertEqual(names[:6], ["global.0.weight", "global.0.bias", "global.1.weight",
                                     "global.1.bias", "merge.weight", "merge.bias"])
        self.assertEqual(names[-1], "local.2.bias")

    def test_to_dtype(self):
        network = model.to_dtype(self.small_model(self.small_spec()), np.float64)
        self.assertEqual(network.dtype, np.float64)

    def test_inconsistent_weights(self):
        network = self.small_model(self.small_spec())
        params = network.parameters()
        params["local.0.weight"] = params["local.0.weight"][:, :1]
        with self.assertRaises(ShapeError):
            network.with_parameters(params)


class ForwardTest(test_baseclass.InrTest):
    """
    Forward passes of all three architectures.
    """

    # pylint: disable=missing-docstring

    def setUp(self):
        super().setUp()
        self.coords = signalio.grid_coords((9, 7))

    def check_batch_independence(self, network):
        ids = partition.partition_ids(network.spec.grid, self.coords)
        batch = model.forward(network, self.coords, ids)
        assert_that(batch.shape).is_equal_to((63, network.spec.out_dim))
        for index in range(0, 63, 5):
            single = model.forward(network, self.coords[index:index + 1], ids[index:index + 1])
            self.assertTrue(np.array_equal(batch[index:index + 1], single))
        shuffled = np.random.default_rng(0).permutation(63)
        self.assertTrue(np.array_equal(
            model.forward(network, self.coords[shuffled], ids[shuffled]), batch[shuffled]))

    def test_batch_independence(self):
        self.check_batch_independence(self.small_model(self.small_spec()))
        self.check_batch_independence(self.small_model(self.small_spec(merge_kind="fc_add")))
        self.check_batch_independence(self.small_model(self.small_spec(kind="spp", out_dim=3)))
        self.check_batch_independence(self.small_model(model.ModelSpec("siren", 2, 1, 3, 6)))

    def test_spp_partitions_are_independent(self):
        network = self.small_model(self.small_spec(kind="spp"))
        params = network.parameters()
        params["local.0.weight"] = params["local.0.weight"].copy()
        params["local.0.weight"][3] += 1.0
        changed = network.with_parameters(params)
        ids = partition.partition_ids(network.spec.grid, self.coords)
        before = model.forward(network, self.coords, ids)
        after = model.forward(changed, self.coords, ids)
        self.assertTrue(np.array_equal(before[ids != 3], after[ids != 3]))
        self.assertFalse(np.array_equal(before[ids == 3], after[ids == 3]))

    def test_lgs_local_path_is_local(self):
        for merge_kind in model.MERGE_KINDS:
            network = self.small_model(self.small_spec(merge_kind=merge_kind))
            params = network.parameters()
            params["local.1.weight"] = params["local.1.weight"].copy()
            params["local.1.weight"][2] += 0.5
            changed = network.with_parameters(params)
            ids = partition.partition_ids(network.spec.grid, self.coords)
            before = model.forward(network, self.coords, ids)
            after = model.forward(changed, self.coords, ids)
            self.assertTrue(np.array_equal(before[ids != 2], after[ids != 2]))
            self.assertFalse(np.array_equal(before[ids == 2], after[ids == 2]))

    def test_zero_weights_give_zero_output(self):
        for spec in (self.small_spec(), self.small_spec(merge_kind="fc_add"),
                     self.small_spec(kind="spp", out_dim=2), model.ModelSpec("siren", 2, 1, 3, 6)):
            network = self.small_model(spec)
            zeros = network.with_parameters({name: np.zeros_like(array)
                                             for name, array in network.parameters().items()})
            output = model.predict(zeros, self.coords)
            self.assertEqual(output.shape, (63, spec.out_dim))
            self.assertFalse(output.any())

    def test_wrong_ids(self):
        network = self.small_model(self.small_spec())
        ids = partition.partition_ids(network.spec.grid, self.coords)
        with self.assertRaises(PartitionError):
            model.forward(network, self.coords, (ids + 1) % 4)
        with self.assertRaises(ShapeError):
            model.forward(network, self.coords, ids[:-1])
        with self.assertRaises(PartitionError):
            model.forward(network, self.coords * 2, ids)

    def test_predict_in_chunks(self):
        network = self.small_model(self.small_spec())
        ids = partition.partition_ids(network.spec.grid, self.coords)
        expected = model.forward(network, self.coords, ids)
        with mock.patch.object(model, "FORWARD_CHUNK", 10):
            self.assertTrue(np.array_equal(model.predict(network, self.coords), expected))

    def test_reconstruct(self):
        network = self.small_model(self.small_spec())
        signal, dropped = model.reconstruct(network, (8, 8))
        self.assertEqual(signal.resolution, (8, 8))
        self.assertEqual(signal.values.shape, (8, 8, 1))
        self.assertEqual(dropped, [])
        expected = model.predict(network, signalio.grid_coords((8, 8)))
        self.assertTrue(np.array_equal(signal.flat_values(), np.clip(expected, -1, 1)))

    def test_reconstruct_subset(self):
        network = self.small_model(self.small_spec())
        full, _ = model.reconstruct(network, (8, 8))
        part, _ = model.reconstruct(network, (8, 8), partitions=[1])
        ids = partition.partition_ids(network.spec.grid, signalio.grid_coords((8, 8)))
        self.assertTrue(np.array_equal(part.flat_values()[ids == 1], full.flat_values()[ids == 1]))
        self.assertFalse(part.flat_values()[ids != 1].any())
        with self.assertRaises(PartitionError):
            model.reconstruct(network, (8, 8), partitions=[4])

    def test_local_block(self):
        network = self.small_model(self.small_spec())
        block = network.local_block(2)
        self.assertEqual(len(block), 3)
        self.assertTrue(np.array_equal(block[0][0], network.local_weights[0][0][2]))

    def test_copy_is_independent(self):
        network = self.small_model(self.small_spec())
        clone = network.copy()
        clone.local_weights[0][0][...] = 0
        self.assertTrue(network.local_weights[0][0].any())


class BackwardTest(test_baseclass.InrTest):
    """
    Loss convention of the backward pass; gradients are checked in test_gradients.
    """

    # pylint: disable=missing-docstring

    def test_loss_is_mean_over_values(self):
        network = self.small_model(self.small_spec(out_dim=2))
        coords = signalio.grid_coords((5, 5))
        ids = partition.partition_ids(network.spec.grid, coords)
        targets = tensors.uniform(tensors.Rng(1), -1, 1, (25, 2))
        _, loss = model.backward(network, coords, ids, targets)
        output = model.forward(network, coords, ids)
        self.assertAlmostEqual(loss, float(np.mean((output.astype(np.float64) - targets) ** 2)),
                               places=6)

    def test_reused_layout(self):
        network = self.small_model(self.small_spec())
        coords = signalio.grid_coords((5, 5))
        ids = partition.partition_ids(network.spec.grid, coords)
        targets = tensors.uniform(tensors.Rng(2), -1, 1, (25, 1))
        layout = model.PackedBatch(network.present, ids)
        grads, loss = model.backward(network, coords, ids, targets)
        reused, reused_loss = model.backward(network, coords, ids, targets, layout)
        self.assertEqual(loss, reused_loss)
        for name, grad in grads.items():
            self.assertTrue(np.array_equal(reused[name], grad), name)
        self.assertTrue(np.array_equal(model.forward(network, coords, ids, layout),
                                       model.forward(network, coords, ids)))
        with self.assertRaises(ShapeError):
            model.forward(network, coords[:-1], ids[:-1], layout)

    def test_zero_residual_gives_zero_gradients(self):
        network = self.small_model(self.small_spec(out_dim=2))
        coords = signalio.grid_coords((6, 6))
        ids = partition.partition_ids(network.spec.grid, coords)
        grads, loss = model.backward(network, coords, ids, model.forward(network, coords, ids))
        self.assertEqual(loss, 0.0)
        for name, grad in grads.items():
            self.assertFalse(grad.any(), name)

    def test_global_weights_learn_from_every_partition(self):
        network = self.small_model(self.small_spec())
        coords = signalio.grid_coords((6, 6))
        ids = partition.partition_ids(network.spec.grid, coords)
        for flat in range(network.spec.partition_count):
            inside = ids == flat
            grads, _ = model.backward(network, coords[inside], ids[inside],
                                      np.ones((int(inside.sum()), 1), np.float32))
            for name in ("global.0.weight", "global.1.weight", "merge.weight"):
                self.assertTrue(grads[name].any(), "{} from partition {}".format(name, flat))
            # local sub-networks of other partitions get nothing
            others = np.arange(network.spec.partition_count) != flat
            self.assertFalse(grads["local.0.weight"][others].any())

    def test_empty_batch(self):
        network = self.small_model(self.small_spec())
        with self.assertRaises(ShapeError):
            model.backward(network, np.zeros((0, 2), np.float32), np.zeros(0, np.int64),
                           np.zeros((0, 1), np.float32))


if __name__ == '__main__':
    unittest.main()
