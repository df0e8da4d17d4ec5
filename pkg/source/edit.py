"""
Editing trained models: cropping partitions out and extending the partition grid.

Cropping deletes the local sub-networks of the selected partitions, so the parameter count drops
by exactly one local sub-network per partition and the outputs on the remaining partitions stay
bitwise the same. Extension adds partitions at the upper end of each dimension and initializes
their local sub-networks by mirroring the existing ones at the old border:

    old factors (2, 3), new factors (2, 5)        source of each new column
        | a b c |  ->  | a b c c b |                  3 -> 2, 4 -> 1
"""
import logging
import numpy as np
import partition
from model import Model
from train import FreezeMask
from errors import CropError

LOGGER = logging.getLogger("lginr_logger")
MIRROR_MODES = ("reflect", "replicate")


def crop(model, drop):
    """
    Remove the local sub-networks of some partitions. Global and merge weights are kept.

    :param model: model.Model
    :param drop: iterable of flat partition indices, all present; at least one partition remains
    :return: new Model
    """
    drop = sorted({int(flat) for flat in drop})
    if not drop:
        return model.copy()
    present = model.present.without(drop)
    slots = model.present.slots_of(present.kept)
    local = [(weight[slots], bias[slots]) for weight, bias in model.local_weights]
    global_weights = [(weight.copy(), bias.copy()) for weight, bias in model.global_weights]
    merge = None if model.merge_weights is None else tuple(array.copy()
                                                           for array in model.merge_weights)
    cropped = Model(model.spec, local, global_weights, merge, present)
    LOGGER.info("Cropped %d partitions, %d of %d remain (%d -> %d parameters)", len(drop),
                present.kept_count, present.count, model.param_count, cropped.param_count)
    return cropped


def mirror_source(index, old_factor, mirror="reflect"):
    """
    Index of the old partition a new partition copies its weights from, along one dimension.
    reflect maps j >= C to 2 C - 1 - j (clamped at 0), replicate maps j >= C to C - 1.

        >>> mirror_source(np.array([7, 8, 9]), 8)
        array([7, 7, 6])

    :param index: int array of new partition indices along the dimension
    :param old_factor: old partition factor C
    :param mirror: "reflect" or "replicate"
    :return: int array of old indices in [0, C)
    """
    index = np.asarray(index, dtype=np.int64)
    if mirror == "replicate":
        return np.minimum(index, old_factor - 1)
    if mirror != "reflect":
        raise ValueError("Unknown mirror mode {!r}, choose from {}".format(mirror, MIRROR_MODES))
    source = index.copy()
    outside = source >= old_factor
    while np.any(outside):
        source[outside] = np.maximum(2 * old_factor - 1 - source[outside], 0)
        outside = source >= old_factor
    return source


def _extended_bounds(grid, new_factors, new_bounds, renormalize):
    bounds = grid.bounds
    if new_bounds is None:
        if renormalize:
            return bounds
        return partition.Bounds(bounds.mins, [low + delta * factor for low, delta, factor
                                              in zip(bounds.mins, grid.deltas, new_factors)])
    if new_bounds.dim != bounds.dim or new_bounds.mins != bounds.mins \
            or not new_bounds.contains(bounds):
        raise CropError("New bounds {} need to share the lower corner of and contain {}"
                        .format(new_bounds, bounds))
    deltas = [(high - low) / factor for low, high, factor
              in zip(new_bounds.mins, new_bounds.maxs, new_factors)]
    if not renormalize and not np.allclose(deltas, grid.deltas, rtol=1e-9, atol=0.0):
        # old partitions only keep their place if the partition size stays the same
        raise CropError("New bounds {} with factors {} change the partition size {} to {}"
                        .format(new_bounds, new_factors, grid.deltas, tuple(deltas)))
    return new_bounds


def extend(model, new_factors, new_bounds=None, mirror="reflect", renormalize=False):
    """
    Enlarge the partition grid. Old partitions keep their index vectors (they occupy the corner
    of the new grid at index 0), new ones get mirrored copies of old local sub-networks.

    By default the coordinate frame is kept and the bounds grow by whole partitions, so outputs on
    the old region are bitwise unchanged. With renormalize the old bounds are kept and cover the
    enlarged grid, partitions shrink and the weights have to adapt by fine-tuning.

    :param model: model.Model, uncropped
    :param new_factors: partition factors, at least the old ones in every dimension
    :param new_bounds: optional explicit bounds of the enlarged grid
    :param mirror: "reflect" or "replicate"
    :param renormalize: map the enlarged grid onto the old bounds
    :return: new Model
    """
    spec = model.spec
    old_grid = spec.grid
    new_factors = tuple(int(factor) for factor in new_factors)
    if mirror not in MIRROR_MODES:
        raise ValueError("Unknown mirror mode {!r}, choose from {}".format(mirror, MIRROR_MODES))
    if model.present.kept_count != model.present.count:
        raise CropError("Cannot extend a cropped model ({} of {} partitions present)"
                        .format(model.present.kept_count, model.present.count))
    if len(new_factors) != old_grid.dim or any(new < old for new, old
                                               in zip(new_factors, old_grid.factors)):
        raise CropError("New factors {} need to be at least the old factors {}"
                        .format(new_factors, old_grid.factors))
    if spec.kind == "siren" and new_factors != old_grid.factors:
        raise CropError("SIREN has a single partition and cannot be extended")
    if new_factors == old_grid.factors and new_bounds is None:
        LOGGER.warning("Partition factors %s unchanged, extension is a no-op", new_factors)
        return model.copy()
    grid = partition.PartitionGrid(_extended_bounds(old_grid, new_factors, new_bounds,
                                                    renormalize), new_factors)
    index = np.indices(new_factors).reshape(len(new_factors), -1)
    source = tuple(mirror_source(row, old, mirror) for row, old
                   in zip(index, old_grid.factors))
    source_flat = np.ravel_multi_index(source, old_grid.factors)
    local = [(weight[source_flat], bias[source_flat]) for weight, bias in model.local_weights]
    global_weights = [(weight.copy(), bias.copy()) for weight, bias in model.global_weights]
    merge = None if model.merge_weights is None else tuple(array.copy()
                                                           for array in model.merge_weights)
    extended = Model(spec.replace(grid=grid), local, global_weights, merge)
    LOGGER.info("Extended grid %s -> %s, bounds %s, %d parameters", old_grid.factors,
                new_factors, grid.bounds, extended.param_count)
    return extended


def extension_freeze_mask(model, old_factors):
    """
    Freeze mask marking the local sub-networks that existed before an extension.

    :param model: extended model.Model
    :param old_factors: partition factors before the extension
    :return: train.FreezeMask (global and merge weights stay trainable)
    """
    factors = model.spec.grid.factors
    if len(old_factors) != len(factors) or any(old > new for old, new
                                               in zip(old_factors, factors)):
        raise CropError("Old factors {} do not fit into {}".format(old_factors, factors))
    index = np.indices(factors).reshape(len(factors), -1)
    old = np.all(index < np.array(old_factors).reshape(-1, 1), axis=0)
    return FreezeMask(old)
