"""
Partition geometry of the input coordinate space and the automatic partitioning planner.

The coordinate space is bounded by an n dimensional hyperrectangle. Dimension i is split into C_i
equally sized partitions of size delta_i = (max_i - min_i) / C_i, giving K = prod(C_i) partitions.
A partition is addressed either by its index vector (P_0, ..., P_{n-1}) or by its flat index k,
the row-major linearization with the last dimension running fastest. The flat order is also the
order of the local blocks in a model file, so it must never change.

    >>> grid = PartitionGrid(Bounds.unit(2), (3, 2))
    >>> grid.locate((1.0, -1.0))
    (2, 0)
    >>> grid.flat_index((2, 1))
    5
"""
import logging
import numpy as np
from errors import PartitionError

LOGGER = logging.getLogger("lginr_logger")
BUDGET_TOLERANCE = 0.01
GLOBAL_RATIO_GUIDANCE = (0.05, 0.15)


class Bounds:
    """
    Per-dimension boundaries [min_i, max_i] of the coordinate space.
    """
    def __init__(self, mins, maxs):
        mins = tuple(float(value) for value in mins)
        maxs = tuple(float(value) for value in maxs)
        if len(mins) != len(maxs) or not mins:
            raise PartitionError("Bounds need equally many minima and maxima, got {} and {}"
                                 .format(len(mins), len(maxs)))
        for low, high in zip(mins, maxs):
            if not (np.isfinite(low) and np.isfinite(high) and low < high):
                raise PartitionError("Invalid boundary [{}, {}]".format(low, high))
        self.__mins = mins
        self.__maxs = maxs

    @classmethod
    def unit(cls, dim):
        """
        The normalized coordinate box (-1, 1)^dim.

        :param dim: number of dimensions
        :return: Bounds
        """
        return cls((-1.0,) * dim, (1.0,) * dim)

    @property
    def mins(self):
        """
        Lower boundary per dimension.
        :return: tuple of floats
        """
        return self.__mins

    @property
    def maxs(self):
        """
        Upper boundary per dimension.
        :return: tuple of floats
        """
        return self.__maxs

    @property
    def dim(self):
        """
        Number of dimensions n.
        :return:
        """
        return len(self.__mins)

    def contains(self, other):
        """
        Check whether other lies inside these bounds (inclusive).

        :param other: Bounds of the same dimension
        :return: bool
        """
        return other.dim == self.dim and all(
            low <= other_low and other_high <= high for low, high, other_low, other_high
            in zip(self.__mins, self.__maxs, other.mins, other.maxs))

    def __eq__(self, other):
        return isinstance(other, Bounds) and self.__mins == other.mins \
            and self.__maxs == other.maxs

    def __hash__(self):
        return hash((self.__mins, self.__maxs))

    def __repr__(self):
        return "Bounds({}, {})".format(self.__mins, self.__maxs)


class PartitionGrid:
    """
    Tiling of Bounds into prod(factors) equally sized, non-overlapping hyperrectangles.
    """
    def __init__(self, bounds, factors):
        factors = tuple(int(factor) for factor in factors)
        if len(factors) != bounds.dim:
            raise PartitionError("Need one partition factor per dimension ({}), got {}"
                                 .format(bounds.dim, factors))
        if any(factor < 1 for factor in factors):
            raise PartitionError("Partition factors need to be positive, got {}".format(factors))
        self.__bounds = bounds
        self.__factors = factors
        self.__deltas = tuple((high - low) / factor for low, high, factor
                              in zip(bounds.mins, bounds.maxs, factors))

    @property
    def bounds(self):
        """
        Bounds covered by the grid.
        :return:
        """
        return self.__bounds

    @property
    def factors(self):
        """
        Partition factors C_i.
        :return: tuple of ints
        """
        return self.__factors

    @property
    def deltas(self):
        """
        Partition size per dimension.
        :return: tuple of floats
        """
        return self.__deltas

    @property
    def dim(self):
        """
        Number of dimensions n.
        :return:
        """
        return len(self.__factors)

    @property
    def count(self):
        """
        Total number of partitions K.
        :return:
        """
        return int(np.prod(self.__factors))

    def locate(self, point):
        """
        See locate.
        """
        return locate(self, point)

    def flat_index(self, index):
        """
        See flat_index.
        """
        return flat_index(self, index)

    def unflatten(self, flat):
        """
        See unflatten.
        """
        return unflatten(self, flat)

    def __eq__(self, other):
        return isinstance(other, PartitionGrid) and self.__bounds == other.bounds \
            and self.__factors == other.factors

    def __hash__(self):
        return hash((self.__bounds, self.__factors))

    def __repr__(self):
        return "PartitionGrid({!r}, factors={})".format(self.__bounds, self.__factors)


def partition_ids(grid, coords):
    """
    Vectorized coordinate to flat partition index mapping.
    P_i = floor((p_i - min_i) / delta_i), clamped to [0, C_i - 1] so points on the upper boundary
    belong to the last partition.

    :param grid: PartitionGrid
    :param coords: array of shape (N, n)
    :return: int64 array of N flat indices
    """
    coords = np.asarray(coords)
    if coords.dtype != np.float32:
        coords = coords.astype(np.float64)
    if coords.ndim != 2 or coords.shape[1] != grid.dim:
        raise PartitionError("Coordinates need shape (N, {}), got {}".format(grid.dim,
                                                                               coords.shape))
    mins = np.array(grid.bounds.mins)
    maxs = np.array(grid.bounds.maxs)
    # bounds are compared at the precision of the coordinates
    outside = np.any((coords < mins.astype(coords.dtype)) | (coords > maxs.astype(coords.dtype))
                     | ~np.isfinite(coords), axis=1)
    if np.any(outside):
        raise PartitionError("Coordinate {} lies outside of {}".format(
            coords[np.argmax(outside)].tolist(), grid.bounds))
    index = np.floor((coords - mins) / np.array(grid.deltas)).astype(np.int64)
    np.clip(index, 0, np.array(grid.factors) - 1, out=index)
    return np.ravel_multi_index(tuple(index.T), grid.factors)


def locate(grid, point):
    """
    Map a single coordinate vector to its partition index vector.

    :param grid: PartitionGrid
    :param point: sequence of n coordinates inside the bounds (inclusive)
    :return: tuple (P_0, ..., P_{n-1})
    """
    flat = partition_ids(grid, np.asarray(point, dtype=np.float64).reshape(1, -1))[0]
    return unflatten(grid, flat)


def flat_index(grid, index):
    """
    Row-major linearization of a partition index vector, last dimension fastest.

    :param grid: PartitionGrid
    :param index: sequence (P_0, ..., P_{n-1}) with 0 <= P_i < C_i
    :return: int k in [0, K)
    """
    index = tuple(int(value) for value in index)
    if len(index) != grid.dim or any(not 0 <= value < factor
                                     for value, factor in zip(index, grid.factors)):
        raise PartitionError("Partition index {} out of range for factors {}"
                             .format(index, grid.factors))
    return int(np.ravel_multi_index(index, grid.factors))


def unflatten(grid, flat):
    """
    Inverse of flat_index.

    :param grid: PartitionGrid
    :param flat: int k in [0, K)
    :return: tuple (P_0, ..., P_{n-1})
    """
    if not 0 <= int(flat) < grid.count:
        raise PartitionError("Flat partition index {} out of range [0, {})".format(flat,
                                                                                   grid.count))
    return tuple(int(value) for value in np.unravel_index(int(flat), grid.factors))


def check_coverage(grid, coords):
    """
    Make sure every partition receives at least one of the given coordinates. A partition factor
    larger than the signal resolution leaves partitions empty, which cannot be trained.

    :param grid: PartitionGrid
    :param coords: array of shape (N, n), usually all grid coordinates of a signal
    :return: int64 array of length K with the number of coordinates per partition
    """
    counts = np.bincount(partition_ids(grid, coords), minlength=grid.count)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise PartitionError("{} of {} partitions receive no signal samples (first empty: {}); "
                             "partition factors {} are too fine for the signal"
                             .format(empty.size, grid.count, unflatten(grid, empty[0]),
                                     grid.factors))
    return counts


class PartitionPlan:
    """
    Result of the automatic partitioning planner.
    """
    def __init__(self, factors, local_hidden, global_hidden, predicted_total_params,
                 predicted_global_params=0):
        self.factors = tuple(factors)
        self.local_hidden = local_hidden
        self.global_hidden = global_hidden
        self.predicted_total_params = predicted_total_params
        self.predicted_global_params = predicted_global_params

    @property
    def global_ratio(self):
        """
        Share of global weights (global sub-network and merge) in the planned network.
        :return:
        """
        return self.predicted_global_params / self.predicted_total_params

    def __repr__(self):
        return "PartitionPlan(factors={}, local_hidden={}, global_hidden={}, params={})".format(
            self.factors, self.local_hidden, self.global_hidden, self.predicted_total_params)


def compute_num_groups(signal_resolution, target_partition_size):
    """
    Partition factors that give partitions of at most the target size: ceil(resolution / size).

    :param signal_resolution: samples per dimension
    :param target_partition_size: samples per partition and dimension
    :return: tuple of factors
    """
    if len(signal_resolution) != len(target_partition_size):
        raise PartitionError("Resolution {} and partition size {} differ in dimension"
                             .format(signal_resolution, target_partition_size))
    if any(size < 1 for size in target_partition_size) or any(res < 1
                                                             for res in signal_resolution):
        raise PartitionError("Resolution and partition size need to be positive")
    return tuple(-(-int(res) // int(size)) for res, size
                 in zip(signal_resolution, target_partition_size))


def find_dimension(target_weight_count, weight_count):
    """
    Binary search for the largest hidden dimension whose weight count does not exceed the target.

    :param target_weight_count: weight budget
    :param weight_count: monotone function hidden dimension -> number of weights
    :return: hidden dimension >= 1, or 0 if even dimension 1 exceeds the budget
    """
    if weight_count(1) > target_weight_count:
        return 0
    low, high = 1, 2
    while weight_count(high) <= target_weight_count:
        low, high = high, high * 2
    while high - low > 1:
        middle = (low + high) // 2
        if weight_count(middle) <= target_weight_count:
            low = middle
        else:
            high = middle
    return low


def auto_partition(target_total_params, target_global_ratio, target_partition_size,
                   signal_resolution, depth=5, out_dim=1, merge_kind="concat_fc"):
    """
    Determine partition factors and hidden dimensions of a Local-Global SIREN for a parameter
    budget. The global hidden dimension is searched for the requested global share first, the local
    one for the remainder; then the global dimension is moved one step at a time until the total
    is within 1% of the target.

    :param target_total_params: requested total number of parameters
    :param target_global_ratio: requested share of the global sub-network, e.g. 0.11
    :param target_partition_size: samples per partition and dimension, e.g. (32, 32)
    :param signal_resolution: samples per dimension, e.g. (512, 512)
    :param depth: number of local layers D
    :param out_dim: number of signal channels m
    :param merge_kind: "concat_fc" or "fc_add"
    :return: PartitionPlan
    """
    # pylint: disable=too-many-arguments,too-many-locals,import-outside-toplevel,cyclic-import
    #   model depends on this module for its geometry; counting needs model.
    import model

    if not 0 < target_global_ratio < 1:
        raise PartitionError("Global ratio needs to be in (0, 1), got {}"
                             .format(target_global_ratio))
    factors = compute_num_groups(signal_resolution, target_partition_size)
    grid = PartitionGrid(Bounds.unit(len(factors)), factors)

    def spec_for(local_hidden, global_hidden):
        return model.ModelSpec(kind="lgs", in_dim=grid.dim, out_dim=out_dim, depth=depth,
                               local_hidden=local_hidden, global_hidden=global_hidden,
                               merge_kind=merge_kind, grid=grid)

    def global_weights(global_hidden):
        return model.global_subnetwork_param_count(spec_for(1, global_hidden))

    global_hidden = find_dimension(target_total_params * target_global_ratio, global_weights)
    if global_hidden < 1:
        raise PartitionError("Target of {} parameters is too small for a global sub-network"
                             .format(target_total_params))
    target_local_weights = target_total_params - global_weights(global_hidden)
    local_hidden = find_dimension(
        target_local_weights,
        lambda hidden: model.param_count(spec_for(hidden, global_hidden))
        - global_weights(global_hidden))
    if local_hidden < 1:
        raise PartitionError("Target of {} parameters leaves no room for {} local sub-networks"
                             .format(target_total_params, grid.count))

    total = model.param_count(spec_for(local_hidden, global_hidden))
    visited = set()
    while abs(total - target_total_params) > BUDGET_TOLERANCE * target_total_params:
        if global_hidden in visited:
            raise PartitionError("Cannot reach {} parameters within 1% (oscillating around "
                                 "global dimension {})".format(target_total_params,
                                                               global_hidden))
        visited.add(global_hidden)
        global_hidden += -1 if total > target_total_params else 1
        if global_hidden < 1:
            raise PartitionError("Cannot reach {} parameters within 1% with positive dimensions"
                                 .format(target_total_params))
        total = model.param_count(spec_for(local_hidden, global_hidden))

    spec = spec_for(local_hidden, global_hidden)
    plan = PartitionPlan(factors, local_hidden, global_hidden, total,
                         model.global_param_count(spec))
    LOGGER.info("Planned %s (global ratio %.3f)", plan, plan.global_ratio)
    if not GLOBAL_RATIO_GUIDANCE[0] <= plan.global_ratio <= GLOBAL_RATIO_GUIDANCE[1]:
        LOGGER.warning("Global weights take %.1f%% of the network, outside the suggested "
                       "5-15%% band", 100 * plan.global_ratio)
    return plan
