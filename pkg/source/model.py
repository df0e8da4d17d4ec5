"""
Sine activated coordinate networks: SIREN, SIREN-per-Partition (spp) and Local-Global SIREN (lgs).

Layer convention: activations are row vectors, a layer computes sin(omega * (x . W + b)) with W of
shape (fan_in, fan_out). The last local layer is linear and emits the signal values.

Local-Global SIREN wiring for depth D:

    for layer 1 .. D-1:
        L = sin(omega (x_l . W_l[layer, k] + b))      # local sub-network of partition k
        G = sin(omega (x_g . W_g[layer] + b))         # global sub-network, shared
        x_l = Merge(L, G)                             # shared merge weights, every layer
        x_g = G
    output = x_l . W_l[D, k] + b

    concat_fc:  Merge(L, G) = sin(omega_m ([L | G] . W_m + b_m))
    fc_add:     Merge(L, G) = L + sin(omega_m (G . W_m + b_m))

SIREN is handled as a single partition network without global path, spp as K independent
networks without global path. Local weights of all partitions are stored as stacks (batch axis
first) and evaluated with the batched kernel: coordinates are grouped by partition and padded to
equal length, padded rows never reach outputs or gradients.
"""
import logging
import numpy as np
import tensors
import partition
import signalio
from errors import CropError, ShapeError, PartitionError

LOGGER = logging.getLogger("lginr_logger")
KINDS = ("siren", "spp", "lgs")
MERGE_KINDS = ("concat_fc", "fc_add")
DEFAULT_OMEGA = 30.0
FORWARD_CHUNK = 1 << 16


class ModelSpec:
    """
    Architecture description. Depth counts the local layers including the linear output layer;
    the global sub-network has depth - 1 layers.
    """
    def __init__(self, kind, in_dim, out_dim, depth=5, local_hidden=256, global_hidden=0,
                 omega=DEFAULT_OMEGA, merge_kind="concat_fc", grid=None, merge_omega=None):
        # pylint: disable=too-many-arguments
        if kind not in KINDS:
            raise ValueError("Unknown architecture {!r}, choose from {}".format(kind, KINDS))
        if in_dim < 1 or out_dim < 1:
            raise ValueError("Input and output dimension need to be positive")
        if depth < 2:
            raise ValueError("Depth needs to be at least 2, got {}".format(depth))
        if local_hidden < 1:
            raise ValueError("Hidden dimension needs to be positive, got {}".format(local_hidden))
        if kind == "lgs" and global_hidden < 1:
            raise ValueError("Local-Global SIREN needs a positive global hidden dimension")
        if not omega > 0 or (merge_omega is not None and not merge_omega > 0):
            raise ValueError("Omega needs to be positive")
        if merge_kind not in MERGE_KINDS:
            raise ValueError("Unknown merge operator {!r}, choose from {}"
                             .format(merge_kind, MERGE_KINDS))
        if grid is None:
            if kind != "siren":
                raise PartitionError("Architecture {} needs a partition grid".format(kind))
            grid = partition.PartitionGrid(partition.Bounds.unit(in_dim), (1,) * in_dim)
        if grid.dim != in_dim:
            raise PartitionError("Grid has {} dimensions, input has {}".format(grid.dim, in_dim))
        if kind == "siren" and grid.count != 1:
            raise PartitionError("SIREN covers the signal with a single network, got factors {}"
                                 .format(grid.factors))
        self.__kind = kind
        self.__in_dim = int(in_dim)
        self.__out_dim = int(out_dim)
        self.__depth = int(depth)
        self.__local_hidden = int(local_hidden)
        self.__global_hidden = int(global_hidden) if kind == "lgs" else 0
        self.__omega = float(omega)
        self.__merge_kind = merge_kind
        self.__merge_omega = float(omega if merge_omega is None else merge_omega)
        self.__grid = grid

    @property
    def kind(self):
        """
        One of "siren", "spp", "lgs".
        :return:
        """
        return self.__kind

    @property
    def in_dim(self):
        """
        Coordinate dimension n.
        :return:
        """
        return self.__in_dim

    @property
    def out_dim(self):
        """
        Signal channels m.
        :return:
        """
        return self.__out_dim

    @property
    def depth(self):
        """
        Number of local layers D, output layer included.
        :return:
        """
        return self.__depth

    @property
    def local_hidden(self):
        """
        Hidden dimension of the local sub-networks (of the whole network for SIREN).
        :return:
        """
        return self.__local_hidden

    @property
    def global_hidden(self):
        """
        Hidden dimension of the global sub-network, 0 unless kind is lgs.
        :return:
        """
        return self.__global_hidden

    @property
    def omega(self):
        """
        Sine frequency of all layers.
        :return:
        """
        return self.__omega

    @property
    def merge_omega(self):
        """
        Sine frequency inside the merge operator, equal to omega unless configured otherwise.
        :return:
        """
        return self.__merge_omega

    @property
    def merge_kind(self):
        """
        One of "concat_fc", "fc_add" (only used by lgs).
        :return:
        """
        return self.__merge_kind

    @property
    def grid(self):
        """
        PartitionGrid of the model (a single partition for SIREN).
        :return:
        """
        return self.__grid

    @property
    def partition_count(self):
        """
        Number of local sub-networks K.
        :return:
        """
        return self.__grid.count

    def replace(self, **changes):
        """
        Copy of this spec with some fields changed.

        :param changes: keyword arguments of the constructor
        :return: ModelSpec
        """
        fields = dict(kind=self.kind, in_dim=self.in_dim, out_dim=self.out_dim, depth=self.depth,
                      local_hidden=self.local_hidden, global_hidden=self.global_hidden,
                      omega=self.omega, merge_kind=self.merge_kind, grid=self.grid,
                      merge_omega=self.merge_omega)
        fields.update(changes)
        return ModelSpec(**fields)

    def __key(self):
        return (self.kind, self.in_dim, self.out_dim, self.depth, self.local_hidden,
                self.global_hidden, self.omega, self.merge_kind, self.merge_omega, self.grid)

    def __eq__(self, other):
        # pylint: disable=protected-access
        return isinstance(other, ModelSpec) and self.__key() == other.__key()

    def __hash__(self):
        return hash(self.__key())

    def __repr__(self):
        return ("ModelSpec(kind={}, n={}, m={}, depth={}, local_hidden={}, global_hidden={}, "
                "omega={}, merge={}, factors={})").format(
                    self.kind, self.in_dim, self.out_dim, self.depth, self.local_hidden,
                    self.global_hidden, self.omega, self.merge_kind, self.grid.factors)


class CropMask:
    """
    Which partitions still own a local sub-network. The i-th kept partition (in flat order) owns
    slot i of the local weight stacks.
    """
    def __init__(self, bitmap):
        bitmap = np.array(bitmap, dtype=bool).reshape(-1)
        if not bitmap.any():
            raise CropError("At least one partition needs to remain")
        self.__bitmap = bitmap
        self.__slots = np.cumsum(bitmap) - 1

    @classmethod
    def full(cls, count):
        """
        Mask with all count partitions present.
        :param count: number of partitions K
        :return: CropMask
        """
        return cls(np.ones(count, dtype=bool))

    @property
    def bitmap(self):
        """
        Copy of the K booleans.
        :return:
        """
        return self.__bitmap.copy()

    @property
    def count(self):
        """
        Number of partitions K, cropped ones included.
        :return:
        """
        return self.__bitmap.size

    @property
    def kept_count(self):
        """
        Number of present partitions.
        :return:
        """
        return int(self.__bitmap.sum())

    @property
    def kept(self):
        """
        Flat indices of the present partitions, ascending.
        :return:
        """
        return np.flatnonzero(self.__bitmap)

    @property
    def dropped(self):
        """
        Flat indices of the cropped partitions, ascending.
        :return:
        """
        return np.flatnonzero(~self.__bitmap)

    def is_present(self, flat):
        """
        :param flat: flat partition index
        :return: bool
        """
        return 0 <= flat < self.count and bool(self.__bitmap[flat])

    def slots_of(self, ids):
        """
        Map flat partition indices to slots of the local weight stacks.

        :param ids: int array of flat indices
        :return: int array of slots
        """
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.count):
            raise PartitionError("Partition id out of range [0, {})".format(self.count))
        missing = ~self.__bitmap[ids]
        if np.any(missing):
            raise CropError("Partition {} has been cropped".format(int(ids[np.argmax(missing)])))
        return self.__slots[ids]

    def without(self, drop):
        """
        Mask with the given partitions removed.

        :param drop: iterable of flat indices, all present
        :return: CropMask
        """
        bitmap = self.bitmap
        for flat in drop:
            if not self.is_present(flat):
                raise CropError("Partition {} is not present and cannot be cropped".format(flat))
            bitmap[flat] = False
        return CropMask(bitmap)

    def __eq__(self, other):
        return isinstance(other, CropMask) and np.array_equal(self.__bitmap, other.bitmap)

    def __hash__(self):
        return hash(self.__bitmap.tobytes())

    def __repr__(self):
        return "CropMask({}/{} present)".format(self.kept_count, self.count)


def local_layer_shapes(spec):
    """
    (fan_in, fan_out) of every local layer.

    :param spec: ModelSpec
    :return: list of D tuples
    """
    dims = [spec.in_dim] + [spec.local_hidden] * (spec.depth - 1) + [spec.out_dim]
    return list(zip(dims[:-1], dims[1:]))


def global_layer_shapes(spec):
    """
    (fan_in, fan_out) of every global layer; empty unless kind is lgs.

    :param spec: ModelSpec
    :return: list of D - 1 tuples
    """
    if spec.kind != "lgs":
        return []
    dims = [spec.in_dim] + [spec.global_hidden] * (spec.depth - 1)
    return list(zip(dims[:-1], dims[1:]))


def merge_shape(spec):
    """
    (fan_in, fan_out) of the merge layer, None unless kind is lgs.

    :param spec: ModelSpec
    :return:
    """
    if spec.kind != "lgs":
        return None
    if spec.merge_kind == "concat_fc":
        return spec.local_hidden + spec.global_hidden, spec.local_hidden
    return spec.global_hidden, spec.local_hidden


def local_param_count(spec):
    """
    Parameters of one local sub-network: (n h + h) + (D - 2)(h^2 + h) + (h m + m).
    """
    return sum(fan_in * fan_out + fan_out for fan_in, fan_out in local_layer_shapes(spec))


def global_subnetwork_param_count(spec):
    """
    Parameters of the global sub-network alone: (n h_g + h_g) + (D - 2)(h_g^2 + h_g).
    """
    return sum(fan_in * fan_out + fan_out for fan_in, fan_out in global_layer_shapes(spec))


def merge_param_count(spec):
    """
    Parameters of the shared merge layer.
    """
    shape = merge_shape(spec)
    return 0 if shape is None else shape[0] * shape[1] + shape[1]


def global_param_count(spec):
    """
    Global weights: global sub-network plus merge operator, the part that can never be cropped.
    """
    return global_subnetwork_param_count(spec) + merge_param_count(spec)


def param_count(spec, kept=None):
    """
    Total parameters of a network with the given spec.

    :param spec: ModelSpec
    :param kept: number of present local sub-networks, defaults to all K
    :return: int
    """
    kept = spec.partition_count if kept is None else kept
    return kept * local_param_count(spec) + global_param_count(spec)


def global_ratio(spec):
    """
    Share of global weights in the uncropped network.
    """
    return global_param_count(spec) / param_count(spec)


class Model:
    """
    Realized weights of a ModelSpec.

    Fields:
        local_weights = list of D (W, b) pairs, W of shape (kept, fan_in, fan_out), b (kept, 1, fan_out)
        global_weights = list of D - 1 (W, b) pairs, W of shape (fan_in, fan_out), b (1, fan_out)
        merge_weights = (W, b) or None
        present = CropMask
    """
    def __init__(self, spec, local_weights, global_weights=(), merge_weights=None, present=None):
        self.__spec = spec
        self.__present = CropMask.full(spec.partition_count) if present is None else present
        self.__local = [(weight, bias) for weight, bias in local_weights]
        self.__global = [(weight, bias) for weight, bias in global_weights]
        self.__merge = None if merge_weights is None else tuple(merge_weights)
        self.check_consistency()

    @property
    def spec(self):
        """
        ModelSpec this model realizes.
        :return:
        """
        return self.__spec

    @property
    def present(self):
        """
        CropMask of the local sub-networks.
        :return:
        """
        return self.__present

    @property
    def local_weights(self):
        """
        :return: list of (W stack, b stack)
        """
        return self.__local

    @property
    def global_weights(self):
        """
        :return: list of (W, b)
        """
        return self.__global

    @property
    def merge_weights(self):
        """
        :return: (W, b) or None
        """
        return self.__merge

    @property
    def dtype(self):
        """
        Floating point type of all weights.
        :return: numpy dtype
        """
        return self.__local[0][0].dtype

    @property
    def param_count(self):
        """
        Parameters actually held, cropped partitions excluded.
        :return:
        """
        return param_count(self.__spec, self.__present.kept_count)

    def check_consistency(self):
        """
        Validate all shapes against the ModelSpec and the crop mask.
        :return: nothing, raises ShapeError
        """
        spec = self.__spec
        kept = self.__present.kept_count
        if self.__present.count != spec.partition_count:
            raise ShapeError("Crop mask covers {} partitions, spec has {}"
                             .format(self.__present.count, spec.partition_count))
        expected = [((kept, fan_in, fan_out), (kept, 1, fan_out))
                    for fan_in, fan_out in local_layer_shapes(spec)]
        expected += [((fan_in, fan_out), (1, fan_out)) for fan_in, fan_out
                     in global_layer_shapes(spec)]
        shape = merge_shape(spec)
        if shape is not None:
            expected.append((shape, (1, shape[1])))
        actual = [(weight.shape, bias.shape) for weight, bias in self.__local + self.__global]
        if self.__merge is not None:
            actual.append((self.__merge[0].shape, self.__merge[1].shape))
        if actual != expected:
            raise ShapeError("Weights {} do not fit {} (expected {})".format(actual, spec,
                                                                            expected))
        dtypes = {array.dtype for array in self.parameters().values()}
        if len(dtypes) != 1 or next(iter(dtypes)).type not in tensors.FLOAT_TYPES:
            raise ShapeError("All weights need one float type, got {}".format(dtypes))

    def parameters(self):
        """
        All weight arrays by name, in a fixed order. Gradients and optimizer moments use the same
        names.

        :return: dict name -> array
        """
        params = {}
        for layer, (weight, bias) in enumerate(self.__global):
            params["global.{}.weight".format(layer)] = weight
            params["global.{}.bias".format(layer)] = bias
        if self.__merge is not None:
            params["merge.weight"], params["merge.bias"] = self.__merge
        for layer, (weight, bias) in enumerate(self.__local):
            params["local.{}.weight".format(layer)] = weight
            params["local.{}.bias".format(layer)] = bias
        return params

    def with_parameters(self, params, spec=None, present=None):
        """
        New model with the given arrays, names as in parameters().

        :param params: dict name -> array
        :param spec: replacement spec (default: same)
        :param present: replacement crop mask (default: same)
        :return: Model
        """
        spec = self.__spec if spec is None else spec
        local = [(params["local.{}.weight".format(layer)], params["local.{}.bias".format(layer)])
                 for layer in range(spec.depth)]
        global_weights = [(params["global.{}.weight".format(layer)],
                           params["global.{}.bias".format(layer)])
                          for layer in range(len(global_layer_shapes(spec)))]
        merge = (params["merge.weight"], params["merge.bias"]) if spec.kind == "lgs" else None
        return Model(spec, local, global_weights, merge,
                     self.__present if present is None else present)

    def copy(self):
        """
        Deep copy.
        :return: Model
        """
        return self.with_parameters({name: array.copy()
                                     for name, array in self.parameters().items()})

    def local_block(self, flat):
        """
        Weights of the local sub-network of one partition.

        :param flat: flat partition index
        :return: list of D (W, b) pairs
        """
        slot = int(self.__present.slots_of([flat])[0])
        return [(weight[slot], bias[slot]) for weight, bias in self.__local]


def _init_bound(fan_in, first, omega):
    if first:
        return 1.0 / fan_in
    return np.sqrt(6.0 / fan_in) / omega


def init_model(spec, rng, dtype=np.float32):
    """
    SIREN initialization: first layer U(-1/fan_in, 1/fan_in), deeper layers (merge and output
    included) U(-sqrt(6/fan_in)/omega, sqrt(6/fan_in)/omega), zero biases. Every local sub-network
    gets its own draws. Draw order: local layers, global layers, merge.

    :param spec: ModelSpec
    :param rng: tensors.Rng
    :param dtype: float32 (default) or float64
    :return: Model
    """
    count = spec.partition_count
    local = []
    for layer, (fan_in, fan_out) in enumerate(local_layer_shapes(spec)):
        bound = _init_bound(fan_in, layer == 0, spec.omega)
        local.append((tensors.uniform(rng, -bound, bound, (count, fan_in, fan_out), dtype),
                      np.zeros((count, 1, fan_out), dtype=dtype)))
    global_weights = []
    for layer, (fan_in, fan_out) in enumerate(global_layer_shapes(spec)):
        bound = _init_bound(fan_in, layer == 0, spec.omega)
        global_weights.append((tensors.uniform(rng, -bound, bound, (fan_in, fan_out), dtype),
                               np.zeros((1, fan_out), dtype=dtype)))
    merge = None
    shape = merge_shape(spec)
    if shape is not None:
        bound = _init_bound(shape[0], False, spec.merge_omega)
        merge = (tensors.uniform(rng, -bound, bound, shape, dtype),
                 np.zeros((1, shape[1]), dtype=dtype))
    LOGGER.debug("Initialized %s with %d parameters", spec, param_count(spec))
    return Model(spec, local, global_weights, merge)


def to_dtype(model, dtype):
    """
    Same model with all weights cast, e.g. to float64 for gradient checks.

    :param model: Model
    :param dtype: numpy float type
    :return: Model
    """
    return model.with_parameters({name: array.astype(dtype)
                                  for name, array in model.parameters().items()})


class PackedBatch:
    """
    Coordinates grouped by partition and padded to the largest group, so all present local
    sub-networks run in one batched product. The layout only depends on the partition ids, so a
    training loop drawing the same id pattern every step builds it once.

    Fields:
        slots = local stack slots taking part, ascending
        valid = (len(slots), width) booleans marking real rows
    """
    def __init__(self, present, ids):
        self.ids = np.array(ids, dtype=np.int64).reshape(-1)
        self.present = present
        slots = present.slots_of(self.ids)
        self.size = slots.size
        self.__order = np.argsort(slots, kind="stable")
        self.slots, starts, counts = np.unique(slots[self.__order], return_index=True,
                                               return_counts=True)
        self.__group = np.repeat(np.arange(self.slots.size), counts)
        self.__position = np.arange(self.size) - starts[self.__group]
        self.width = int(counts.max()) if counts.size else 0
        self.valid = np.zeros((self.slots.size, self.width), dtype=bool)
        self.valid[self.__group, self.__position] = True

    def fits(self, present, ids):
        """
        Whether this layout was built for the given crop mask and partition ids.
        """
        return present == self.present and np.array_equal(ids, self.ids)

    def pack(self, rows):
        """
        (N, f) rows -> (groups, width, f) padded stack.
        """
        stack = np.zeros((self.slots.size, self.width) + rows.shape[1:], dtype=rows.dtype)
        stack[self.__group, self.__position] = rows[self.__order]
        return stack

    def unpack(self, stack):
        """
        (groups, width, f) padded stack -> (N, f) rows in the original order.
        """
        rows = np.empty((self.size,) + stack.shape[2:], dtype=stack.dtype)
        rows[self.__order] = stack[self.__group, self.__position]
        return rows


def _dense(stack, weight):
    rows = stack.reshape(-1, stack.shape[-1])
    return tensors.matmul(rows, weight).reshape(stack.shape[:-1] + (weight.shape[1],))


def _transposed(stack):
    return np.swapaxes(stack, 1, 2)


def _check_inputs(model, coords, ids):
    coords = np.asarray(coords, dtype=model.dtype)
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if coords.ndim != 2 or coords.shape[1] != model.spec.in_dim:
        raise ShapeError("Coordinates need shape (N, {}), got {}".format(model.spec.in_dim,
                                                                        coords.shape))
    if ids.size != coords.shape[0]:
        raise ShapeError("Got {} partition ids for {} coordinates".format(ids.size,
                                                                           coords.shape[0]))
    located = partition.partition_ids(model.spec.grid, coords)
    if not np.array_equal(located, ids):
        raise PartitionError("Partition id {} does not match coordinate {}".format(
            int(ids[np.argmax(located != ids)]), coords[np.argmax(located != ids)].tolist()))
    return coords, ids


def _run(model, coords, ids, keep_cache, layout=None):
    """
    Forward pass on the padded layout. Returns the output stack, the batch and, if requested, the
    activations of every layer.
    """
    # pylint: disable=too-many-locals
    spec = model.spec
    if layout is not None and not layout.fits(model.present, ids):
        raise ShapeError("Packed layout was built for other partition ids")
    batch = PackedBatch(model.present, ids) if layout is None else layout
    omega = model.dtype.type(spec.omega)
    merge_omega = model.dtype.type(spec.merge_omega)
    local = [(weight[batch.slots], bias[batch.slots]) for weight, bias in model.local_weights]
    cache = []
    x_local = batch.pack(coords)
    x_global = x_local
    for layer in range(spec.depth - 1):
        weight, bias = local[layer]
        z_local = tensors.batched_matmul(x_local, weight) + bias
        features = np.sin(omega * z_local)
        entry = {"x": x_local, "z": z_local}
        if spec.kind == "lgs":
            global_weight, global_bias = model.global_weights[layer]
            z_global = _dense(x_global, global_weight) + global_bias
            global_features = np.sin(omega * z_global)
            merge_weight, merge_bias = model.merge_weights
            if spec.merge_kind == "concat_fc":
                merge_input = np.concatenate([features, global_features], axis=-1)
                merge_z = _dense(merge_input, merge_weight) + merge_bias
                x_next = np.sin(merge_omega * merge_z)
            else:
                merge_input = global_features
                merge_z = _dense(merge_input, merge_weight) + merge_bias
                x_next = features + np.sin(merge_omega * merge_z)
            entry.update(x_global=x_global, z_global=z_global, merge_input=merge_input,
                         merge_z=merge_z)
            x_global = global_features
        else:
            x_next = features
        if keep_cache:
            cache.append(entry)
        x_local = x_next
    weight, bias = local[-1]
    output = tensors.batched_matmul(x_local, weight) + bias
    if keep_cache:
        cache.append({"x": x_local})
    return output, batch, local, cache


def forward(model, coords, ids, layout=None):
    """
    Evaluate the network. Each coordinate runs through its partition's local sub-network (and the
    global sub-network for lgs). Outputs of a coordinate do not depend on the other coordinates of
    the batch, bitwise.

    :param model: Model
    :param coords: array (N, n) inside the grid bounds
    :param ids: flat partition index per coordinate, all present
    :param layout: optional PackedBatch built for these ids, reused instead of a new one
    :return: array (N, m)
    """
    coords, ids = _check_inputs(model, coords, ids)
    if ids.size == 0:
        return np.zeros((0, model.spec.out_dim), dtype=model.dtype)
    output, batch, _, _ = _run(model, coords, ids, False, layout)
    return batch.unpack(output)


def backward(model, coords, ids, targets, layout=None):
    """
    Mean squared error over all N m values and its gradient with respect to every weight, by
    reverse mode differentiation of the fixed graph. Global and merge gradients accumulate over all
    coordinates, local gradients only over the coordinates of their partition.

    :param model: Model
    :param coords: array (N, n)
    :param ids: flat partition index per coordinate
    :param targets: array (N, m)
    :param layout: optional PackedBatch built for these ids
    :return: (dict name -> gradient array, loss as float)
    """
    # pylint: disable=too-many-locals,too-many-statements
    coords, ids = _check_inputs(model, coords, ids)
    spec = model.spec
    targets = np.asarray(targets, dtype=model.dtype).reshape(ids.size, spec.out_dim)
    if ids.size == 0:
        raise ShapeError("Cannot compute a loss on an empty batch")
    output, batch, local, cache = _run(model, coords, ids, True, layout)
    dtype = model.dtype.type
    omega = dtype(spec.omega)
    merge_omega = dtype(spec.merge_omega)

    residual = batch.unpack(output) - targets
    loss = float(np.mean(np.square(residual, dtype=np.float64)))
    d_x = np.where(batch.valid[..., None], output - batch.pack(targets), 0).astype(model.dtype)
    d_x *= dtype(2.0 / residual.size)

    grads = {name: np.zeros_like(array) for name, array in model.parameters().items()}
    d_global = None
    for layer in reversed(range(spec.depth)):
        entry = cache[layer]
        weight = local[layer][0]
        if layer == spec.depth - 1:
            d_z = d_x
        else:
            d_features = d_x
            if spec.kind == "lgs":
                merge_weight = model.merge_weights[0]
                merge_z = entry["merge_z"]
                d_merge = d_x * merge_omega * np.cos(merge_omega * merge_z)
                grads["merge.weight"] += tensors.batch_sum(
                    tensors.batched_matmul(_transposed(entry["merge_input"]), d_merge))
                grads["merge.bias"] += tensors.batch_sum(tensors.row_sum(d_merge))
                d_merge_input = _dense(d_merge, merge_weight.T)
                if spec.merge_kind == "concat_fc":
                    d_features = d_merge_input[..., :spec.local_hidden]
                    d_global_features = d_merge_input[..., spec.local_hidden:]
                else:
                    d_global_features = d_merge_input
                if d_global is not None:
                    d_global_features = d_global_features + d_global
                global_weight = model.global_weights[layer][0]
                z_global = entry["z_global"]
                d_z_global = d_global_features * omega * np.cos(omega * z_global)
                grads["global.{}.weight".format(layer)] = tensors.batch_sum(
                    tensors.batched_matmul(_transposed(entry["x_global"]), d_z_global))
                grads["global.{}.bias".format(layer)] = tensors.batch_sum(
                    tensors.row_sum(d_z_global))
                if layer > 0:
                    d_global = _dense(d_z_global, global_weight.T)
            d_z = d_features * omega * np.cos(omega * entry["z"])
        grads["local.{}.weight".format(layer)][batch.slots] = tensors.batched_matmul(
            _transposed(entry["x"]), d_z)
        grads["local.{}.bias".format(layer)][batch.slots] = tensors.row_sum(d_z)
        if layer > 0:
            d_x = tensors.batched_matmul(d_z, _transposed(weight))
    return grads, loss


def predict(model, coords):
    """
    Forward pass with partition ids located from the coordinates, in chunks.

    :param model: Model
    :param coords: array (N, n)
    :return: array (N, m)
    """
    coords = np.asarray(coords, dtype=model.dtype)
    ids = partition.partition_ids(model.spec.grid, coords)
    return np.concatenate(
        [forward(model, coords[start:start + FORWARD_CHUNK], ids[start:start + FORWARD_CHUNK])
         for start in range(0, max(len(coords), 1), FORWARD_CHUNK)], axis=0)


def reconstruct(model, resolution, partitions=None, fill=0.0):
    """
    Decode the signal on a regular grid over the model bounds. Cropped partitions, and partitions
    not requested, are filled with the fill value.

    :param model: Model
    :param resolution: samples per dimension
    :param partitions: optional iterable of flat indices to decode (default: all present)
    :param fill: value for samples that are not decoded
    :return: (signalio.Signal, sorted list of cropped partition ids inside the requested region)
    """
    coords = signalio.grid_coords(resolution, model.spec.grid.bounds)
    ids = partition.partition_ids(model.spec.grid, coords)
    requested = np.ones(model.present.count, dtype=bool)
    if partitions is not None:
        requested[:] = False
        for flat in partitions:
            partition.unflatten(model.spec.grid, flat)
            requested[int(flat)] = True
    selected = requested[ids] & model.present.bitmap[ids]
    values = np.full((ids.size, model.spec.out_dim), fill, dtype=np.float32)
    if selected.any():
        values[selected] = predict(model, coords[selected])
    dropped = sorted(int(flat) for flat in model.present.dropped if requested[flat])
    if dropped:
        LOGGER.info("Partitions %s are cropped and filled with %s", dropped, fill)
    signal = signalio.Signal(tuple(resolution), model.spec.out_dim,
                             np.clip(values, -1.0, 1.0).reshape(tuple(resolution) + (-1,)))
    return signal, dropped
