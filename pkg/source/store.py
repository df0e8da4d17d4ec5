"""
Binary model files. The layout keeps every local sub-network in one contiguous block, so cropping a
file is a matter of deleting blocks.

All integers are little-endian u32, all weights little-endian f32:

    offset  size        field
    0       8           magic b"LGINR\\0", version byte 1, reserved byte 0
    8       24          kind (0 siren, 1 spp, 2 lgs), n, m, D, h_l, h_g
    32      4           omega (f32)
    36      4           merge kind (0 concat_fc, 1 fc_add)
    40      4           merge omega (f32)
    44      16 n        bounds, (min_i, max_i) as f64 pairs
    ..      4 n         partition factors C_i
    ..      ceil(K/8)   present bitmap, partition k is bit k % 8 of byte k // 8 (LSB first)
    ..                  global block: W then b of the D - 1 global layers (lgs only)
    ..                  merge block: W then b (lgs only)
    ..                  local blocks, one per present partition in flat order, each holding W then
                        b of all D local layers

Matrices are stored row-major with shape (fan_in, fan_out). The file size follows from the header:
header + 4 * parameter count bytes.
"""
import logging
import os
import struct
import tempfile
import numpy as np
import partition
import model as networks
from errors import FormatError, LgInrError

LOGGER = logging.getLogger("lginr_logger")
MAGIC = b"LGINR\x00"
VERSION = 1
PREAMBLE = MAGIC + bytes([VERSION, 0])
FIELDS = struct.Struct("<6IfIf")
FLOAT_TYPE = np.dtype("<f4")
FLOAT_SIZE = FLOAT_TYPE.itemsize


def header_bytes(spec, present):
    """
    Serialized header of a model.

    :param spec: model.ModelSpec
    :param present: model.CropMask
    :return: bytes
    """
    grid = spec.grid
    fields = FIELDS.pack(networks.KINDS.index(spec.kind), spec.in_dim, spec.out_dim, spec.depth,
                         spec.local_hidden, spec.global_hidden, spec.omega,
                         networks.MERGE_KINDS.index(spec.merge_kind), spec.merge_omega)
    bounds = np.array(list(zip(grid.bounds.mins, grid.bounds.maxs)), dtype="<f8")
    factors = np.array(grid.factors, dtype="<u4")
    bitmap = np.packbits(present.bitmap, bitorder="little")
    return PREAMBLE + fields + bounds.tobytes() + factors.tobytes() + bitmap.tobytes()


def _parse_header(data):
    """
    :return: (ModelSpec, CropMask, payload offset)
    """
    # pylint: disable=too-many-locals
    if data[:len(MAGIC)] != MAGIC:
        raise FormatError("Not a model file, bad magic {!r}".format(data[:len(MAGIC)]), offset=0)
    if len(data) < len(PREAMBLE) + FIELDS.size:
        raise FormatError("Truncated header", offset=len(data))
    if data[len(MAGIC)] != VERSION:
        raise FormatError("Unsupported format version {}".format(data[len(MAGIC)]),
                          offset=len(MAGIC))
    if data[len(MAGIC) + 1] != 0:
        raise FormatError("Reserved byte needs to be zero", offset=len(MAGIC) + 1)
    offset = len(PREAMBLE)
    kind, in_dim, out_dim, depth, local_hidden, global_hidden, omega, merge_kind, \
        merge_omega = FIELDS.unpack_from(data, offset)
    if kind >= len(networks.KINDS):
        raise FormatError("Unknown model kind {}".format(kind), offset=offset)
    if merge_kind >= len(networks.MERGE_KINDS):
        raise FormatError("Unknown merge kind {}".format(merge_kind), offset=offset + 28)
    offset += FIELDS.size
    grid_size = 16 * in_dim + 4 * in_dim
    if in_dim < 1 or len(data) < offset + grid_size:
        raise FormatError("Truncated grid description", offset=offset)
    bounds = np.frombuffer(data, dtype="<f8", count=2 * in_dim, offset=offset).reshape(-1, 2)
    factors = np.frombuffer(data, dtype="<u4", count=in_dim, offset=offset + 16 * in_dim)
    offset += grid_size
    try:
        grid = partition.PartitionGrid(partition.Bounds(bounds[:, 0], bounds[:, 1]), factors)
        spec = networks.ModelSpec(networks.KINDS[kind], in_dim, out_dim, depth, local_hidden,
                                  global_hidden, float(omega), networks.MERGE_KINDS[merge_kind],
                                  grid, float(merge_omega))
    except (LgInrError, ValueError) as error:
        raise FormatError("Invalid header: {}".format(error), offset=len(PREAMBLE)) from error
    bitmap_size = -(-grid.count // 8)
    if len(data) < offset + bitmap_size:
        raise FormatError("Truncated partition bitmap", offset=offset)
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8, count=bitmap_size, offset=offset),
                         bitorder="little")
    if bits[grid.count:].any():
        raise FormatError("Bitmap padding bits need to be zero", offset=offset)
    if not bits[:grid.count].any():
        raise FormatError("Bitmap marks no partition as present", offset=offset)
    present = networks.CropMask(bits[:grid.count].astype(bool))
    return spec, present, offset + bitmap_size


def _check_size(data, spec, present, offset):
    expected = offset + FLOAT_SIZE * networks.param_count(spec, present.kept_count)
    if len(data) != expected:
        raise FormatError("File holds {} bytes, header implies {}".format(len(data), expected),
                          offset=min(len(data), expected))


def serialize(model):
    """
    Model as file content.

    :param model: model.Model
    :return: bytes
    """
    params = model.parameters()
    for name, array in params.items():
        if not np.all(np.isfinite(array)):
            raise FormatError("Cannot save non-finite weights in {}".format(name))
    chunks = [header_bytes(model.spec, model.present)]
    for weight, bias in model.global_weights:
        chunks += [weight.astype(FLOAT_TYPE).tobytes(), bias.astype(FLOAT_TYPE).tobytes()]
    if model.merge_weights is not None:
        chunks += [array.astype(FLOAT_TYPE).tobytes() for array in model.merge_weights]
    kept = model.present.kept_count
    blocks = np.concatenate([array.reshape(kept, -1) for pair in model.local_weights
                             for array in pair], axis=1)
    chunks.append(blocks.astype(FLOAT_TYPE).tobytes())
    return b"".join(chunks)


def deserialize(data):
    """
    Model from file content.

    :param data: bytes
    :return: model.Model with float32 weights
    """
    spec, present, offset = _parse_header(data)
    _check_size(data, spec, present, offset)

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape))
        array = np.frombuffer(data, dtype=FLOAT_TYPE, count=count, offset=offset)
        offset += FLOAT_SIZE * count
        return array.astype(np.float32).reshape(shape)

    global_weights = [(take((fan_in, fan_out)), take((1, fan_out)))
                      for fan_in, fan_out in networks.global_layer_shapes(spec)]
    shape = networks.merge_shape(spec)
    merge = None if shape is None else (take(shape), take((1, shape[1])))
    kept = present.kept_count
    blocks = take((kept, networks.local_param_count(spec)))
    local, column = [], 0
    for fan_in, fan_out in networks.local_layer_shapes(spec):
        weight = blocks[:, column:column + fan_in * fan_out].reshape(kept, fan_in, fan_out)
        column += fan_in * fan_out
        bias = blocks[:, column:column + fan_out].reshape(kept, 1, fan_out)
        column += fan_out
        local.append((weight.copy(), bias.copy()))
    assert column == blocks.shape[1]
    return networks.Model(spec, local, global_weights, merge, present)


def write_atomic(path, data):
    """
    Write bytes through a temporary file in the target directory and rename it into place.

    :param path: target file
    :param data: bytes
    :return:
    """
    directory = os.path.dirname(os.path.abspath(path))
    handle, temporary = tempfile.mkstemp(dir=directory, prefix=".lginr-", suffix=".tmp")
    try:
        with os.fdopen(handle, "wb") as temporary_file:
            temporary_file.write(data)
        os.replace(temporary, path)
    except BaseException:
        if os.path.exists(temporary):
            os.remove(temporary)
        raise


def save(model, path):
    """
    Save a model, atomically.

    :param model: model.Model
    :param path: file to write
    :return: number of bytes written
    """
    data = serialize(model)
    write_atomic(path, data)
    LOGGER.info("Saved %s (%d parameters, %d bytes) to %s", model.spec.kind, model.param_count,
                len(data), path)
    return len(data)


def load(path):
    """
    Load a model saved with save.

    :param path: file to read
    :return: model.Model
    """
    with open(path, "rb") as model_file:
        data = model_file.read()
    return deserialize(data)


def load_header(path):
    """
    Read only the header of a model file and check the file size against it.

    :param path: file to read
    :return: (model.ModelSpec, model.CropMask, header size in bytes)
    """
    with open(path, "rb") as model_file:
        data = model_file.read()
    spec, present, offset = _parse_header(data)
    _check_size(data, spec, present, offset)
    return spec, present, offset


def crop_file(path_in, drop, path_out):
    """
    Crop partitions out of a model file without decoding its weights: the header gets the new
    bitmap, the blocks of the dropped partitions are left out. The result is byte for byte the file
    save would write for edit.crop of the loaded model.

    :param path_in: model file to read
    :param drop: iterable of flat partition indices, all present
    :param path_out: file to write (may equal path_in)
    :return: number of bytes written
    """
    with open(path_in, "rb") as model_file:
        data = model_file.read()
    spec, present, offset = _parse_header(data)
    _check_size(data, spec, present, offset)
    drop = sorted({int(flat) for flat in drop})
    cropped = present.without(drop) if drop else present
    block_size = FLOAT_SIZE * networks.local_param_count(spec)
    local_start = offset + FLOAT_SIZE * networks.global_param_count(spec)
    removed = set(present.slots_of(drop).tolist()) if drop else set()
    chunks = [header_bytes(spec, cropped), data[offset:local_start]]
    for slot in range(present.kept_count):
        if slot not in removed:
            start = local_start + slot * block_size
            chunks.append(data[start:start + block_size])
    output = b"".join(chunks)
    write_atomic(path_out, output)
    LOGGER.info("Cropped %d partitions from %s into %s (%d -> %d bytes)", len(drop), path_in,
                path_out, len(data), len(output))
    return len(output)
