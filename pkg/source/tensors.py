"""
Dense and batched matrix kernels plus the seeded random number generator.

This is the only file with raw numeric loops. All kernels accumulate in a fixed order: the product
of an (r x i) and an (i x c) matrix is built by adding the i outer products one after another,
which is exactly the order of the naive triple loop. Each output element therefore only depends on
its own row and column, so a batched product is bitwise equal to the per-slice products and a
forward pass over many coordinates is bitwise equal to the single coordinate passes.

Matrices are plain numpy arrays:
    Matrix          2D array (rows, cols), float32 (float64 in gradient check mode)
    BatchedMatrix   3D array (batch, rows, cols), C-contiguous

Random numbers come from numpy's PCG64 generator seeded through a SeedSequence. Child generators
are split off with Rng.split, so independent streams (initialization, sampling) never interfere.
"""
import logging
import numpy as np
from errors import ShapeError

LOGGER = logging.getLogger("lginr_logger")
FLOAT_TYPES = (np.float32, np.float64)
GENERATOR_NAME = "PCG64"


def check_matrix(data, name="matrix", ndim=2):
    """
    Validate a Matrix (ndim=2) or BatchedMatrix (ndim=3).

    :param data: numpy array to check
    :param name: name used in error messages
    :param ndim: expected number of dimensions
    :return: the array itself
    """
    if not isinstance(data, np.ndarray) or data.ndim != ndim:
        raise ShapeError("{} needs to be a {}D array, got {}".format(
            name, ndim, getattr(data, "shape", type(data))))
    if data.dtype.type not in FLOAT_TYPES:
        raise ShapeError("{} needs float32 or float64 entries, got {}".format(name, data.dtype))
    return data


def matmul(a, b):
    """
    Matrix product with naive accumulation order.

        >>> matmul(np.eye(2, dtype=np.float32), np.eye(2, dtype=np.float32))

    :param a: Matrix of shape (rows, inner)
    :param b: Matrix of shape (inner, cols)
    :return: Matrix of shape (rows, cols), dtype of a
    """
    check_matrix(a, "left operand")
    check_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError("Cannot multiply {} by {}".format(a.shape, b.shape))
    out = np.zeros((a.shape[0], b.shape[1]), dtype=a.dtype)
    product = np.empty_like(out)
    # inner index first, so every step reads contiguous memory
    columns = np.ascontiguousarray(a.T)
    for k in range(a.shape[1]):
        np.multiply(columns[k][:, None], b[k][None, :], out=product)
        out += product
    return out


def batched_matmul(w, x):
    """
    Batched matrix product, out[k] = w[k] . x[k]. Bitwise equal to calling matmul per slice.
    This is the kernel behind the locally connected layer.

    :param w: BatchedMatrix of shape (batch, rows, inner)
    :param x: BatchedMatrix of shape (batch, inner, cols)
    :return: BatchedMatrix of shape (batch, rows, cols)
    """
    check_matrix(w, "left operand", ndim=3)
    check_matrix(x, "right operand", ndim=3)
    if w.shape[0] != x.shape[0]:
        raise ShapeError("Batch sizes differ: {} and {}".format(w.shape[0], x.shape[0]))
    if w.shape[2] != x.shape[1]:
        raise ShapeError("Cannot multiply slices {} by {}".format(w.shape[1:], x.shape[1:]))
    out = np.zeros((w.shape[0], w.shape[1], x.shape[2]), dtype=w.dtype)
    product = np.empty_like(out)
    columns = np.ascontiguousarray(np.moveaxis(w, 2, 0))
    rows = np.ascontiguousarray(np.moveaxis(x, 1, 0))
    for k in range(w.shape[2]):
        np.multiply(columns[k][:, :, None], rows[k][:, None, :], out=product)
        out += product
    return out


def batch_sum(stack):
    """
    Sum a stack of arrays along its first axis, slice after slice.

    :param stack: array with at least one leading entry
    :return: array of shape stack.shape[1:]
    """
    out = np.array(stack[0], copy=True)
    for item in stack[1:]:
        out += item
    return out


def row_sum(stack):
    """
    Sum over the rows (second to last axis) keeping the dimension, row after row.
    Used for bias gradients, e.g. (batch, rows, cols) -> (batch, 1, cols).

    :param stack: array of at least two dimensions
    :return: array with the row axis reduced to length one
    """
    out = np.zeros(stack.shape[:-2] + (1, stack.shape[-1]), dtype=stack.dtype)
    for row in range(stack.shape[-2]):
        out += stack[..., row:row + 1, :]
    return out


class Rng:
    """
    Deterministic random number generator (numpy PCG64 behind a SeedSequence).
    Same seed means same stream on every platform. Use split to derive independent child streams.
    """
    def __init__(self, seed=0, sequence=None):
        if sequence is None:
            if int(seed) != seed or not 0 <= seed < 2 ** 64:
                raise ValueError("Seed needs to be a 64 bit unsigned integer, got {}".format(seed))
            sequence = np.random.SeedSequence(int(seed))
        self.__seed = int(seed)
        self.__sequence = sequence
        self.__generator = np.random.Generator(np.random.PCG64(sequence))

    @property
    def seed(self):
        """
        Seed of the root generator this stream descends from.
        :return:
        """
        return self.__seed

    @property
    def generator(self):
        """
        Underlying numpy generator.
        :return: numpy.random.Generator
        """
        return self.__generator

    def split(self):
        """
        Derive an independent child stream. Children are numbered, so the n-th split of equally
        seeded generators always yields the same stream.

        :return: new Rng
        """
        child = self.__sequence.spawn(1)[0]
        return Rng(seed=self.__seed, sequence=child)


def uniform(rng, lo, hi, shape, dtype=np.float32):
    """
    I.i.d. uniform entries in [lo, hi). Draws happen in float64, the cast result is clipped below hi
    so rounding cannot reach the upper end.

    :param rng: Rng to draw from (its stream advances)
    :param lo: lower bound (inclusive)
    :param hi: upper bound (exclusive)
    :param shape: output shape, e.g. (rows, cols) or (batch, rows, cols)
    :param dtype: float32 or float64
    :return: array of the given shape
    """
    if not lo < hi:
        raise ValueError("Need lo < hi for uniform sampling, got [{}, {})".format(lo, hi))
    values = (lo + (hi - lo) * rng.generator.random(size=shape)).astype(dtype)
    np.minimum(values, np.nextafter(dtype(hi), dtype(lo)), out=values)
    return values
