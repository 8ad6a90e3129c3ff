"""
Dense tensors and the weighting operations built on them.

A `Tensor` is an immutable, finite, 64-bit array of rank 0 to 4. The
module-level functions are pure: they never modify their arguments and
always return new tensors. Convolution is valid-mode cross-correlation
and downsampling is non-overlapping average pooling.
"""

import math
from typing import Callable, Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NonFiniteValue, ShapeMismatch

MAX_RANK = 4

Shape = tuple[int, ...]


def check_shape(shape: Iterable[int]) -> Shape:
    """
    Check a shape is legal and return it as a tuple of integers.

    Parameters
    ----------
    shape : Iterable[int]
        Extents to check.

    Returns
    -------
    shape : tuple[int, ...]
        The same extents as plain integers.

    Raises
    ------
    ShapeMismatch
        If the rank exceeds four or any extent is smaller than one.
    """

    shape = tuple(int(extent) for extent in shape)
    if len(shape) > MAX_RANK:
        raise ShapeMismatch(
            f"Rank {len(shape)} exceeds the maximum rank of {MAX_RANK}."
        )
    if any(extent < 1 for extent in shape):
        raise ShapeMismatch(f"Shape {shape} has an extent below one.")

    return shape


class Tensor:
    """
    An immutable dense tensor of 64-bit floats.

    Parameters
    ----------
    values : array-like
        Nested sequence, scalar, or flat sequence of real values.
    shape : Iterable[int], optional
        Target shape. When given, `values` is read in row-major order
        and must hold exactly `product(shape)` entries.

    Raises
    ------
    ShapeMismatch
        If the shape is illegal or does not match the number of values.
    NonFiniteValue
        If any value is NaN or infinite.
    """

    __slots__ = ("_array",)
    __hash__ = None

    def __init__(self, values, shape: None | Iterable[int] = None) -> None:
        array = np.array(values, dtype=np.float64)
        if shape is not None:
            shape = check_shape(shape)
            if array.size != math.prod(shape):
                raise ShapeMismatch(
                    f"Cannot fill shape {shape} with {array.size} values."
                )
            array = array.reshape(shape)

        self._array = _freeze(array)

    @classmethod
    def _wrap(cls, array: np.ndarray) -> "Tensor":
        """Wrap a freshly computed array without copying it."""

        tensor = cls.__new__(cls)
        tensor._array = _freeze(np.asarray(array, dtype=np.float64))

        return tensor

    @classmethod
    def zeros(cls, shape: Iterable[int]) -> "Tensor":
        """Create a tensor of zeros."""

        return cls._wrap(np.zeros(check_shape(shape)))

    @classmethod
    def full(cls, shape: Iterable[int], value: float) -> "Tensor":
        """Create a tensor with every entry equal to `value`."""

        return cls._wrap(np.full(check_shape(shape), float(value)))

    @property
    def array(self) -> np.ndarray:
        """Read-only view of the underlying array."""

        return self._array

    @property
    def shape(self) -> Shape:
        """Extents of the tensor."""

        return self._array.shape

    @property
    def rank(self) -> int:
        """Number of axes of the tensor."""

        return self._array.ndim

    @property
    def size(self) -> int:
        """Number of entries."""

        return self._array.size

    @property
    def data(self) -> tuple[float, ...]:
        """Entries in row-major order."""

        return tuple(self._array.ravel().tolist())

    def item(self) -> float:
        """Return the value of a single-entry tensor."""

        if self.size != 1:
            raise ShapeMismatch(f"Tensor of shape {self.shape} is not scalar.")

        return float(self._array.reshape(-1)[0])

    def tolist(self):
        """Return the entries as (nested) Python floats."""

        return self._array.tolist()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and bool(
            np.array_equal(self._array, other._array)
        )

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, data={self.tolist()!r})"


def _freeze(array: np.ndarray) -> np.ndarray:
    """Check an array is a legal tensor body and make it read-only."""

    check_shape(array.shape)
    if not np.all(np.isfinite(array)):
        raise NonFiniteValue("Tensor contains NaN or infinite values.")

    array.flags.writeable = False

    return array


def as_tensor(value, shape: None | Iterable[int] = None) -> Tensor:
    """
    Coerce a value into a tensor, optionally checking its shape.

    Flat sequences are reshaped row-major into `shape`; nested sequences
    and tensors must already have that shape.

    Parameters
    ----------
    value : Tensor | array-like
        Value to coerce.
    shape : Iterable[int], optional
        Shape the result must have.

    Returns
    -------
    tensor : Tensor
        The coerced tensor.
    """

    if not isinstance(value, Tensor):
        array = np.asarray(value, dtype=np.float64)
        if shape is not None and array.ndim <= 1:
            return Tensor(array, shape)
        value = Tensor(array)

    if shape is not None and value.shape != tuple(shape):
        raise ShapeMismatch(
            f"Expected shape {tuple(shape)}, received {value.shape}."
        )

    return value


def add(a: Tensor, b: Tensor) -> Tensor:
    """Add two tensors of identical shape."""

    if a.shape != b.shape:
        raise ShapeMismatch(f"Cannot add shapes {a.shape} and {b.shape}.")

    return Tensor._wrap(a.array + b.array)


def scale(tensor: Tensor, alpha: float) -> Tensor:
    """Multiply every entry by a scalar."""

    return Tensor._wrap(float(alpha) * tensor.array)


def apply(function: Callable[[float], float], tensor: Tensor) -> Tensor:
    """Apply a scalar function to each entry of a tensor."""

    mapped = np.vectorize(function, otypes=[np.float64])(tensor.array)

    return Tensor._wrap(np.asarray(mapped).reshape(tensor.shape))


def dot(a: Tensor, b: Tensor) -> float:
    """Inner product of two tensors of identical shape."""

    if a.shape != b.shape:
        raise ShapeMismatch(f"Cannot contract {a.shape} with {b.shape}.")

    return float(np.vdot(a.array, b.array))


def outer(a: Tensor, b: Tensor) -> Tensor:
    """Outer product; the result has shape `a.shape + b.shape`."""

    return Tensor._wrap(np.multiply.outer(a.array, b.array))


def transpose(matrix: Tensor) -> Tensor:
    """Transpose a rank-2 tensor."""

    if matrix.rank != 2:
        raise ShapeMismatch(f"Cannot transpose rank {matrix.rank} tensor.")

    return Tensor._wrap(np.ascontiguousarray(matrix.array.T))


def matmul_shape(a: Shape, b: Shape) -> Shape:
    """Shape of `matmul` for operands of the given shapes."""

    if len(a) != 2 or len(b) not in (1, 2):
        raise ShapeMismatch(
            f"Matrix product needs [m,n] x [n] or [n,p], got {a} x {b}."
        )
    if a[1] != b[0]:
        raise ShapeMismatch(f"Inner extents differ: {a} x {b}.")

    return (a[0],) + tuple(b[1:])


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product of a rank-2 tensor with a vector or a matrix.

    Parameters
    ----------
    a : Tensor
        Matrix of shape `[m, n]`.
    b : Tensor
        Vector `[n]` or matrix `[n, p]`.

    Returns
    -------
    product : Tensor
        Tensor of shape `[m]` or `[m, p]`, following the rank of `b`.
    """

    matmul_shape(a.shape, b.shape)

    return Tensor._wrap(a.array @ b.array)


def conv2d_shape(image: Shape, kernels: Shape) -> Shape:
    """Shape of `conv2d` for an image and kernel bank of these shapes."""

    if len(image) != 3 or len(kernels) != 4:
        raise ShapeMismatch(
            f"Convolution needs [c,h,w] and [k,c,kh,kw], got {image} and "
            f"{kernels}."
        )

    c, h, w = image
    k, kc, kh, kw = kernels
    if kc != c:
        raise ShapeMismatch(f"Kernel channels {kc} differ from input {c}.")
    if kh > h or kw > w:
        raise ShapeMismatch(f"Kernel {kh}x{kw} exceeds input {h}x{w}.")

    return (k, h - kh + 1, w - kw + 1)


def conv2d(image: Tensor, kernels: Tensor) -> Tensor:
    """
    Valid-mode cross-correlation summed over input channels.

    Parameters
    ----------
    image : Tensor
        Feature maps of shape `[c, h, w]`.
    kernels : Tensor
        Kernel bank of shape `[k, c, kh, kw]`.

    Returns
    -------
    maps : Tensor
        Output maps of shape `[k, h - kh + 1, w - kw + 1]`.
    """

    conv2d_shape(image.shape, kernels.shape)
    kh, kw = kernels.shape[2:]

    windows = sliding_window_view(image.array, (kh, kw), axis=(1, 2))
    maps = np.einsum("chwij,kcij->khw", windows, kernels.array)

    return Tensor._wrap(maps)


def conv2d_kernel_grad(image: Tensor, delta: Tensor) -> Tensor:
    """
    Gradient of `conv2d(image, kernels)` with respect to the kernels.

    This is the valid cross-correlation of the image with the output
    sensitivity.

    Parameters
    ----------
    image : Tensor
        Input maps `[c, h, w]`.
    delta : Tensor
        Sensitivity of the output maps `[k, oh, ow]`.

    Returns
    -------
    grad : Tensor
        Kernel gradient `[k, c, h - oh + 1, w - ow + 1]`.
    """

    if image.rank != 3 or delta.rank != 3:
        raise ShapeMismatch(
            f"Expected [c,h,w] and [k,oh,ow], got {image.shape} and "
            f"{delta.shape}."
        )

    _, oh, ow = delta.shape
    windows = sliding_window_view(image.array, (oh, ow), axis=(1, 2))

    return Tensor._wrap(np.einsum("cijhw,khw->kcij", windows, delta.array))


def conv2d_input_grad(delta: Tensor, kernels: Tensor) -> Tensor:
    """
    Gradient of `conv2d(image, kernels)` with respect to the image.

    This is the full convolution of the sensitivity with the spatially
    flipped kernels.

    Parameters
    ----------
    delta : Tensor
        Sensitivity of the output maps `[k, oh, ow]`.
    kernels : Tensor
        Kernel bank `[k, c, kh, kw]`.

    Returns
    -------
    grad : Tensor
        Image gradient `[c, oh + kh - 1, ow + kw - 1]`.
    """

    if delta.rank != 3 or kernels.rank != 4:
        raise ShapeMismatch(
            f"Expected [k,oh,ow] and [k,c,kh,kw], got {delta.shape} and "
            f"{kernels.shape}."
        )
    if delta.shape[0] != kernels.shape[0]:
        raise ShapeMismatch("Sensitivity and kernel counts differ.")

    _, _, kh, kw = kernels.shape
    padded = np.pad(delta.array, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    windows = sliding_window_view(padded, (kh, kw), axis=(1, 2))
    flipped = kernels.array[:, :, ::-1, ::-1]

    return Tensor._wrap(np.einsum("khwij,kcij->chw", windows, flipped))


def downsample_shape(shape: Shape, window: int) -> Shape:
    """Shape of `downsample` for input of the given shape."""

    if window < 1:
        raise ShapeMismatch(f"Window {window} must be positive.")
    if len(shape) != 3:
        raise ShapeMismatch(f"Downsampling needs [c,h,w], got {shape}.")

    c, h, w = shape
    if h % window or w % window:
        raise ShapeMismatch(f"Window {window} does not divide {h}x{w}.")

    return (c, h // window, w // window)


def downsample(image: Tensor, window: int) -> Tensor:
    """
    Average over non-overlapping `window` x `window` blocks per channel.

    Parameters
    ----------
    image : Tensor
        Feature maps `[c, h, w]`; `window` must divide `h` and `w`.
    window : int
        Side of the pooling window.

    Returns
    -------
    pooled : Tensor
        Maps of shape `[c, h / window, w / window]`.
    """

    c, oh, ow = downsample_shape(image.shape, window)
    blocks = image.array.reshape(c, oh, window, ow, window)

    # offset by each block's first entry so constant blocks come back
    # exactly
    anchor = blocks[:, :, :1, :, :1]
    pooled = anchor[:, :, 0, :, 0] + (blocks - anchor).mean(axis=(2, 4))

    return Tensor._wrap(pooled)


def upsample(pooled: Tensor, window: int) -> Tensor:
    """
    Adjoint of `downsample`: spread each entry evenly over its window.

    Parameters
    ----------
    pooled : Tensor
        Maps `[c, h, w]`.
    window : int
        Side of the pooling window.

    Returns
    -------
    spread : Tensor
        Maps `[c, h * window, w * window]` whose blocks hold the pooled
        entry divided by `window ** 2`.
    """

    if pooled.rank != 3:
        raise ShapeMismatch(f"Upsampling needs [c,h,w], got {pooled.shape}.")

    spread = np.repeat(np.repeat(pooled.array, window, axis=1), window, 2)

    return Tensor._wrap(spread / (window * window))


def reshape(tensor: Tensor, target: Iterable[int]) -> Tensor:
    """
    Give a tensor a new shape with the same row-major data.

    Raises
    ------
    ShapeMismatch
        If the number of entries would change.
    """

    target = check_shape(target)
    if math.prod(target) != tensor.size:
        raise ShapeMismatch(f"Cannot reshape {tensor.shape} to {target}.")

    return Tensor._wrap(tensor.array.reshape(target).copy())
