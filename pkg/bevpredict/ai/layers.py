"""
Forward and backward kernels for the encoder-decoder layer set

All kernels work on single samples shaped (channels, height, width) and
compute in float64.
"""

from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from bevpredict.models import HeadType
from bevpredict.utils.errors import ShapeError


def _windows3(x: np.ndarray) -> np.ndarray:
    """(C, H, W) -> (C, H, W, 3, 3) view over the zero-padded input"""
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    return sliding_window_view(padded, (3, 3), axis=(1, 2))


def conv3x3_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """
    Same-padded 3x3 convolution (cross-correlation), unit stride

    Args:
        x: (C_in, H, W)
        weight: (C_out, C_in, 3, 3)
        bias: (C_out,)
    """
    if x.shape[0] != weight.shape[1]:
        raise ShapeError(f"conv expects {weight.shape[1]} input channels, got {x.shape[0]}")
    out = np.tensordot(weight, _windows3(x), axes=([1, 2, 3], [0, 3, 4]))
    return out + bias[:, None, None]


def conv3x3_backward(
    dout: np.ndarray, x: np.ndarray, weight: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dx, dweight, dbias)"""
    dweight = np.tensordot(dout, _windows3(x), axes=([1, 2], [1, 2]))
    dbias = dout.sum(axis=(1, 2))
    flipped = weight[:, :, ::-1, ::-1]
    dx = np.tensordot(flipped, _windows3(dout), axes=([0, 2, 3], [0, 3, 4]))
    return dx, dweight, dbias


def conv1x1_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """weight: (C_out, C_in, 1, 1)"""
    if x.shape[0] != weight.shape[1]:
        raise ShapeError(f"conv expects {weight.shape[1]} input channels, got {x.shape[0]}")
    out = np.tensordot(weight[:, :, 0, 0], x, axes=([1], [0]))
    return out + bias[:, None, None]


def conv1x1_backward(
    dout: np.ndarray, x: np.ndarray, weight: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    dweight = np.tensordot(dout, x, axes=([1, 2], [1, 2]))[:, :, None, None]
    dbias = dout.sum(axis=(1, 2))
    dx = np.tensordot(weight[:, :, 0, 0], dout, axes=([0], [0]))
    return dx, dweight, dbias


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dout * (x > 0)


def maxpool_forward(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    2x2 max-pool, stride 2

    Returns the pooled map and, per output pixel, the index (0..3, row-major
    inside the 2x2 block) of the first maximum, used to route gradients.
    """
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max-pool needs even spatial dims, got {h}x{w}")
    blocks = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    argmax = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]
    return out, argmax


def maxpool_backward(dout: np.ndarray, argmax: np.ndarray) -> np.ndarray:
    c, h2, w2 = dout.shape
    blocks = np.zeros((c, h2, w2, 4), dtype=dout.dtype)
    np.put_along_axis(blocks, argmax[..., None], dout[..., None], axis=-1)
    return blocks.reshape(c, h2, w2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, 2 * h2, 2 * w2)


def upconv_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """
    2x2 transposed convolution with stride 2 (doubles height and width)

    Args:
        x: (C_in, H, W)
        weight: (C_in, C_out, 2, 2)
        bias: (C_out,)
    """
    if x.shape[0] != weight.shape[0]:
        raise ShapeError(f"upconv expects {weight.shape[0]} input channels, got {x.shape[0]}")
    c_out = weight.shape[1]
    _, h, w = x.shape
    out = np.einsum("cij,coab->oiajb", x, weight).reshape(c_out, 2 * h, 2 * w)
    return out + bias[:, None, None]


def upconv_backward(
    dout: np.ndarray, x: np.ndarray, weight: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    c_out = weight.shape[1]
    _, h, w = x.shape
    blocks = dout.reshape(c_out, h, 2, w, 2)
    dweight = np.einsum("cij,oiajb->coab", x, blocks)
    dx = np.einsum("oiajb,coab->cij", blocks, weight)
    dbias = dout.sum(axis=(1, 2))
    return dx, dweight, dbias


def concat_forward(skip: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Encoder features first, decoder features second"""
    if skip.shape[1:] != x.shape[1:]:
        raise ShapeError(f"cannot concatenate {skip.shape} with {x.shape}")
    return np.concatenate([skip, x], axis=0)


def concat_backward(dout: np.ndarray, skip_channels: int) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (dskip, dx)"""
    return dout[:skip_channels], dout[skip_channels:]


def head_forward(x: np.ndarray, head: HeadType) -> np.ndarray:
    if head == HeadType.LINEAR:
        return x
    if head == HeadType.TANH:
        return np.tanh(x)
    if head == HeadType.CLIPPED_RELU:
        return np.clip(x, 0.0, 1.0)
    raise ValueError(f"unknown head {head}")


def head_backward(dout: np.ndarray, x: np.ndarray, out: np.ndarray, head: HeadType) -> np.ndarray:
    """Gradient through the head; `x` is its input, `out` its output"""
    if head == HeadType.LINEAR:
        return dout
    if head == HeadType.TANH:
        return dout * (1.0 - out ** 2)
    if head == HeadType.CLIPPED_RELU:
        return dout * ((x > 0.0) & (x < 1.0))
    raise ValueError(f"unknown head {head}")
