"""Condition encoders: sinusoidal ladder plus a learned sinusoidal projection."""

from __future__ import annotations

import numpy as np

from ..errors import ContractViolation
from ..gradcore import Tensor, ops


def sinusoidal_encoding(coords: np.ndarray, dims: int) -> np.ndarray:
    """Interleaved [sin(2^j x), cos(2^j x)] per coordinate, zero-padded to ``dims``.

    The ``dims`` budget splits evenly across coordinates; each gets the
    geometric frequency ladder 2^j, j = 0..dims/(2*coords)-1.
    """
    x = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    n, k = x.shape
    levels = dims // (2 * k)
    if levels < 1:
        raise ContractViolation(f"{dims} dims cannot cover {k} coordinates")
    freqs = 2.0 ** np.arange(levels)
    scaled = x[:, :, None] * freqs[None, None, :]
    inter = np.empty((n, k, levels, 2))
    inter[..., 0] = np.sin(scaled)
    inter[..., 1] = np.cos(scaled)
    flat = inter.reshape(n, k * levels * 2)
    if flat.shape[1] < dims:
        flat = np.pad(flat, ((0, 0), (0, dims - flat.shape[1])))
    return flat


def fourier_features(x, projection: Tensor) -> Tensor:
    """Trainable random projection followed by sin/cos: [n, d] -> [n, 2*rows]."""
    h = ops.dense(ops.as_tensor(x), ops.swapaxes(projection, 0, 1))
    return ops.concat([ops.sin(h), ops.cos(h)], axis=-1)


def linear_features(x, weight: Tensor, bias: Tensor) -> Tensor:
    """Plain trained projection of the same output width (the no-LFF path)."""
    return ops.dense(ops.as_tensor(x), ops.swapaxes(weight, 0, 1), bias)
