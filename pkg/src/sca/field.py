"""Per-token tensor fields in rank-1 factored form.

A token's field is the outer product of its embedding (left factor) with
a kernel-weighted context vector (right factor), kept factored so the
largest singular value is exact and cheap: sigma_max = scale * |left| * |right|.
The mean field of a batch is the dense average of the member fields.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernel
from .embedding import EmbeddingTable
from .kernel import KernelSpec

PROJECTION_MODES = ("clip", "alg1")


@dataclass
class TensorField:
    """Rank-1 field scale * outer(left, right)."""

    left: np.ndarray
    right: np.ndarray
    scale: float = 1.0

    def dense(self) -> np.ndarray:
        return self.scale * np.outer(self.left, self.right)


def context_vector(
    spec: KernelSpec, table: EmbeddingTable, i: int, batch: np.ndarray
) -> np.ndarray:
    """Kernel-weighted empirical mean of the batch embeddings around token i."""
    batch = np.asarray(batch, dtype=np.int64)
    if batch.size == 0:
        raise ValueError("batch is empty")
    row = kernel.kernel_row(spec, table, i, batch)
    return (row[:, None] * table.vectors[batch]).sum(axis=0) / batch.size


def tensor_field(table: EmbeddingTable, i: int, context: np.ndarray) -> TensorField:
    """Field for token i given its context vector, unclipped (scale 1)."""
    return TensorField(
        left=np.array(table.vectors[i], dtype=float),
        right=np.asarray(context, dtype=float),
        scale=1.0,
    )


def dense_mean(stack: np.ndarray) -> np.ndarray:
    """Mean over the first axis, as first element plus mean deviation.

    The shifted form makes the mean of identical matrices equal to that
    matrix bitwise, which downstream exact-zero guarantees rely on.
    """
    base = stack[0]
    return base + (stack - base).mean(axis=0)


def mean_field(fields: list[TensorField]) -> np.ndarray:
    """Dense batch-average of the fields (clipped scales included)."""
    if not fields:
        raise ValueError("mean_field needs at least one field")
    dims = {(f.left.shape[0], f.right.shape[0]) for f in fields}
    if len(dims) != 1:
        raise ValueError(f"fields have mixed dimensions: {sorted(dims)}")
    return dense_mean(np.stack([f.dense() for f in fields]))


def spectral_norm(f: TensorField) -> float:
    """Largest singular value of the dense field, exact for rank-1."""
    return abs(f.scale) * float(np.linalg.norm(f.left)) * float(np.linalg.norm(f.right))


def spectral_project(f: TensorField, rho: float, mode: str = "clip") -> TensorField:
    """Bound the field's spectral norm by rho.

    clip: rescale only when sigma_max exceeds rho, so sigma_max <= rho and
    fields already inside the ball are untouched. alg1: divide the whole
    field by max(sigma_max, rho), which maps an out-of-bounds field to
    norm 1 and shrinks in-bounds fields by rho.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    if mode not in PROJECTION_MODES:
        raise ValueError(f"unknown projection mode {mode!r}; expected one of {PROJECTION_MODES}")
    sigma = spectral_norm(f)
    if mode == "clip":
        if sigma <= rho:
            return f
        return TensorField(f.left, f.right, f.scale * (rho / sigma))
    return TensorField(f.left, f.right, f.scale / max(sigma, rho))
