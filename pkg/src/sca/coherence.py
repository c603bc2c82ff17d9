"""Coherence loss over batch tensor fields, its closed-form gradient,
finite-difference oracles, and the batch coherence score.

The loss is the summed squared Frobenius distance from each token's field
to the batch mean field. The closed-form gradient treats kernel weights,
context vectors, and the mean field as constants (the update direction
used in training); the full finite-difference gradient that re-derives
everything per perturbation exists as a diagnostic.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import corpus, field, kernel
from .embedding import EmbeddingTable
from .field import TensorField
from .kernel import KernelSpec

SCORE_GUARD = 1e-12


@dataclass
class BatchState:
    """Everything derived from one batch against an embedding snapshot."""

    token_ids: np.ndarray  # (m,)
    kernel_rows: np.ndarray  # (m, m), row i = K(e_i, e_j) over the batch
    lefts: np.ndarray  # (m, d) embeddings
    rights: np.ndarray  # (m, d) context vectors
    scales: np.ndarray  # (m,) spectral clip factors
    mean: np.ndarray  # (d, d) mean field
    loss: float
    gradients: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.token_ids.shape[0]

    def dense_stack(self) -> np.ndarray:
        """Dense (m, d, d) stack of the fields, scales included."""
        return self.scales[:, None, None] * (self.lefts[:, :, None] * self.rights[:, None, :])

    def fields(self) -> list[TensorField]:
        return [
            TensorField(self.lefts[i], self.rights[i], float(self.scales[i]))
            for i in range(self.size)
        ]


def _kernel_square(spec: KernelSpec, E: np.ndarray, threads: int) -> np.ndarray:
    m = E.shape[0]
    if threads <= 1 or m < 2 * threads:
        return kernel.kernel_block(spec, E, E)
    K = np.empty((m, m))
    chunks = [c for c in np.array_split(np.arange(m), threads) if c.size]

    def fill(rows: np.ndarray) -> None:
        K[rows] = kernel.kernel_block(spec, E[rows], E)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(fill, chunks))
    return K


def compute_batch_state(
    spec: KernelSpec, table: EmbeddingTable, token_ids: np.ndarray, threads: int = 1
) -> BatchState:
    """Run the batch pipeline: kernel rows, contexts, fields, mean, loss, gradients."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError("token_ids must be a non-empty 1-D array")
    if ids.min() < 0 or ids.max() >= len(table):
        raise ValueError("token id outside the embedding table")
    m = ids.size
    E = table.vectors[ids]
    K = _kernel_square(spec, E, threads)
    C = (K[:, :, None] * E[None, :, :]).sum(axis=1) / m
    stack = E[:, :, None] * C[:, None, :]
    M = field.dense_mean(stack)
    D = stack - M
    loss = float(np.sum(D * D))
    gradients = 2.0 * np.einsum("ijk,ik->ij", D, C)
    return BatchState(
        token_ids=ids,
        kernel_rows=K,
        lefts=E,
        rights=C,
        scales=np.ones(m),
        mean=M,
        loss=loss,
        gradients=gradients,
    )


def sca_loss(fields: list[TensorField], mean: np.ndarray) -> float:
    """Sum of squared Frobenius distances from each field to the mean field."""
    if not fields:
        raise ValueError("sca_loss needs at least one field")
    total = 0.0
    for f in fields:
        diff = f.dense() - mean
        total += float(np.sum(diff * diff))
    return total


def sca_gradient(state: BatchState) -> np.ndarray:
    """Per-token update directions g_i = 2 (T_i - M) c_i.

    Kernel weights, context vectors, and the mean field are held fixed;
    compare fd_gradient_full for the fully coupled derivative.
    """
    if state.gradients is None:
        D = state.dense_stack() - state.mean
        state.gradients = 2.0 * np.einsum("ijk,ik->ij", D, state.rights)
    return state.gradients


def fd_gradient_detached(
    table: EmbeddingTable, i: int, context: np.ndarray, mean: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    """Central differences of f(e) = |outer(e, context) - mean|_F^2 at row i."""
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    context = np.asarray(context, dtype=float)
    mean = np.asarray(mean, dtype=float)
    e0 = np.array(table.vectors[i], dtype=float)

    def f(e: np.ndarray) -> float:
        diff = np.outer(e, context) - mean
        return float(np.sum(diff * diff))

    grad = np.zeros_like(e0)
    for k in range(e0.size):
        plus = e0.copy()
        minus = e0.copy()
        plus[k] += eps
        minus[k] -= eps
        grad[k] = (f(plus) - f(minus)) / (2.0 * eps)
    return grad


def fd_gradient_full(
    spec: KernelSpec, table: EmbeddingTable, batch: np.ndarray, i: int, eps: float = 1e-5
) -> np.ndarray:
    """Central differences of the full batch loss as a function of row i.

    Kernel rows, context vectors, and the mean field are all recomputed per
    perturbation, so this is the true gradient of the discrete objective.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    batch = np.asarray(batch, dtype=np.int64)
    base = np.array(table.vectors, dtype=float)
    e0 = base[i].copy()

    def loss_at(e: np.ndarray) -> float:
        vectors = base.copy()
        vectors[i] = e
        snapshot = EmbeddingTable(vectors=vectors, vocab=table.vocab, seed=table.seed)
        return compute_batch_state(spec, snapshot, batch).loss

    grad = np.zeros_like(e0)
    for k in range(e0.size):
        plus = e0.copy()
        minus = e0.copy()
        plus[k] += eps
        minus[k] -= eps
        grad[k] = (loss_at(plus) - loss_at(minus)) / (2.0 * eps)
    return grad


def _frobenius_cosine_mean(stack: np.ndarray, mean: np.ndarray) -> float:
    numer = np.sum(stack * mean, axis=(1, 2))
    norms = np.sqrt(np.sum(stack * stack, axis=(1, 2)))
    mean_norm = float(np.sqrt(np.sum(mean * mean)))
    return float(np.mean(numer / (norms * mean_norm + SCORE_GUARD)))


def coherence_score(fields: list[TensorField], mean: np.ndarray) -> float:
    """Mean Frobenius cosine between each field and the mean field.

    Artifact-defined metric in [-1, 1]; the guard term sends degenerate
    zero fields (or a zero mean) to score 0 instead of dividing by zero.
    """
    if not fields:
        raise ValueError("coherence_score needs at least one field")
    return _frobenius_cosine_mean(np.stack([f.dense() for f in fields]), np.asarray(mean, float))


def batch_coherence(state: BatchState) -> float:
    """Coherence score of a computed batch state."""
    return _frobenius_cosine_mean(state.dense_stack(), state.mean)


def evaluate_coherence(
    table: EmbeddingTable,
    documents: list,
    spec: KernelSpec,
    batch_size: int,
    seed: int,
    num_batches: int = 16,
) -> float:
    """Mean coherence score over seeded evaluation batches."""
    pools = corpus.token_pools(documents)
    scores = []
    for step in range(num_batches):
        ids = corpus.sample_from_pools(pools, batch_size, seed, step)
        scores.append(batch_coherence(compute_batch_state(spec, table, ids)))
    return float(np.mean(scores))
