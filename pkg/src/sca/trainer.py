"""Mini-batch training loop for coherence alignment of an embedding table.

Each batch runs the full pipeline (kernel rows, context vectors, fields,
mean field, loss, gradients), applies the spectral constraint to the
fields, then updates the batch tokens' embedding rows. Epoch-level
machinery covers the adaptive learning rate and the windowed stopping
rule; the single explicit-Euler step is exposed separately so the
continuous-time view stays directly testable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import coherence, corpus
from .coherence import BatchState
from .embedding import EmbeddingTable
from .field import PROJECTION_MODES
from .kernel import KernelSpec

LR_FLOOR = 1e-8


class TrainingError(Exception):
    """Raised when training hits a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    """Hyperparameters of the training loop."""

    lr: float = 0.5
    batch_size: int = 32
    rho: float = 1.0
    lam: float = 0.0
    max_epochs: int = 150
    window: int = 10
    tol: float | None = 1e-3  # None disables early stopping
    seed: int = 0
    spectral_mode: str = "clip"

    def validate(self) -> None:
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.spectral_mode not in PROJECTION_MODES:
            raise ValueError(f"spectral_mode must be one of {PROJECTION_MODES}")


@dataclass
class EpochLog:
    """Per-epoch training record."""

    epoch: int
    loss: float
    coherence: float
    lr: float
    seconds: float


def check_convergence(history: list[EpochLog], window: int, tol: float | None) -> bool:
    """Windowed stopping rule over the epoch losses.

    True once at least 2*window epochs exist and the mean loss of the
    latest window improved on the window ending one epoch earlier by less
    than tol, relatively. A tol of None disables the rule.
    """
    if tol is None:
        return False
    if window < 1:
        raise ValueError("window must be >= 1")
    if len(history) < 2 * window:
        return False
    losses = [h.loss for h in history]
    latest = float(np.mean(losses[-window:]))
    previous = float(np.mean(losses[-window - 1 : -1]))
    improvement = (previous - latest) / max(previous, 1e-12)
    return improvement < tol


def adapt_learning_rate(history: list[EpochLog], lr: float) -> float:
    """Halve the rate after a loss uptick, floored at LR_FLOOR."""
    if not history:
        raise ValueError("history is empty")
    if len(history) >= 2 and history[-1].loss > history[-2].loss:
        return max(lr / 2.0, LR_FLOOR)
    return lr


def _project_scales(state: BatchState, rho: float, mode: str) -> None:
    """Apply the spectral constraint to every field in the state."""
    sigma = (
        state.scales
        * np.linalg.norm(state.lefts, axis=1)
        * np.linalg.norm(state.rights, axis=1)
    )
    if mode == "clip":
        over = sigma > rho
        state.scales[over] *= rho / sigma[over]
    else:
        state.scales /= np.maximum(sigma, rho)


def _check_finite(state: BatchState, gradients: np.ndarray, epoch: int, batch: int) -> None:
    if not np.isfinite(state.loss) or not np.all(np.isfinite(gradients)):
        raise TrainingError(f"non-finite loss or gradient at epoch {epoch}, batch {batch}")


def gradient_flow_step(table: EmbeddingTable, state: BatchState, dt: float) -> EmbeddingTable:
    """One explicit Euler step of de/dt = -g along the batch gradients."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    gradients = coherence.sca_gradient(state)
    if not np.isfinite(state.loss) or not np.all(np.isfinite(gradients)):
        raise TrainingError("non-finite loss or gradient in the batch state")
    vectors = table.vectors.copy()
    np.add.at(vectors, state.token_ids, -dt * gradients)
    return EmbeddingTable(vectors=vectors, vocab=table.vocab, seed=table.seed)


def train_sca(
    table: EmbeddingTable,
    documents: list[corpus.Document],
    spec: KernelSpec,
    config: TrainConfig,
    threads: int = 1,
    on_batch=None,
    on_epoch=None,
) -> tuple[EmbeddingTable, list[EpochLog]]:
    """Train the embedding table against the coherence objective.

    Runs max(1, total_tokens // batch_size) stratified batches per epoch,
    with the same seeded batch schedule every epoch so epoch losses stay
    directly comparable, and stops at max_epochs or on the windowed
    convergence rule. The input table is left untouched; a trained copy is
    returned together with the per-epoch logs.

    on_batch(epoch, step, loss, score) and on_epoch(epoch, table, log) are
    optional observers; the coherence score is recorded before the
    spectral projection, at the same snapshot as the loss.
    """
    config.validate()
    if spec.family == "rbf" and spec.bandwidth is None:
        raise ValueError("resolve the rbf bandwidth before training (median_bandwidth)")
    if table.vocab is not None and len(table.vocab) != len(table):
        raise ValueError("embedding table size does not match its vocabulary")
    pools = corpus.token_pools(documents)
    total_tokens = int(pools.masses.sum())
    if config.batch_size > total_tokens:
        raise TrainingError(
            f"batch size {config.batch_size} exceeds corpus token count {total_tokens}"
        )
    steps_per_epoch = max(1, total_tokens // config.batch_size)

    work = EmbeddingTable(vectors=table.vectors.copy(), vocab=table.vocab, seed=table.seed)
    logs: list[EpochLog] = []
    lr = config.lr
    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        batch_losses = np.empty(steps_per_epoch)
        batch_scores = np.empty(steps_per_epoch)
        for b in range(steps_per_epoch):
            ids = corpus.sample_from_pools(pools, config.batch_size, config.seed, b)
            state = coherence.compute_batch_state(spec, work, ids, threads=threads)
            gradients = coherence.sca_gradient(state)
            _check_finite(state, gradients, epoch, b)
            score = coherence.batch_coherence(state)
            _project_scales(state, config.rho, config.spectral_mode)
            np.add.at(work.vectors, ids, -lr * gradients)
            batch_losses[b] = state.loss
            batch_scores[b] = score
            if on_batch is not None:
                on_batch(epoch, b, state.loss, score)
        logs.append(
            EpochLog(
                epoch=epoch,
                loss=float(batch_losses.mean()),
                coherence=float(batch_scores.mean()),
                lr=lr,
                seconds=time.perf_counter() - started,
            )
        )
        if on_epoch is not None:
            on_epoch(epoch, work, logs[-1])
        if check_convergence(logs, config.window, config.tol):
            break
        lr = adapt_learning_rate(logs, lr)
    return work, logs
