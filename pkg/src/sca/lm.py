"""Tied-embedding bigram language model with an optional coherence term.

The model scores the next token as logits(w) = E e_w + b with the same
table E on both sides. Cross-entropy gradients are analytic; joint
training adds lam * (coherence gradient) over the batch's distinct source
tokens. A lam of 0 skips the coherence machinery entirely, so such a run
is bit-identical to the plain baseline.
"""

from __future__ import annotations

from dataclasses import dataclass
import time

import numpy as np

from . import coherence, corpus, trainer
from .embedding import EmbeddingTable
from .kernel import KernelSpec
from .trainer import EpochLog, TrainConfig, TrainingError


@dataclass
class BigramModel:
    """Embedding table plus per-token output bias."""

    table: EmbeddingTable
    bias: np.ndarray


def make_model(table: EmbeddingTable) -> BigramModel:
    return BigramModel(table=table, bias=np.zeros(len(table)))


def logits(model: BigramModel, token: int) -> np.ndarray:
    """Unnormalized next-token scores given the current token."""
    return model.table.vectors @ model.table.vectors[token] + model.bias


def nll(model: BigramModel, pair: tuple[int, int]) -> float:
    """Negative log-likelihood (natural log) of a (token, next-token) pair."""
    w, nxt = int(pair[0]), int(pair[1])
    n = len(model.table)
    if not (0 <= w < n and 0 <= nxt < n):
        raise ValueError(f"token pair ({w}, {nxt}) outside vocabulary of size {n}")
    z = logits(model, w)
    shifted = z - z.max()
    log_norm = float(np.log(np.sum(np.exp(shifted))))
    return log_norm - float(shifted[nxt])


def _pair_nlls(model: BigramModel, sources: np.ndarray, targets: np.ndarray) -> np.ndarray:
    E = model.table.vectors
    Z = E[sources] @ E.T + model.bias
    zmax = Z.max(axis=1)
    shifted = Z - zmax[:, None]
    log_norm = np.log(np.sum(np.exp(shifted), axis=1))
    return log_norm - shifted[np.arange(sources.shape[0]), targets]


def perplexity(model: BigramModel, sequence: np.ndarray) -> float:
    """exp of the mean adjacent-pair negative log-likelihood."""
    seq = np.asarray(sequence, dtype=np.int64)
    if seq.ndim != 1 or seq.size < 2:
        raise ValueError("sequence must contain at least two tokens")
    n = len(model.table)
    if seq.min() < 0 or seq.max() >= n:
        raise ValueError("sequence contains tokens outside the vocabulary")
    return float(np.exp(np.mean(_pair_nlls(model, seq[:-1], seq[1:]))))


def corpus_pairs(documents: list[corpus.Document]) -> np.ndarray:
    """All within-document adjacent pairs, shape (k, 2)."""
    chunks = [
        np.stack([d.token_ids[:-1], d.token_ids[1:]], axis=1)
        for d in documents
        if d.token_ids.shape[0] >= 2
    ]
    if not chunks:
        raise ValueError("no document long enough to form token pairs")
    return np.concatenate(chunks, axis=0)


def corpus_perplexity(model: BigramModel, documents: list[corpus.Document]) -> float:
    """Perplexity over every within-document adjacent pair."""
    pairs = corpus_pairs(documents)
    return float(np.exp(np.mean(_pair_nlls(model, pairs[:, 0], pairs[:, 1]))))


def classification_accuracy(model: BigramModel, pairs: np.ndarray) -> float:
    """Top-1 next-token accuracy; argmax ties resolve to the smallest id."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.shape[0] == 0:
        raise ValueError("no pairs to score")
    E = model.table.vectors
    Z = E[pairs[:, 0]] @ E.T + model.bias
    predicted = np.argmax(Z, axis=1)
    return float(np.mean(predicted == pairs[:, 1]))


def ce_batch_gradients(
    model: BigramModel, pairs: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Batch-mean cross-entropy loss and its analytic gradients.

    Returns (loss, embedding gradient (n, d), bias gradient (n,)). The
    embedding gradient carries both the output-side term (p - y) e_w and
    the tied input-side term E^T (p - y) scattered onto the source rows.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    B = pairs.shape[0]
    src = pairs[:, 0]
    tgt = pairs[:, 1]
    E = model.table.vectors
    W = E[src]
    Z = W @ E.T + model.bias
    zmax = Z.max(axis=1, keepdims=True)
    expz = np.exp(Z - zmax)
    totals = expz.sum(axis=1, keepdims=True)
    loss = float(np.mean(np.log(totals[:, 0]) + zmax[:, 0] - Z[np.arange(B), tgt]))
    delta = expz / totals
    delta[np.arange(B), tgt] -= 1.0
    delta /= B
    bias_grad = delta.sum(axis=0)
    emb_grad = delta.T @ W
    np.add.at(emb_grad, src, delta @ E)
    return loss, emb_grad, bias_grad


def _run(
    model: BigramModel,
    documents: list[corpus.Document],
    config: TrainConfig,
    spec: KernelSpec | None,
    threads: int,
    on_batch,
    on_epoch,
) -> tuple[BigramModel, list[EpochLog]]:
    config.validate()
    use_sca = spec is not None and config.lam != 0.0
    if use_sca and spec.family == "rbf" and spec.bandwidth is None:
        raise ValueError("resolve the rbf bandwidth before training (median_bandwidth)")
    pools = corpus.bigram_pools(documents)
    total_pairs = int(pools.masses.sum())
    if config.batch_size > total_pairs:
        raise TrainingError(
            f"batch size {config.batch_size} exceeds corpus pair count {total_pairs}"
        )
    steps_per_epoch = max(1, total_pairs // config.batch_size)

    table = EmbeddingTable(
        vectors=model.table.vectors.copy(), vocab=model.table.vocab, seed=model.table.seed
    )
    work = BigramModel(table=table, bias=model.bias.copy())
    logs: list[EpochLog] = []
    lr = config.lr
    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        losses = np.empty(steps_per_epoch)
        scores = np.full(steps_per_epoch, np.nan)
        for b in range(steps_per_epoch):
            pairs = corpus.sample_from_pools(pools, config.batch_size, config.seed, b)
            ce_loss, emb_grad, bias_grad = ce_batch_gradients(work, pairs)
            if not np.isfinite(ce_loss) or not np.all(np.isfinite(emb_grad)):
                raise TrainingError(f"non-finite loss or gradient at epoch {epoch}, batch {b}")
            loss = ce_loss
            if use_sca:
                sca_ids = np.unique(pairs[:, 0])
                state = coherence.compute_batch_state(spec, work.table, sca_ids, threads=threads)
                gradients = coherence.sca_gradient(state)
                trainer._check_finite(state, gradients, epoch, b)
                scores[b] = coherence.batch_coherence(state)
                trainer._project_scales(state, config.rho, config.spectral_mode)
                emb_grad[sca_ids] += config.lam * gradients
                loss = ce_loss + config.lam * state.loss
            work.table.vectors -= lr * emb_grad
            work.bias -= lr * bias_grad
            losses[b] = loss
            if on_batch is not None:
                on_batch(epoch, b, loss, float(scores[b]))
        epoch_score = float(np.mean(scores)) if use_sca else float("nan")
        logs.append(
            EpochLog(
                epoch=epoch,
                loss=float(losses.mean()),
                coherence=epoch_score,
                lr=lr,
                seconds=time.perf_counter() - started,
            )
        )
        if on_epoch is not None:
            on_epoch(epoch, work, logs[-1])
        if trainer.check_convergence(logs, config.window, config.tol):
            break
        lr = trainer.adapt_learning_rate(logs, lr)
    return work, logs


def train_baseline(
    model: BigramModel,
    documents: list[corpus.Document],
    config: TrainConfig,
    on_batch=None,
    on_epoch=None,
) -> tuple[BigramModel, list[EpochLog]]:
    """Pure cross-entropy training; the reference the joint run is pinned to."""
    return _run(model, documents, config, spec=None, threads=1, on_batch=on_batch, on_epoch=on_epoch)


def train_joint(
    model: BigramModel,
    documents: list[corpus.Document],
    spec: KernelSpec,
    config: TrainConfig,
    threads: int = 1,
    on_batch=None,
    on_epoch=None,
) -> tuple[BigramModel, list[EpochLog]]:
    """Cross-entropy plus lam times the coherence objective.

    The coherence gradient is computed over the batch's distinct source
    tokens and added to their rows; with lam = 0 the coherence code path is
    skipped and the trajectory matches train_baseline exactly.
    """
    return _run(model, documents, config, spec=spec, threads=threads, on_batch=on_batch, on_epoch=on_epoch)
