"""Losses, hand-written gradients, Adam and the training loop."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .model import (ConfigError, ModelState, Site, score_all_tails, score_triples,
                    update_running_stats)

logger = logging.getLogger(__name__)


class LossMode(str, enum.Enum):
    BINARY_CE_SAMPLED = "binary_ce_sampled"
    BINARY_CE_1N = "binary_ce_1n"
    SOFTMAX_1N = "softmax_1n"


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, batch, max_abs_score):
        self.epoch, self.batch, self.max_abs_score = epoch, batch, max_abs_score
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch} "
                         f"(max |score| = {max_abs_score:.3e})")


@dataclass
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 1e-3
    decay_rate: float = 1.0
    epochs: int = 10
    loss_mode: LossMode = LossMode.BINARY_CE_1N
    negatives_per_positive: int = 1
    l3_weight: float = 0.0
    l3_include_core: bool = False
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.loss_mode = LossMode(self.loss_mode)
        self.validate()

    def validate(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0 < self.decay_rate <= 1:
            raise ConfigError(f"decay_rate must be in (0, 1], got {self.decay_rate}")
        if self.epochs < 0 or self.negatives_per_positive < 0:
            raise ConfigError("epochs and negatives_per_positive must be >= 0")
        if self.l3_weight < 0:
            raise ConfigError("l3_weight must be >= 0")


# ---------------------------------------------------------------------------
# losses


def loss_binary_ce(scores, labels) -> float:
    """Summed logistic cross-entropy, ``sum softplus(s) - y*s``."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape:
        raise ValueError(f"scores {s.shape} and labels {y.shape} differ in shape")
    return float(np.sum(np.logaddexp(0.0, s) - y * s))


def _logsumexp(s, axis=-1):
    m = np.max(s, axis=axis, keepdims=True)
    return (m + np.log(np.sum(np.exp(s - m), axis=axis, keepdims=True))).squeeze(axis)


def loss_softmax_1N(scores, true_set) -> float:
    """Mean over true entities of ``-log softmax(scores)[t]``."""
    s = np.asarray(scores, dtype=np.float64)
    idx = np.fromiter(true_set, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("softmax loss needs at least one true entity")
    return float(_logsumexp(s) - s[idx].mean())


def l3_penalty(state: ModelState, weight: float, include_core: bool = False) -> float:
    """``weight * sum |theta|^3`` over the embedding tables (and optionally cores)."""
    if weight == 0:
        return 0.0
    names = ["entity", "relation"] + (["core"] if include_core else [])
    return float(weight * sum(np.sum(np.abs(state.params[n]) ** 3) for n in names))


def sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


# ---------------------------------------------------------------------------
# batches


def negative_sample(positives, num_entities, negatives_per_positive, rng):
    """Corrupt head or tail (side and entity uniform) of every positive.

    Returns ``(triples, labels)``: each positive is followed by its
    corruptions. Corruptions are not filtered against known triples.
    """
    pos = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    n = negatives_per_positive
    if n == 0:
        return pos.copy(), np.ones(len(pos))
    neg = np.repeat(pos, n, axis=0)
    side = rng.integers(0, 2, size=len(neg))
    neg[np.arange(len(neg)), side] = rng.integers(0, num_entities, size=len(neg))
    out = np.concatenate([pos[:, None, :], neg.reshape(len(pos), n, 3)], axis=1).reshape(-1, 3)
    labels = np.tile(np.r_[1.0, np.zeros(n)], len(pos))
    return out, labels


@dataclass
class Batch:
    """One optimisation step's worth of data.

    Sampled mode uses ``triples``/``labels``; 1-N modes use the query pairs
    ``heads``/``relations`` and a dense ``(B, |E|)`` 0/1 ``targets`` matrix.
    """
    mode: LossMode
    triples: np.ndarray | None = None
    labels: np.ndarray | None = None
    heads: np.ndarray | None = None
    relations: np.ndarray | None = None
    targets: np.ndarray | None = None
    masks: dict | None = None

    @property
    def size(self) -> int:
        return len(self.triples) if self.triples is not None else len(self.heads)


def one_n_batch(mode, queries, labels_by_query, num_entities) -> Batch:
    queries = np.asarray(queries, dtype=np.int64).reshape(-1, 2)
    targets = np.zeros((len(queries), num_entities))
    for i, (h, r) in enumerate(queries.tolist()):
        targets[i, labels_by_query[(h, r)]] = 1.0
    return Batch(LossMode(mode), heads=queries[:, 0], relations=queries[:, 1], targets=targets)


# ---------------------------------------------------------------------------
# loss + gradient


def _scores(state, batch, rng):
    if batch.mode is LossMode.BINARY_CE_SAMPLED:
        tr = batch.triples
        return score_triples(state, tr[:, 0], tr[:, 1], tr[:, 2], training=True,
                             masks=batch.masks, rng=rng)
    return score_all_tails(state, batch.heads, batch.relations, training=True,
                           masks=batch.masks, rng=rng)


def _data_loss(batch, S):
    """Mean per-row data loss and its gradient w.r.t. the scores."""
    B = S.shape[0]
    if batch.mode is LossMode.BINARY_CE_SAMPLED:
        y = batch.labels
        return loss_binary_ce(S, y) / B, (sigmoid(S) - y) / B
    Y = batch.targets
    if batch.mode is LossMode.BINARY_CE_1N:
        return loss_binary_ce(S, Y) / B, (sigmoid(S) - Y) / B
    n_true = Y.sum(axis=1, keepdims=True)
    if np.any(n_true == 0):
        raise ValueError("softmax loss needs at least one true entity per query")
    lse = _logsumexp(S, axis=1)
    loss = np.sum(lse - (Y * S).sum(axis=1) / n_true[:, 0]) / B
    P = np.exp(S - lse[:, None])
    return float(loss), (P - Y / n_true) / B


def _touched_rows(batch):
    if batch.mode is LossMode.BINARY_CE_SAMPLED:
        tr = batch.triples
        return np.unique(tr[:, :2]), np.unique(tr[:, 2])
    ents = np.union1d(batch.heads, np.nonzero(batch.targets.any(axis=0))[0])
    return ents, np.unique(batch.relations)


def _l3_term(state, batch, config, grads):
    """L3 on the embedding rows the batch touches (plus cores if configured)."""
    w = config.l3_weight
    if w == 0:
        return 0.0
    ents, rels = _touched_rows(batch)
    total = 0.0
    for name, rows in (("entity", ents), ("relation", rels)):
        x = state.params[name][rows]
        total += np.sum(np.abs(x) ** 3)
        grads[name][rows] += 3.0 * w * np.abs(x) * x
    if config.l3_include_core and "core" in grads:
        x = state.params["core"]
        total += np.sum(np.abs(x) ** 3)
        grads["core"] += 3.0 * w * np.abs(x) * x
    return float(w * total)


def _site_backward(state, site, dy, c, grads):
    if c["mask"] is not None:
        dy = dy * c["mask"]
    if not c["bn"]:
        return dy
    key = f"bn.{site.value}"
    xhat, inv = c["xhat"], c["inv"]
    if key + ".scale" in grads:
        grads[key + ".scale"] += np.sum(dy * xhat, axis=(0, 1))
        grads[key + ".shift"] += np.sum(dy, axis=(0, 1))
    dxhat = dy * state.params[key + ".scale"]
    if not c["training"]:
        return dxhat * inv
    n = c["n"]
    return (inv / n) * (n * dxhat - dxhat.sum(axis=(0, 1))
                        - xhat * np.sum(dxhat * xhat, axis=(0, 1)))


def query_backward(state, cache, dq, grads):
    """Back-propagate ``dL/dq`` through the four sites into embeddings and cores."""
    cfg = state.config
    B, K, Ce, Cr = len(cache["h_ids"]), cfg.K, cfg.Ce, cfg.Cr
    sites = cache["sites"]
    d_hidden = _site_backward(state, Site.HIDDEN_OUTPUT, dq.reshape(B, K, Ce),
                              sites[Site.HIDDEN_OUTPUT], grads)
    am, ah, ar = cache["am"], cache["ah"], cache["ar"]
    d_ah = np.matmul(am, d_hidden[..., None])[..., 0]
    d_am = ah[..., :, None] * d_hidden[..., None, :]
    d_xh = _site_backward(state, Site.H_INPUT, d_ah, sites[Site.H_INPUT], grads)
    np.add.at(grads["entity"], cache["h_ids"], d_xh.reshape(B, K * Ce))
    d_m = _site_backward(state, Site.MATCHING_MATRIX, d_am.reshape(B, K, Ce * Ce),
                         sites[Site.MATCHING_MATRIX], grads)
    W = state.params["core"].reshape(cfg.num_cores, Ce * Ce, Cr)
    if cfg.num_cores == 1:
        d_ar = d_m @ W[0]
        if "core" in grads:
            grads["core"] += (d_m.reshape(-1, Ce * Ce).T @ ar.reshape(-1, Cr)).reshape(1, Ce, Ce, Cr)
    else:
        d_ar = np.einsum("bke,kez->bkz", d_m, W)
        if "core" in grads:
            grads["core"] += np.einsum("bke,bkz->kez", d_m, ar).reshape(K, Ce, Ce, Cr)
    d_xr = _site_backward(state, Site.R_INPUT, d_ar, sites[Site.R_INPUT], grads)
    np.add.at(grads["relation"], cache["r_ids"], d_xr.reshape(B, K * Cr))


def loss_and_gradients(state: ModelState, batch: Batch, config: TrainConfig, rng=None):
    """Training-mode loss of ``batch`` and its exact gradient.

    Returns ``(loss, grads, cache)``; ``grads`` maps every trainable parameter
    name to an array of its shape. Dropout masks are drawn from ``rng`` unless
    ``batch.masks`` pins them.
    """
    grads = {n: np.zeros_like(state.params[n]) for n in state.trainable_names()}
    S, cache = _scores(state, batch, rng)
    data_loss, dS = _data_loss(batch, S)
    E = state.params["entity"]
    q = cache["q"]
    if batch.mode is LossMode.BINARY_CE_SAMPLED:
        t_ids = cache["t_ids"]
        dq = dS[:, None] * E[t_ids]
        np.add.at(grads["entity"], t_ids, dS[:, None] * q)
    else:
        dq = dS @ E
        grads["entity"] += dS.T @ q
    query_backward(state, cache, dq, grads)
    loss = data_loss + _l3_term(state, batch, config, grads)
    cache["scores"] = S
    return loss, grads, cache


def backward(state: ModelState, batch: Batch, config: TrainConfig, rng=None) -> dict:
    return loss_and_gradients(state, batch, config, rng)[1]


def batch_loss(state, batch, config) -> float:
    """Loss only; ``batch.masks`` must be set if any site uses dropout."""
    return loss_and_gradients(state, batch, config)[0]


# ---------------------------------------------------------------------------
# Adam


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_optimizer(state: ModelState, beta1=0.9, beta2=0.999, eps=1e-8) -> OptimizerState:
    names = state.trainable_names()
    return OptimizerState({n: np.zeros_like(state.params[n]) for n in names},
                          {n: np.zeros_like(state.params[n]) for n in names},
                          0, beta1, beta2, eps)


def adam_step(state: ModelState, opt: OptimizerState, grads: dict, lr: float) -> ModelState:
    """Bias-corrected Adam update, in place."""
    opt.step += 1
    bc1 = 1.0 - opt.beta1 ** opt.step
    bc2 = 1.0 - opt.beta2 ** opt.step
    for name, g in grads.items():
        if name not in opt.m:
            opt.m[name] = np.zeros_like(g)
            opt.v[name] = np.zeros_like(g)
        m, v = opt.m[name], opt.v[name]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * (g * g)
        state.params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
    return state


# ---------------------------------------------------------------------------
# training loop


def _batches(store, config, num_entities, rng_shuffle, rng_sample, labels_by_query, queries):
    bs = config.batch_size
    if config.loss_mode is LossMode.BINARY_CE_SAMPLED:
        train = store.train[rng_shuffle.permutation(len(store.train))]
        for i in range(0, len(train), bs):
            tr, y = negative_sample(train[i:i + bs], num_entities,
                                    config.negatives_per_positive, rng_sample)
            yield Batch(config.loss_mode, triples=tr, labels=y)
    else:
        order = queries[rng_shuffle.permutation(len(queries))]
        for i in range(0, len(order), bs):
            yield one_n_batch(config.loss_mode, order[i:i + bs], labels_by_query, num_entities)


def format_epoch_record(rec: dict) -> str:
    """``epoch<TAB>loss<TAB>lr`` plus ``valid_mrr`` when present."""
    line = f"{rec['epoch']}\t{rec['loss']:.10g}\t{rec['lr']:.10g}"
    if rec.get("valid_mrr") is not None:
        line += f"\t{rec['valid_mrr']:.10g}"
    return line


def train(store, state: ModelState, config: TrainConfig, callback=None, log_file=None,
          optimizer: OptimizerState | None = None):
    """Mini-batch Adam with per-epoch learning-rate decay.

    ``callback(epoch, state)`` may return a dict merged into the epoch record
    (the CLI uses it for periodic validation). Returns ``(state, history)``.
    """
    config.validate()
    streams = np.random.SeedSequence(config.seed).spawn(3)
    rng_shuffle, rng_sample, rng_dropout = (np.random.default_rng(s) for s in streams)
    opt = optimizer or init_optimizer(state, config.beta1, config.beta2, config.adam_eps)
    labels_by_query = queries = None
    if config.loss_mode is not LossMode.BINARY_CE_SAMPLED:
        labels_by_query = store.train_tails()
        queries = np.array(sorted(labels_by_query), dtype=np.int64).reshape(-1, 2)
    history = []
    state.training = True
    try:
        for epoch in range(config.epochs):
            lr = config.learning_rate * config.decay_rate ** epoch
            total, count = 0.0, 0
            for b, batch in enumerate(_batches(store, config, state.num_entities, rng_shuffle,
                                               rng_sample, labels_by_query, queries)):
                loss, grads, cache = loss_and_gradients(state, batch, config, rng_dropout)
                if not np.isfinite(loss) or any(not np.all(np.isfinite(g)) for g in grads.values()):
                    S = cache["scores"]
                    raise TrainingDiverged(epoch, b, float(np.max(np.abs(S))))
                update_running_stats(state, cache)
                adam_step(state, opt, grads, lr)
                total += loss
                count += 1
            rec = {"epoch": epoch, "loss": total / max(count, 1), "lr": lr}
            if callback is not None:
                state.training = False
                rec.update(callback(epoch, state) or {})
                state.training = True
            history.append(rec)
            logger.info(format_epoch_record(rec))
            if log_file is not None:
                log_file.write(format_epoch_record(rec) + "\n")
                log_file.flush()
    finally:
        state.training = False
    return state, history
