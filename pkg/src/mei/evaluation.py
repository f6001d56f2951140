"""Filtered link-prediction ranking (MRR, Hits@k)."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .model import ModelState, forward_score, forward_scores_heads, score_all_tails

HITS_AT = (1, 3, 10)


class Direction(str, enum.Enum):
    HEAD = "head"
    TAIL = "tail"


@dataclass
class RankResult:
    triple: tuple
    direction: Direction
    filtered_rank: float


@dataclass
class MetricsReport:
    split: str
    count: int
    mrr: float
    hits: dict
    ranks: np.ndarray = field(default=None, repr=False)

    def to_tsv(self) -> str:
        """``split, count, mrr, h1, h3, h10`` on one tab-separated line."""
        h = self.hits
        return f"{self.split}\t{self.count}\t{self.mrr:.6f}\t{h[1]:.6f}\t{h[3]:.6f}\t{h[10]:.6f}"

    def to_text(self) -> str:
        lines = [f"split:  {self.split}", f"count:  {self.count}", f"MRR:    {self.mrr:.6f}"]
        lines += [f"H@{k}:{' ' * (5 - len(str(k)))}{self.hits[k]:.6f}" for k in HITS_AT]
        return "\n".join(lines)


def filtered_rank(scores, true_idx, filtered) -> float:
    """``1 + #greater + #ties/2`` after dropping ``filtered`` (except the answer)."""
    scores = np.asarray(scores, dtype=np.float64)
    keep = np.ones(len(scores), dtype=bool)
    if filtered:
        keep[np.fromiter(filtered, dtype=np.int64)] = False
    keep[true_idx] = False
    target = scores[true_idx]
    pool = scores[keep]
    return 1.0 + np.count_nonzero(pool > target) + 0.5 * np.count_nonzero(pool == target)


def _check_inference(state):
    if state.training:
        raise RuntimeError("evaluation requires the model in inference mode")


def rank_triple(state: ModelState, triple, direction, store) -> RankResult:
    _check_inference(state)
    h, t, r = (int(x) for x in triple)
    direction = Direction(direction)
    if direction is Direction.TAIL:
        scores = score_all_tails(state, [h], [r], training=False)[0][0]
        rank = filtered_rank(scores, t, store.tail_candidates(h, r))
    else:
        scores = forward_scores_heads(state, t, r)
        rank = filtered_rank(scores, h, store.head_candidates(t, r))
    return RankResult((h, t, r), direction, rank)


def summarize_ranks(split, ranks) -> MetricsReport:
    """MRR and Hits@k over a flat array of (possibly fractional) ranks."""
    ranks = np.asarray(ranks, dtype=np.float64)
    return MetricsReport(split, len(ranks), float(np.mean(1.0 / ranks)),
                         {k: float(np.mean(ranks <= k)) for k in HITS_AT}, ranks)


def evaluate(state: ModelState, store, split="test", directions=(Direction.HEAD, Direction.TAIL),
             batch_size=256, triples=None) -> MetricsReport:
    """Rank every triple of ``split`` in each direction and summarise.

    Ranks are ordered triple by triple, head before tail. Passing ``triples``
    evaluates that subset instead of the named split (filters still come
    from the full store).
    """
    _check_inference(state)
    data = store.splits[split] if triples is None else np.asarray(triples).reshape(-1, 3)
    if len(data) == 0:
        raise ValueError(f"split {split!r} is empty")
    directions = [Direction(d) for d in directions]
    ranks = np.zeros((len(data), len(directions)))
    for j, d in enumerate(directions):
        if d is Direction.TAIL:
            for start in range(0, len(data), batch_size):
                chunk = data[start:start + batch_size]
                scores, _ = score_all_tails(state, chunk[:, 0], chunk[:, 2], training=False)
                for i, (row, (h, t, r)) in enumerate(zip(scores, chunk.tolist()), start=start):
                    ranks[i, j] = filtered_rank(row, t, store.filter_map_tail.get((h, r), ()))
        else:
            for i, (h, t, r) in enumerate(data.tolist()):
                scores = forward_scores_heads(state, t, r)
                ranks[i, j] = filtered_rank(scores, h, store.filter_map_head.get((t, r), ()))
    return summarize_ranks(split, ranks.reshape(-1))


def evaluate_bruteforce(state: ModelState, store, split="test", triples=None) -> MetricsReport:
    """Reference evaluator: builds every corrupted triple, scores it on its own
    and sorts the surviving list explicitly. Slow; meant for tests."""
    _check_inference(state)
    data = store.splits[split] if triples is None else np.asarray(triples).reshape(-1, 3)
    if len(data) == 0:
        raise ValueError(f"split {split!r} is empty")
    known = {tuple(x) for arr in store.splits.values() for x in arr.tolist()}
    ranks = []
    for h, t, r in data.tolist():
        for side in ("head", "tail"):
            pool = []
            for e in range(state.num_entities):
                cand = (e, t, r) if side == "head" else (h, e, r)
                if cand != (h, t, r) and cand in known:
                    continue
                pool.append((forward_score(state, *cand), cand == (h, t, r)))
            pool.sort(key=lambda x: -x[0])
            target = next(s for s, is_true in pool if is_true)
            positions = [pos for pos, (s, _) in enumerate(pool, start=1) if s == target]
            ranks.append(sum(positions) / len(positions))
    return summarize_ranks(split, ranks)


def reversal_ranks(state: ModelState, triples, rtol=1e-9) -> np.ndarray:
    """Rank of each ``(h, t, r)`` in the two-candidate pool ``{(h, t, r), (t, h, r)}``.

    1 if the given direction scores higher, 2 if lower, 1.5 on a tie. Scores
    within ``rtol`` (relative) count as tied, since ``h*r*t`` and ``t*r*h`` can
    differ in the last bit even for an exactly symmetric model.
    """
    _check_inference(state)
    ranks = []
    for h, t, r in np.asarray(triples).reshape(-1, 3).tolist():
        a = forward_score(state, h, t, r)
        b = forward_score(state, t, h, r)
        if abs(a - b) <= rtol * max(1.0, abs(a), abs(b)):
            ranks.append(1.5)
        else:
            ranks.append(1.0 if a > b else 2.0)
    return np.array(ranks)
