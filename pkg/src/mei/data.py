"""Triple files, vocabularies and the filter sets used by filtered ranking."""

from __future__ import annotations

import logging
import os
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
INVERSE_SUFFIX = "_reverse"


class DatasetError(ValueError):
    """Raised for unreadable or inconsistent triple data."""


@dataclass
class Vocabulary:
    entity_names: list[str] = field(default_factory=list)
    relation_names: list[str] = field(default_factory=list)
    entity_index: dict[str, int] = field(default_factory=dict)
    relation_index: dict[str, int] = field(default_factory=dict)

    @property
    def num_entities(self) -> int:
        return len(self.entity_names)

    @property
    def num_relations(self) -> int:
        return len(self.relation_names)

    def add_entity(self, name: str) -> int:
        idx = self.entity_index.get(name)
        if idx is None:
            idx = len(self.entity_names)
            self.entity_index[name] = idx
            self.entity_names.append(name)
        return idx

    def add_relation(self, name: str) -> int:
        idx = self.relation_index.get(name)
        if idx is None:
            idx = len(self.relation_names)
            self.relation_index[name] = idx
            self.relation_names.append(name)
        return idx

    @classmethod
    def from_names(cls, entities, relations) -> "Vocabulary":
        vocab = cls()
        for name in entities:
            vocab.add_entity(name)
        for name in relations:
            vocab.add_relation(name)
        return vocab


class TripleStore:
    """Train/valid/test triples as ``(n, 3)`` int arrays of ``(h, t, r)`` ids.

    Filter maps cover the union of all splits: ``filter_map_tail[(h, r)]`` is
    the set of known tails and ``filter_map_head[(t, r)]`` the set of known heads.
    """

    def __init__(self, splits: dict, num_entities: int, num_relations: int,
                 inverse_augmented: bool = False):
        self.num_entities = int(num_entities)
        self.num_relations = int(num_relations)
        self.inverse_augmented = inverse_augmented
        self.splits = {}
        for name in SPLITS:
            arr = np.asarray(splits.get(name, np.empty((0, 3))), dtype=np.int64)
            self.splits[name] = arr.reshape(-1, 3)
        self._check_ids()
        self._build_filters()

    def _check_ids(self):
        for name, arr in self.splits.items():
            if arr.size == 0:
                continue
            if arr[:, :2].min() < 0 or arr[:, :2].max() >= self.num_entities:
                raise DatasetError(f"entity id out of range in split {name!r}")
            if arr[:, 2].min() < 0 or arr[:, 2].max() >= self.num_relations:
                raise DatasetError(f"relation id out of range in split {name!r}")

    def _build_filters(self):
        tails = defaultdict(set)
        heads = defaultdict(set)
        for arr in self.splits.values():
            for h, t, r in arr.tolist():
                tails[(h, r)].add(t)
                heads[(t, r)].add(h)
        self.filter_map_tail = dict(tails)
        self.filter_map_head = dict(heads)

    @property
    def train(self) -> np.ndarray:
        return self.splits["train"]

    @property
    def valid(self) -> np.ndarray:
        return self.splits["valid"]

    @property
    def test(self) -> np.ndarray:
        return self.splits["test"]

    def tail_candidates(self, h: int, r: int) -> frozenset:
        """Known true tails of ``(h, r)``; these are filtered out when ranking."""
        return frozenset(self.filter_map_tail.get((int(h), int(r)), ()))

    def head_candidates(self, t: int, r: int) -> frozenset:
        return frozenset(self.filter_map_head.get((int(t), int(r)), ()))

    def train_tails(self) -> dict:
        """``(h, r) -> sorted array of train-split tails``, the 1-N training labels."""
        grouped = defaultdict(list)
        for h, t, r in self.train.tolist():
            grouped[(h, r)].append(t)
        return {key: np.array(sorted(v), dtype=np.int64) for key, v in grouped.items()}

    def counts(self) -> dict:
        return {name: len(arr) for name, arr in self.splits.items()}

    def __repr__(self):
        c = self.counts()
        return (f"TripleStore(|E|={self.num_entities}, |R|={self.num_relations}, "
                f"train={c['train']}, valid={c['valid']}, test={c['test']}, "
                f"inverse_augmented={self.inverse_augmented})")


def _read_tsv(path, vocab: Vocabulary, seen_entities, seen_relations, split: str):
    triples = []
    seen = set()
    duplicates = 0
    unseen = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise DatasetError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}")
            head, rel, tail = (f.strip() for f in fields)
            if seen_entities is not None:
                unseen += (head not in seen_entities) + (tail not in seen_entities)
                unseen += rel not in seen_relations
            h = vocab.add_entity(head)
            t = vocab.add_entity(tail)
            r = vocab.add_relation(rel)
            key = (h, t, r)
            if key in seen:
                duplicates += 1
                continue
            seen.add(key)
            triples.append(key)
    if duplicates:
        logger.warning("%s: dropped %d duplicate triples", split, duplicates)
    return np.array(triples, dtype=np.int64).reshape(-1, 3), duplicates, unseen


def load_dataset(train_path, valid_path=None, test_path=None):
    """Read ``head<TAB>relation<TAB>tail`` files.

    Ids are assigned in first-appearance order over train, valid, then test.
    Returns ``(store, vocab, report)``; ``report`` holds per-split counts,
    dropped duplicates and the number of names first seen outside train.
    """
    vocab = Vocabulary()
    report = {"duplicates": {}, "unseen_in_train": 0}
    arrays = {}
    train_entities = train_relations = None
    for split, path in zip(SPLITS, (train_path, valid_path, test_path)):
        if path is None:
            arrays[split] = np.empty((0, 3), dtype=np.int64)
            continue
        if not os.path.exists(path):
            raise DatasetError(f"{split} file not found: {path}")
        arr, dups, unseen = _read_tsv(path, vocab, train_entities, train_relations, split)
        arrays[split] = arr
        report["duplicates"][split] = dups
        report["unseen_in_train"] += unseen
        if split == "train":
            if len(arr) == 0:
                raise DatasetError("no training triples")
            train_entities = set(vocab.entity_names)
            train_relations = set(vocab.relation_names)
    if report["unseen_in_train"]:
        logger.warning("%d entity/relation occurrences in valid/test are absent from train",
                       report["unseen_in_train"])
    store = TripleStore(arrays, vocab.num_entities, vocab.num_relations)
    report["counts"] = store.counts()
    return store, vocab, report


def load_dataset_dir(directory):
    """Load ``train.txt``/``valid.txt``/``test.txt`` from a benchmark directory."""
    paths = []
    for split in SPLITS:
        for ext in (".txt", ".tsv"):
            p = os.path.join(directory, split + ext)
            if os.path.exists(p):
                paths.append(p)
                break
        else:
            paths.append(None)
    if paths[0] is None:
        raise DatasetError(f"no train.txt in {directory}")
    return load_dataset(*paths)


def write_split(path, triples, vocab: Vocabulary):
    with open(path, "w", encoding="utf-8") as fh:
        for h, t, r in np.asarray(triples).tolist():
            fh.write(f"{vocab.entity_names[h]}\t{vocab.relation_names[r]}\t{vocab.entity_names[t]}\n")


def augment_inverse_relations(store: TripleStore, vocab: Vocabulary | None = None):
    """Add ``(t, h, r + |R|)`` for every ``(h, t, r)`` in every split.

    If ``vocab`` is given, a new vocabulary with ``<name>_reverse`` relations is
    returned alongside the store.
    """
    if store.inverse_augmented:
        raise DatasetError("store already has inverse relations")
    nr = store.num_relations
    splits = {}
    for name, arr in store.splits.items():
        inv = arr[:, [1, 0, 2]].copy()
        inv[:, 2] += nr
        splits[name] = np.concatenate([arr, inv], axis=0)
    out = TripleStore(splits, store.num_entities, 2 * nr, inverse_augmented=True)
    if vocab is None:
        return out
    new_vocab = Vocabulary.from_names(
        vocab.entity_names,
        list(vocab.relation_names) + [n + INVERSE_SUFFIX for n in vocab.relation_names])
    return out, new_vocab
