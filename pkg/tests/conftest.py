import os

import numpy as np
import pytest

from mei.data import TripleStore, Vocabulary, write_split
from mei.synthetic import group_cycle_graph


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_store():
    # 4 entities, 2 relations, 3 triples spread over the splits
    splits = {
        "train": np.array([[0, 1, 0], [0, 2, 0]]),
        "valid": np.empty((0, 3), dtype=np.int64),
        "test": np.array([[2, 3, 1]]),
    }
    return TripleStore(splits, 4, 2)


def write_tsv(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write("\t".join(row) + "\n")


@pytest.fixture
def toy_dir(tmp_path):
    """The synthetic group/cycle KG written as a benchmark-style directory."""
    store, vocab, _ = group_cycle_graph(seed=0)
    d = tmp_path / "toy"
    d.mkdir()
    write_split(d / "train.txt", store.train, vocab)
    write_split(d / "valid.txt", store.test[:25], vocab)
    write_split(d / "test.txt", store.test[25:], vocab)
    return str(d)


def make_benchmark_files(directory, entities, relations, train, valid, test, seed=0):
    """Random TSV splits with exactly the requested vocabulary and split sizes."""
    rng = np.random.default_rng(seed)
    n_chain = (entities + 1) // 2
    # a chain of triples that mentions every entity and relation in train
    chain = np.array([(2 * i % entities, (2 * i + 1) % entities, i % relations)
                      for i in range(n_chain)])
    chain_codes = (chain[:, 0] * entities + chain[:, 1]) * relations + chain[:, 2]
    need = train + valid + test - n_chain
    codes = np.unique(rng.integers(0, entities * entities * relations, size=int(need * 1.05) + 100))
    codes = np.setdiff1d(codes, chain_codes)
    codes = rng.permutation(codes)[:need]
    rest = np.column_stack([codes // relations // entities, codes // relations % entities,
                            codes % relations])
    triples = np.concatenate([chain, rest])
    bounds = np.cumsum([train, valid])
    vocab = Vocabulary.from_names([f"e{i}" for i in range(entities)],
                                  [f"r{i}" for i in range(relations)])
    for name, part in zip(("train", "valid", "test"), np.split(triples, bounds)):
        write_split(directory / f"{name}.txt", part, vocab)


def real_dataset(name):
    root = os.environ.get("MEI_DATA_DIR")
    if not root or not os.path.isdir(os.path.join(root, name)):
        pytest.skip(f"{name} not available under $MEI_DATA_DIR")
    return os.path.join(root, name)
