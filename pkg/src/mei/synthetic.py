"""Small synthetic knowledge graphs with known relation properties."""

from __future__ import annotations

import numpy as np

from .data import TripleStore, Vocabulary

SYMMETRIC, ANTISYMMETRIC = 0, 1


def group_cycle_graph(num_groups=10, group_size=5, reach=3, test_size=50, seed=0):
    """One symmetric and one antisymmetric relation over the same entities.

    Entities are split into random groups; relation 0 (``same_group``) links
    every ordered pair of distinct group members. Entities also sit on a
    hidden cycle; relation 1 (``precedes``) links ``a -> b`` when ``b`` is
    1..``reach`` steps after ``a``. ``test_size`` random ``precedes`` triples
    are held out as the test split; everything else is training data.

    The defaults give 50 entities, 300 training and 50 test triples.
    Returns ``(store, vocab, position)`` with ``position[e]`` the cycle slot of ``e``.
    """
    n = num_groups * group_size
    if not 0 < reach < n / 2:
        raise ValueError("reach must be positive and below half the cycle length")
    rng = np.random.default_rng(seed)

    groups = rng.permutation(n).reshape(num_groups, group_size)
    sym = [(a, b, SYMMETRIC) for g in groups.tolist() for a in g for b in g if a != b]

    position = rng.permutation(n)
    at = np.argsort(position)  # entity sitting at each slot
    anti = np.array([(at[i], at[(i + d) % n], ANTISYMMETRIC)
                     for i in range(n) for d in range(1, reach + 1)])
    if test_size >= len(anti):
        raise ValueError("test split would swallow every antisymmetric triple")
    anti = anti[rng.permutation(len(anti))]

    splits = {
        "train": np.concatenate([np.array(sym), anti[test_size:]]).astype(np.int64),
        "valid": np.empty((0, 3), dtype=np.int64),
        "test": anti[:test_size].astype(np.int64),
    }
    vocab = Vocabulary.from_names([f"e{i}" for i in range(n)], ["same_group", "precedes"])
    return TripleStore(splits, n, 2), vocab, position
