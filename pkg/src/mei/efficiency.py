"""Parameter counting and the optimal partition size.

With ``D = K*C`` for both entities and relations, a model with per-partition
cores has ``T = (|E| + |R|) D + K C^3`` parameters and ``|R| K C^2`` degrees of
freedom in its relation-generated matching matrices. Their ratio

    P(C) = |R| C / (|E| + |R| + C^2)

does not depend on ``D`` or ``K`` and peaks at ``C = sqrt(|E| + |R|)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .model import ConfigError


def _check_dims(D, K, C):
    if min(D, K, C) < 1:
        raise ConfigError(f"D, K, C must be positive, got D={D}, K={K}, C={C}")
    if D != K * C:
        raise ConfigError(f"D must equal K*C, got D={D}, K={K}, C={C}")


def param_count(num_entities, num_relations, D, K, C, shared_core=True) -> int:
    _check_dims(D, K, C)
    n_cores = 1 if shared_core else K
    return (num_entities + num_relations) * D + n_cores * C ** 3


def expressiveness(num_relations, D, C) -> int:
    return num_relations * D * C


def efficiency(num_entities, num_relations, D, K, C) -> float:
    _check_dims(D, K, C)
    return expressiveness(num_relations, D, C) / param_count(
        num_entities, num_relations, D, K, C, shared_core=False)


def _better(num_total, a, b) -> bool:
    # P(a) > P(b) <=> a (N + b^2) > b (N + a^2), compared exactly in integers
    return a * (num_total + b * b) > b * (num_total + a * a)


def optimal_partition_size(num_entities, num_relations, D=None) -> int:
    """Floor or ceiling of ``sqrt(|E| + |R|)``, whichever has larger P
    (ties go to the floor), capped at ``D`` when ``D`` is given."""
    n = num_entities + num_relations
    if n < 1:
        raise ValueError("need at least one entity or relation")
    lo = math.isqrt(n)
    hi = lo if lo * lo == n else lo + 1
    best = hi if _better(n, hi, lo) else lo
    return best if D is None else min(best, D)


@dataclass
class EfficiencyReport:
    num_entities: int
    num_relations: int
    D: int
    K: int
    C: int
    shared_core: bool
    total: int
    T: int
    T_shared: int
    E_expr: int
    P: float
    C_opt: int
    C_star: int

    _FIELDS = ("num_entities", "num_relations", "D", "K", "C", "shared_core",
               "total", "T", "T_shared", "E_expr", "P", "C_opt", "C_star")

    def to_tsv(self) -> str:
        return "\t".join(str(getattr(self, f)) if f != "P" else f"{self.P:.10g}"
                         for f in self._FIELDS)

    def to_text(self) -> str:
        labels = {
            "num_entities": "entities |E|", "num_relations": "relations |R|",
            "D": "embedding size D", "K": "partitions K", "C": "partition size C",
            "shared_core": "shared core", "total": "params (this config)",
            "T": "params (K cores)",
            "T_shared": "params (shared core)", "E_expr": "expressiveness",
            "P": "efficiency P", "C_opt": "optimal C (unbounded)", "C_star": "optimal C (<= D)",
        }
        width = max(map(len, labels.values()))
        rows = []
        for f in self._FIELDS:
            v = getattr(self, f)
            v = f"{v:.6g}" if f == "P" else f"{v:,}" if isinstance(v, int) and not isinstance(v, bool) else v
            rows.append(f"{labels[f]:<{width}}  {v}")
        return "\n".join(rows)


def efficiency_report(num_entities, num_relations, D, K, C, shared_core=True) -> EfficiencyReport:
    _check_dims(D, K, C)
    return EfficiencyReport(
        num_entities, num_relations, D, K, C, shared_core,
        total=param_count(num_entities, num_relations, D, K, C, shared_core),
        T=param_count(num_entities, num_relations, D, K, C, shared_core=False),
        T_shared=param_count(num_entities, num_relations, D, K, C, shared_core=True),
        E_expr=expressiveness(num_relations, D, C),
        P=efficiency(num_entities, num_relations, D, K, C),
        C_opt=optimal_partition_size(num_entities, num_relations),
        C_star=optimal_partition_size(num_entities, num_relations, D),
    )
