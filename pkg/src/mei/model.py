"""Model parameters and the batched forward pass.

The local interaction for partition ``k`` is evaluated as a small linear
network::

    r_k --(site R_INPUT)--> r~ --core--> M --(site MATCHING_MATRIX)--> M~
    h_k --(site H_INPUT)--> h~ ;  h~^T M~ --(site HIDDEN_OUTPUT)--> q_k
    score = sum_k q_k . t_k

Each site optionally applies batch normalisation followed by inverted
dropout. Batch-norm features are the within-partition entries (``Cr``,
``Ce*Ce``, ``Ce``, ``Ce``); statistics are pooled over the batch and the
partitions. With every site disabled the forward pass is exactly
:func:`mei.scoring.mei_score`.
"""

from __future__ import annotations

import enum
import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class Site(str, enum.Enum):
    R_INPUT = "r_input"
    MATCHING_MATRIX = "matching_matrix"
    H_INPUT = "h_input"
    HIDDEN_OUTPUT = "hidden_output"


SITES = tuple(Site)


class FixedCore(str, enum.Enum):
    DISTMULT = "distmult"
    COMPLEX = "complex"
    SIMPLE = "simple"
    CP = "cp"


# (Ce, Cr) required by each fixed pattern
FIXED_CORE_SIZES = {
    FixedCore.DISTMULT: (1, 1),
    FixedCore.COMPLEX: (2, 2),
    FixedCore.SIMPLE: (2, 2),
    FixedCore.CP: (2, 2),
}


@dataclass
class SiteConfig:
    dropout: float = 0.0
    batchnorm: bool = False
    momentum: float = 0.1
    epsilon: float = 1e-5


@dataclass
class ModelConfig:
    K: int = 1
    Ce: int = 1
    Cr: int | None = None
    shared_core: bool = True
    init_scale: float = 0.1
    fixed_core: FixedCore | None = None
    sites: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.Cr is None:
            self.Cr = self.Ce
        if self.fixed_core is not None:
            self.fixed_core = FixedCore(self.fixed_core)
        sites = {}
        for site in SITES:
            cfg = self.sites.get(site, self.sites.get(site.value, SiteConfig()))
            sites[site] = SiteConfig(**cfg) if isinstance(cfg, dict) else cfg
        self.sites = sites
        self.validate()

    @property
    def De(self) -> int:
        return self.K * self.Ce

    @property
    def Dr(self) -> int:
        return self.K * self.Cr

    @property
    def num_cores(self) -> int:
        return 1 if self.shared_core else self.K

    def feature_size(self, site: Site) -> int:
        return {Site.R_INPUT: self.Cr, Site.MATCHING_MATRIX: self.Ce * self.Ce,
                Site.H_INPUT: self.Ce, Site.HIDDEN_OUTPUT: self.Ce}[site]

    def validate(self):
        for name in ("K", "Ce", "Cr"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v}")
        if self.init_scale < 0:
            raise ConfigError("init_scale must be >= 0")
        for site, sc in self.sites.items():
            if not 0.0 <= sc.dropout < 1.0:
                raise ConfigError(f"dropout for {site.value} must be in [0, 1), got {sc.dropout}")
            if sc.epsilon < 0 or not 0.0 <= sc.momentum <= 1.0:
                raise ConfigError(f"invalid batchnorm settings for {site.value}")
        if self.fixed_core is not None:
            want = FIXED_CORE_SIZES[self.fixed_core]
            if (self.Ce, self.Cr) != want:
                raise ConfigError(f"{self.fixed_core.value} core needs (Ce, Cr)={want}, "
                                  f"got {(self.Ce, self.Cr)}")
            if not self.shared_core:
                raise ConfigError("fixed cores are always shared")

    def to_dict(self) -> dict:
        return {
            "K": self.K, "Ce": self.Ce, "Cr": self.Cr, "shared_core": self.shared_core,
            "init_scale": self.init_scale,
            "fixed_core": self.fixed_core.value if self.fixed_core else None,
            "sites": {s.value: asdict(c) for s, c in self.sites.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["sites"] = {Site(k): SiteConfig(**v) for k, v in d.get("sites", {}).items()}
        return cls(**d)


@dataclass
class ModelState:
    config: ModelConfig
    num_entities: int
    num_relations: int
    params: dict
    running: dict
    training: bool = False
    seed: int | None = None

    @property
    def entity_table(self) -> np.ndarray:
        return self.params["entity"]

    @property
    def relation_table(self) -> np.ndarray:
        return self.params["relation"]

    @property
    def cores(self) -> np.ndarray:
        return self.params["core"]

    def trainable_names(self) -> list[str]:
        names = ["entity", "relation"]
        if self.config.fixed_core is None:
            names.append("core")
        for site in SITES:
            if self.config.sites[site].batchnorm:
                names += [f"bn.{site.value}.scale", f"bn.{site.value}.shift"]
        return names

    def copy(self) -> "ModelState":
        return ModelState(self.config, self.num_entities, self.num_relations,
                          {k: v.copy() for k, v in self.params.items()},
                          {k: v.copy() for k, v in self.running.items()},
                          self.training, self.seed)


def make_fixed_core(pattern) -> np.ndarray:
    """Read-only core realising a classic model inside one partition.

    Entries below use 0-based ``[x, y, z]``.
    """
    pattern = FixedCore(pattern)
    ce, cr = FIXED_CORE_SIZES[pattern]
    w = np.zeros((ce, ce, cr))
    if pattern is FixedCore.DISTMULT:
        w[0, 0, 0] = 1.0
    elif pattern is FixedCore.COMPLEX:
        # rotation block [[r1, -r2], [r2, r1]]
        w[0, 0, 0] = 1.0
        w[0, 1, 1] = -1.0
        w[1, 0, 1] = 1.0
        w[1, 1, 0] = 1.0
    elif pattern is FixedCore.SIMPLE:
        # reflection block [[0, r], [r_inv, 0]]
        w[0, 1, 0] = 1.0
        w[1, 0, 1] = 1.0
    else:
        w[0, 1, 0] = 1.0
    w.flags.writeable = False
    return w


def init_model(config: ModelConfig, sizes, seed: int = 0) -> ModelState:
    """Uniform ``[-init_scale, init_scale]`` init; deterministic in ``seed``.

    ``sizes`` is a vocabulary/triple store or a ``(num_entities, num_relations)`` pair.
    """
    if hasattr(sizes, "num_entities"):
        num_entities, num_relations = sizes.num_entities, sizes.num_relations
    else:
        num_entities, num_relations = sizes
    if num_entities < 1 or num_relations < 1:
        raise ConfigError("need at least one entity and one relation")
    rng = np.random.default_rng(seed)
    s = config.init_scale
    params = {
        "entity": rng.uniform(-s, s, size=(num_entities, config.De)),
        "relation": rng.uniform(-s, s, size=(num_relations, config.Dr)),
    }
    if config.fixed_core is None:
        params["core"] = rng.uniform(-s, s, size=(config.num_cores, config.Ce, config.Ce, config.Cr))
    else:
        params["core"] = np.array(make_fixed_core(config.fixed_core))[None]
    running = {}
    for site in SITES:
        if config.sites[site].batchnorm:
            f = config.feature_size(site)
            params[f"bn.{site.value}.scale"] = np.ones(f)
            params[f"bn.{site.value}.shift"] = np.zeros(f)
            running[f"bn.{site.value}.mean"] = np.zeros(f)
            running[f"bn.{site.value}.var"] = np.ones(f)
    return ModelState(config, int(num_entities), int(num_relations), params, running,
                      training=False, seed=seed)


# ---------------------------------------------------------------------------
# forward pass


def _site_forward(state, site, x, training, masks, rng, cache):
    """BN (optional) then inverted dropout on ``x`` of shape ``(B, K, F)``."""
    sc = state.config.sites[site]
    c = {"bn": sc.batchnorm, "training": training}
    y = x
    if sc.batchnorm:
        key = f"bn.{site.value}"
        if training:
            mean = x.mean(axis=(0, 1))
            var = x.var(axis=(0, 1))
            c["batch_mean"], c["batch_var"], c["n"] = mean, var, x.shape[0] * x.shape[1]
        else:
            mean, var = state.running[key + ".mean"], state.running[key + ".var"]
        inv = 1.0 / np.sqrt(var + sc.epsilon)
        xhat = (x - mean) * inv
        c["xhat"], c["inv"] = xhat, inv
        y = state.params[key + ".scale"] * xhat + state.params[key + ".shift"]
    mask = None
    if training and sc.dropout > 0.0:
        if masks is not None and site in masks:
            mask = masks[site]
            if mask.shape != y.shape:
                raise ValueError(f"dropout mask for {site.value} has shape {mask.shape}, "
                                 f"expected {y.shape}")
        else:
            if rng is None:
                raise ValueError("training-mode dropout needs an rng or fixed masks")
            mask = (rng.random(y.shape) >= sc.dropout) / (1.0 - sc.dropout)
        y = y * mask
    c["mask"] = mask
    cache["sites"][site] = c
    return y


def matching_matrices(state, r_vectors):
    """``(B, K, Cr) -> (B, K, Ce, Ce)`` via the (shared or per-partition) cores."""
    cfg = state.config
    W = state.params["core"].reshape(cfg.num_cores, cfg.Ce * cfg.Ce, cfg.Cr)
    if cfg.num_cores == 1:
        m = r_vectors @ W[0].T
    else:
        m = np.einsum("bkz,kez->bke", r_vectors, W)
    return m.reshape(r_vectors.shape[0], cfg.K, cfg.Ce, cfg.Ce)


def query_vectors(state: ModelState, h_ids, r_ids, training=None, masks=None, rng=None):
    """Hidden outputs ``q`` of shape ``(B, K*Ce)``; ``score(h, t, r) = q . t``.

    Returns ``(q, cache)``. The cache keeps intermediate values for the
    backward pass, including the dropout masks used (``cache["masks"]``), so a
    second call with ``masks=cache["masks"]`` reproduces the same draw.
    """
    cfg = state.config
    if training is None:
        training = state.training
    h_ids = np.asarray(h_ids, dtype=np.int64).reshape(-1)
    r_ids = np.asarray(r_ids, dtype=np.int64).reshape(-1)
    _check_ids(h_ids, state.num_entities, "entity")
    _check_ids(r_ids, state.num_relations, "relation")
    B, K, Ce, Cr = len(h_ids), cfg.K, cfg.Ce, cfg.Cr
    cache = {"h_ids": h_ids, "r_ids": r_ids, "training": training, "sites": {}}

    xr = state.params["relation"][r_ids].reshape(B, K, Cr)
    ar = _site_forward(state, Site.R_INPUT, xr, training, masks, rng, cache)
    m = matching_matrices(state, ar)
    am = _site_forward(state, Site.MATCHING_MATRIX, m.reshape(B, K, Ce * Ce),
                       training, masks, rng, cache).reshape(B, K, Ce, Ce)
    xh = state.params["entity"][h_ids].reshape(B, K, Ce)
    ah = _site_forward(state, Site.H_INPUT, xh, training, masks, rng, cache)
    hidden = np.matmul(ah[:, :, None, :], am)[:, :, 0, :]
    q = _site_forward(state, Site.HIDDEN_OUTPUT, hidden, training, masks, rng, cache)
    cache.update(ar=ar, am=am, ah=ah)
    cache["masks"] = {s: c["mask"] for s, c in cache["sites"].items() if c["mask"] is not None}
    return q.reshape(B, K * Ce), cache


def _check_ids(ids, n, kind):
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"{kind} id out of range [0, {n})")


def score_triples(state, h_ids, t_ids, r_ids, training=None, masks=None, rng=None):
    """Scores of aligned ``(h, t, r)`` arrays; returns ``(scores, cache)``."""
    q, cache = query_vectors(state, h_ids, r_ids, training, masks, rng)
    t_ids = np.asarray(t_ids, dtype=np.int64).reshape(-1)
    _check_ids(t_ids, state.num_entities, "entity")
    cache["t_ids"] = t_ids
    cache["q"] = q
    return np.einsum("bd,bd->b", q, state.params["entity"][t_ids]), cache


def score_all_tails(state, h_ids, r_ids, training=None, masks=None, rng=None):
    """1-N scores ``(B, |E|)``: one matching matrix per query, reused for every tail."""
    q, cache = query_vectors(state, h_ids, r_ids, training, masks, rng)
    cache["q"] = q
    return q @ state.params["entity"].T, cache


def forward_score(state, h_id, t_id, r_id, masks=None, rng=None) -> float:
    s, _ = score_triples(state, [h_id], [t_id], [r_id], masks=masks, rng=rng)
    return float(s[0])


def forward_scores_1N(state, h_id, r_id, masks=None, rng=None) -> np.ndarray:
    s, _ = score_all_tails(state, [h_id], [r_id], masks=masks, rng=rng)
    return s[0]


def _inference_affine(state, site):
    """Inference-mode site as ``a * x + b`` per feature (dropout is inactive)."""
    sc = state.config.sites[site]
    if not sc.batchnorm:
        return 1.0, 0.0
    key = f"bn.{site.value}"
    inv = 1.0 / np.sqrt(state.running[key + ".var"] + sc.epsilon)
    a = state.params[key + ".scale"] * inv
    return a, state.params[key + ".shift"] - a * state.running[key + ".mean"]


def forward_scores_heads(state, t_id, r_id) -> np.ndarray:
    """Inference-mode scores of ``(e, t_id, r_id)`` for every entity ``e``.

    In inference mode the head-side sites are affine, so the score is affine
    in the head embedding and all heads are scored with one matrix-vector product.
    """
    cfg = state.config
    K, Ce = cfg.K, cfg.Ce
    _check_ids(np.array([t_id]), state.num_entities, "entity")
    _check_ids(np.array([r_id]), state.num_relations, "relation")
    cache = {"sites": {}}
    xr = state.params["relation"][[r_id]].reshape(1, K, cfg.Cr)
    ar = _site_forward(state, Site.R_INPUT, xr, False, None, None, cache)
    m = matching_matrices(state, ar).reshape(1, K, Ce * Ce)
    am = _site_forward(state, Site.MATCHING_MATRIX, m, False, None, None, cache).reshape(K, Ce, Ce)
    t = state.params["entity"][t_id].reshape(K, Ce)
    a_out, b_out = _inference_affine(state, Site.HIDDEN_OUTPUT)
    a_in, b_in = _inference_affine(state, Site.H_INPUT)
    v = np.matmul(am, (a_out * t)[..., None])[..., 0]
    const = np.sum(b_out * t) + np.sum(b_in * v)
    return state.params["entity"] @ (a_in * v).reshape(-1) + const


def update_running_stats(state: ModelState, cache):
    """Fold the batch statistics of a training-mode forward into the running ones."""
    for site, c in cache["sites"].items():
        if not (c["bn"] and c["training"]):
            continue
        sc = state.config.sites[site]
        key = f"bn.{site.value}"
        n = c["n"]
        unbiased = c["batch_var"] * n / (n - 1) if n > 1 else c["batch_var"]
        state.running[key + ".mean"] *= 1.0 - sc.momentum
        state.running[key + ".mean"] += sc.momentum * c["batch_mean"]
        state.running[key + ".var"] *= 1.0 - sc.momentum
        state.running[key + ".var"] += sc.momentum * unbiased


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"MEICKPT\x00"
FORMAT_VERSION = 1


def _array_order(state):
    names = ["entity", "relation", "core"]
    for site in SITES:
        if state.config.sites[site].batchnorm:
            v = site.value
            names += [f"bn.{v}.scale", f"bn.{v}.shift", f"bn.{v}.mean", f"bn.{v}.var"]
    return names


def _lookup(state, name):
    return state.running[name] if name in state.running else state.params[name]


def save_checkpoint(path, state: ModelState, vocab=None, extra=None):
    """Write a header followed by little-endian float64 arrays in fixed order.

    Layout: 8-byte magic, 8-byte little-endian header length, UTF-8 JSON
    header, then the raw arrays (entity table, relation table, cores,
    batch-norm scale/shift/mean/var per enabled site).
    """
    names = _array_order(state)
    arrays = [np.ascontiguousarray(_lookup(state, n), dtype="<f8") for n in names]
    payload = b"".join(a.tobytes() for a in arrays)
    header = {
        "format_version": FORMAT_VERSION,
        "num_entities": state.num_entities,
        "num_relations": state.num_relations,
        "config": state.config.to_dict(),
        "seed": state.seed,
        "arrays": [[n, list(a.shape)] for n, a in zip(names, arrays)],
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    if vocab is not None:
        header["entity_names"] = list(vocab.entity_names)
        header["relation_names"] = list(vocab.relation_names)
    if extra:
        header["extra"] = extra
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(state, header)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16 or data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
        if header["format_version"] != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {header['format_version']}")
        config = ModelConfig.from_dict(header["config"])
        ne, nr = int(header["num_entities"]), int(header["num_relations"])
        layout = header["arrays"]
    except CheckpointError:
        raise
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupted checkpoint header ({exc})") from exc
    payload = data[16 + hlen:]
    if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise CheckpointError(f"{path}: checksum mismatch, checkpoint data is corrupted")
    state = ModelState(config, ne, nr, {}, {}, training=False, seed=header.get("seed"))
    expected = _array_order(state)
    if [n for n, _ in layout] != expected:
        raise CheckpointError(f"{path}: array layout does not match its configuration")
    offset = 0
    for name, shape in layout:
        size = int(np.prod(shape)) * 8
        arr = np.frombuffer(payload, dtype="<f8", count=size // 8, offset=offset)
        arr = arr.astype(np.float64).reshape(shape)
        offset += size
        if name.endswith(".mean") or name.endswith(".var"):
            state.running[name] = arr
        else:
            state.params[name] = arr
    if offset != len(payload):
        raise CheckpointError(f"{path}: trailing or missing array data")
    if state.params["entity"].shape != (ne, config.De):
        raise CheckpointError(f"{path}: entity table shape disagrees with header")
    return state, header
