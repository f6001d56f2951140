"""Command-line driver: ``mei train | evaluate | predict | efficiency``.

Every training option can come from a flat ``key = value`` file passed with
``--config``; command-line flags override the file. Dataset arguments accept
a directory holding ``train.txt``/``valid.txt``/``test.txt`` or a bare name
looked up under ``$MEI_DATA_DIR``.
"""

from __future__ import annotations

import argparse
import dataclasses
import difflib
import logging
import os
import sys
import time
from dataclasses import dataclass, fields

import numpy as np

from .data import DatasetError, augment_inverse_relations, load_dataset, load_dataset_dir
from .efficiency import efficiency_report
from .evaluation import Direction, evaluate
from .model import (SITES, CheckpointError, ConfigError, ModelConfig, SiteConfig,
                    forward_scores_1N, init_model, load_checkpoint, save_checkpoint)
from .training import LossMode, TrainConfig, TrainingDiverged, train

logger = logging.getLogger("mei")

DATA_ENV = "MEI_DATA_DIR"


@dataclass
class RunConfig:
    # data
    dataset: str = ""
    train_path: str = ""
    valid_path: str = ""
    test_path: str = ""
    inverse_relations: bool = True
    # model
    K: int = 3
    Ce: int = 40
    Cr: int = 0  # 0 means "same as Ce"
    shared_core: bool = True
    init_scale: float = 0.1
    fixed_core: str = ""
    dropout_r_input: float = 0.0
    dropout_matching_matrix: float = 0.0
    dropout_h_input: float = 0.0
    dropout_hidden_output: float = 0.0
    batchnorm_r_input: bool = False
    batchnorm_matching_matrix: bool = False
    batchnorm_h_input: bool = False
    batchnorm_hidden_output: bool = False
    bn_momentum: float = 0.1
    bn_epsilon: float = 1e-5
    # optimisation
    batch_size: int = 128
    learning_rate: float = 1e-3
    decay_rate: float = 1.0
    epochs: int = 10
    loss_mode: str = LossMode.BINARY_CE_1N.value
    negatives_per_positive: int = 1
    l3_weight: float = 0.0
    l3_include_core: bool = False
    # run management
    eval_every: int = 1  # epochs between validation passes, 0 disables
    checkpoint: str = ""  # final checkpoint path, defaults to <output_dir>/final.ckpt
    output_dir: str = ""  # defaults to runs/<timestamp>_seed<seed>
    seed: int = 0

    def model_config(self) -> ModelConfig:
        sites = {s: SiteConfig(dropout=getattr(self, f"dropout_{s.value}"),
                               batchnorm=getattr(self, f"batchnorm_{s.value}"),
                               momentum=self.bn_momentum, epsilon=self.bn_epsilon)
                 for s in SITES}
        return ModelConfig(K=self.K, Ce=self.Ce, Cr=self.Cr or self.Ce,
                           shared_core=self.shared_core, init_scale=self.init_scale,
                           fixed_core=self.fixed_core or None, sites=sites)

    def train_config(self) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, learning_rate=self.learning_rate,
                           decay_rate=self.decay_rate, epochs=self.epochs,
                           loss_mode=self.loss_mode,
                           negatives_per_positive=self.negatives_per_positive,
                           l3_weight=self.l3_weight, l3_include_core=self.l3_include_core,
                           seed=self.seed)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_format_value(getattr(self, f.name))}\n" for f in fields(self))


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_PARSERS = {"bool": _parse_bool, "int": int, "float": float, "str": str}


def _convert(key, text):
    try:
        return _PARSERS[_FIELD_TYPES[key]](text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from exc


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in _FIELD_TYPES:
                close = difflib.get_close_matches(key, _FIELD_TYPES, n=3)
                hint = f" (did you mean {', '.join(close)}?)" if close else ""
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}{hint}")
            out[key] = _convert(key, value)
    return out


def resolve_dataset_dir(name: str) -> str:
    if os.path.isdir(name):
        return name
    root = os.environ.get(DATA_ENV)
    if root and os.path.isdir(os.path.join(root, name)):
        return os.path.join(root, name)
    where = f" or under ${DATA_ENV}={root}" if root else f" (set ${DATA_ENV} to a dataset root)"
    raise DatasetError(f"dataset {name!r} not found as a directory{where}")


def _load(cfg_dataset, train_path="", valid_path="", test_path=""):
    if train_path:
        for p in (train_path, valid_path, test_path):
            if p and not os.path.exists(p):
                raise DatasetError(f"file not found: {p}")
        return load_dataset(train_path, valid_path or None, test_path or None)
    if not cfg_dataset:
        raise ConfigError("no dataset given (use --dataset or --train-path)")
    return load_dataset_dir(resolve_dataset_dir(cfg_dataset))


# ---------------------------------------------------------------------------
# train


def _eval_directions(store):
    # with inverse relations every head query is a tail query on the reversed relation
    return (Direction.TAIL,) if store.inverse_augmented else (Direction.HEAD, Direction.TAIL)


def cmd_train(cfg: RunConfig) -> int:
    mcfg = cfg.model_config()
    tcfg = cfg.train_config()
    store, vocab, _ = _load(cfg.dataset, cfg.train_path, cfg.valid_path, cfg.test_path)
    if cfg.inverse_relations:
        store, vocab = augment_inverse_relations(store, vocab)
    logger.info("loaded %s", store)

    run_dir = cfg.output_dir or os.path.join(
        "runs", time.strftime("%Y%m%d-%H%M%S") + f"_seed{cfg.seed}")
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())

    state = init_model(mcfg, store, seed=cfg.seed)
    extra = {"inverse_relations": cfg.inverse_relations}
    directions = _eval_directions(store)
    has_valid = len(store.valid) > 0
    best = {"mrr": -1.0}
    best_path = os.path.join(run_dir, "best.ckpt")

    def on_epoch(epoch, st):
        last = epoch == tcfg.epochs - 1
        if not has_valid or cfg.eval_every <= 0 or not ((epoch + 1) % cfg.eval_every == 0 or last):
            return None
        rep = evaluate(st, store, "valid", directions=directions)
        if rep.mrr > best["mrr"]:
            best["mrr"] = rep.mrr
            save_checkpoint(best_path, st, vocab, extra={**extra, "epoch": epoch})
        return {"valid_mrr": rep.mrr}

    with open(os.path.join(run_dir, "epochs.log"), "w", encoding="utf-8") as log:
        state, history = train(store, state, tcfg, callback=on_epoch, log_file=log)

    final_path = cfg.checkpoint or os.path.join(run_dir, "final.ckpt")
    save_checkpoint(final_path, state, vocab, extra={**extra, "epoch": tcfg.epochs - 1})
    print(f"run directory: {run_dir}")
    print(f"final checkpoint: {final_path}")
    if has_valid:
        rep = evaluate(state, store, "valid", directions=directions)
        if best["mrr"] >= 0:
            print(f"best checkpoint: {best_path} (valid MRR {best['mrr']:.6f})")
        print(rep.to_text())
        print(rep.to_tsv())
    return 0


# ---------------------------------------------------------------------------
# evaluate / predict


def _load_for_checkpoint(header, dataset, train_path="", valid_path="", test_path=""):
    store, vocab, _ = _load(dataset, train_path, valid_path, test_path)
    if header.get("extra", {}).get("inverse_relations"):
        store, vocab = augment_inverse_relations(store, vocab)
    ne, nr = header["num_entities"], header["num_relations"]
    if (store.num_entities, store.num_relations) != (ne, nr):
        raise DatasetError(
            f"vocabulary size mismatch: checkpoint has {ne} entities and {nr} relations, "
            f"dataset has {store.num_entities} entities and {store.num_relations} relations")
    names = header.get("entity_names")
    if names is not None and (names != vocab.entity_names
                              or header.get("relation_names") != vocab.relation_names):
        raise DatasetError("checkpoint vocabulary does not match the dataset's id assignment")
    return store, vocab


def cmd_evaluate(checkpoint, dataset, split="test", train_path="", valid_path="",
                 test_path="") -> int:
    state, header = load_checkpoint(checkpoint)
    store, _ = _load_for_checkpoint(header, dataset, train_path, valid_path, test_path)
    rep = evaluate(state, store, split, directions=_eval_directions(store))
    print(rep.to_text())
    print(rep.to_tsv())
    return 0


def _lookup_name(name, index, kind):
    if name in index:
        return index[name]
    close = difflib.get_close_matches(name, list(index), n=5, cutoff=0.0)
    raise KeyError(f"unknown {kind} {name!r}; nearest: {', '.join(close)}")


def cmd_predict(checkpoint, head, relation, top_n=10, dataset="") -> int:
    state, header = load_checkpoint(checkpoint)
    ents, rels = header.get("entity_names"), header.get("relation_names")
    if ents is None or rels is None:
        raise CheckpointError(f"{checkpoint}: no vocabulary stored, cannot resolve names")
    h = _lookup_name(head, {n: i for i, n in enumerate(ents)}, "entity")
    r = _lookup_name(relation, {n: i for i, n in enumerate(rels)}, "relation")
    known = None
    if dataset:
        store, _ = _load_for_checkpoint(header, dataset)
        known = store.tail_candidates(h, r)
    scores = forward_scores_1N(state, h, r)
    top_n = min(max(top_n, 0), state.num_entities)
    # stable order: score descending, id ascending
    order = np.lexsort((np.arange(len(scores)), -scores))[:top_n]
    print("rank\tentity\tscore\tknown")
    for rank, e in enumerate(order.tolist(), 1):
        flag = "-" if known is None else ("yes" if e in known else "no")
        print(f"{rank}\t{ents[e]}\t{scores[e]:.6f}\t{flag}")
    return 0


# ---------------------------------------------------------------------------
# efficiency


def _resolve_dkc(D, K, C):
    given = sum(x is not None for x in (D, K, C))
    if given == 3:
        return D, K, C
    if D is not None and K is not None:
        if D % K:
            raise ConfigError(f"D={D} is not divisible by K={K}")
        return D, K, D // K
    if D is not None and C is not None:
        if D % C:
            raise ConfigError(f"D={D} is not divisible by C={C}")
        return D, D // C, C
    if K is not None and C is not None:
        return K * C, K, C
    if D is not None:
        return D, 1, D
    raise ConfigError("give at least two of --D, --K, --C (or --D alone for K=1)")


def cmd_efficiency(num_entities=None, num_relations=None, D=None, K=None, C=None,
                   shared=False, dataset="") -> int:
    D, K, C = _resolve_dkc(D, K, C)
    if D != K * C:
        raise ConfigError(f"D must equal K*C, got D={D}, K={K}, C={C}")
    if dataset:
        store, _, _ = load_dataset_dir(resolve_dataset_dir(dataset))
        num_entities, num_relations = store.num_entities, store.num_relations
    if num_entities is None or num_relations is None:
        raise ConfigError("give --E and --R, or --dataset")
    rep = efficiency_report(num_entities, num_relations, D, K, C, shared_core=shared)
    print(rep.to_text())
    print("#" + "\t".join(rep._FIELDS))
    print(rep.to_tsv())
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_run_flags(p):
    p.add_argument("--config", help="key = value file; flags override it")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            p.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            p.add_argument(flag, dest=f.name, type=_PARSERS[f.type], default=None)


def build_run_config(args) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return dataclasses.replace(RunConfig(), **values)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mei", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoints")
    _add_run_flags(p)

    p = sub.add_parser("evaluate", help="filtered MRR / Hits@k of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", default="")
    p.add_argument("--train-path", default="")
    p.add_argument("--valid-path", default="")
    p.add_argument("--test-path", default="")
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))

    p = sub.add_parser("predict", help="top-scoring tails for a (head, relation) query")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--head", required=True)
    p.add_argument("--relation", required=True)
    p.add_argument("--top-n", type=int, default=10)
    p.add_argument("--dataset", default="", help="mark candidates already known as true")

    p = sub.add_parser("efficiency", help="parameter counts and the optimal partition size")
    p.add_argument("--dataset", default="", help="count |E| and |R| from a dataset")
    p.add_argument("--E", type=int, dest="num_entities")
    p.add_argument("--R", type=int, dest="num_relations")
    p.add_argument("--D", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--C", type=int)
    p.add_argument("--shared", action="store_true", help="count one shared core")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            return cmd_train(build_run_config(args))
        if args.command == "evaluate":
            return cmd_evaluate(args.checkpoint, args.dataset, args.split,
                                args.train_path, args.valid_path, args.test_path)
        if args.command == "predict":
            return cmd_predict(args.checkpoint, args.head, args.relation, args.top_n, args.dataset)
        return cmd_efficiency(args.num_entities, args.num_relations, args.D, args.K, args.C,
                              args.shared, args.dataset)
    except (ConfigError, DatasetError, CheckpointError, TrainingDiverged, KeyError,
            OSError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
