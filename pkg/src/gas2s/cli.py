"""Command-line entry point: ``gas2s <subcommand> [--config run.json] [--flags]``.

Every subcommand merges an optional JSON config with explicit flags (flags
win), writes the effective config to ``--out`` when given, prints JSON or
tab-delimited rows on stdout and logs on stderr. Exit status is 0 on
success, 1 on usage errors and 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Any

import numpy as np

from .evaluate import EvalConfig, evaluate_split, predict_candidates
from .kg import HEAD, TAIL, KnowledgeGraph, degrees, filter_answers, graph_stats, load_dataset, write_dataset
from .model import MODES, ModelConfig
from .pipeline import Query
from .sampler import SubgraphSpec, sample_khop
from .synthetic import KINDS, write_synthetic
from .tokenizer import Vocabulary, train_tokenizer
from .trainer import TrainConfig, TrainState, grid_search, load_model, train
from .verbalize import mention_corpus

log = logging.getLogger("gas2s")

COMMANDS = ("ingest", "stats", "tokenizer-train", "train", "evaluate", "predict", "sample")

# model fields that come from the data and vocabulary, never from the config
_DERIVED_MODEL = ("vocab_size", "num_relations")
# seed and workers are single top-level knobs shared by every subsystem
_SECTIONS = {
    "model": (ModelConfig, _DERIVED_MODEL),
    "train": (TrainConfig, ("seed",)),
    "eval": (EvalConfig, ("seed", "workers")),
}


class UsageError(Exception):
    pass


@dataclasses.dataclass
class RunConfig:
    data: str | None = None
    entity_labels: str | None = None
    relation_labels: str | None = None
    vocab: str | None = None
    out: str | None = None
    checkpoint: str | None = None
    resume: str | None = None
    seed: int = 0
    workers: int = 1
    synthetic: str | None = None
    vocab_size: int = 8000
    grid: bool = False
    split: str = "test"
    entity: str | None = None
    relation: str | None = None
    direction: str = TAIL
    top_k: int = 10
    filtered: bool = False
    k: int | None = None
    fanout: str | None = None
    max_edges: int = 512
    model: dict = dataclasses.field(default_factory=dict)
    train: dict = dataclasses.field(default_factory=dict)
    eval: dict = dataclasses.field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _section_fields(section: str) -> dict[str, dataclasses.Field]:
    cls, skip = _SECTIONS[section]
    return {f.name: f for f in dataclasses.fields(cls) if f.name not in skip}


def validate_config(raw: dict) -> None:
    if not isinstance(raw, dict):
        raise UsageError("config must be a JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise UsageError(f"unknown config keys: {unknown}")
    for section in _SECTIONS:
        sub = raw.get(section, {})
        if not isinstance(sub, dict):
            raise UsageError(f"config section {section!r} must be an object")
        bad = sorted(set(sub) - set(_section_fields(section)))
        if bad:
            raise UsageError(f"unknown keys in {section!r}: {bad}")


def merge_config(file_cfg: dict, flags: dict[str, Any]) -> RunConfig:
    """Overlay dotted flag values (``"model.mode"``) on a config dict; flags win."""
    validate_config(file_cfg)
    merged = json.loads(json.dumps(file_cfg))
    for key, val in flags.items():
        if "." in key:
            section, name = key.split(".", 1)
            merged.setdefault(section, {})[name] = val
        else:
            merged[key] = val
    validate_config(merged)
    return RunConfig(**merged)


def _read_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc


def _write_effective(cfg: RunConfig, extra: dict | None = None) -> None:
    if not cfg.out:
        return
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = cfg.to_dict()
    if extra:
        doc.update(extra)
    (out / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _emit(obj: Any) -> None:
    print(json.dumps(obj, sort_keys=True))


# -- argument parsing --------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _parse_ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_section_flags(p: argparse.ArgumentParser, section: str, prefix: str = "", only=None) -> None:
    for name, f in _section_fields(section).items():
        if only is not None and name not in only:
            continue
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        kind = {bool: _parse_bool, int: int, float: float, str: str}.get(type(default))
        if isinstance(default, tuple):
            kind = _parse_floats if default and isinstance(default[0], float) else _parse_ints
        flag = "--" + prefix + name.replace("_", "-")
        extra = {"choices": MODES} if name == "mode" else {}
        p.add_argument(flag, dest=f"{section}.{name}", type=kind, default=argparse.SUPPRESS,
                       help=f"{section} setting (default {default!r})", **extra)


def _common(p: argparse.ArgumentParser, data=True, out_help="run directory for config.json and reports"):
    p.add_argument("--config", help="JSON run config; flags override its values")
    if data:
        p.add_argument("--data", default=argparse.SUPPRESS, help="dataset directory with train/valid/test.txt")
        p.add_argument("--entity-labels", dest="entity_labels", default=argparse.SUPPRESS)
        p.add_argument("--relation-labels", dest="relation_labels", default=argparse.SUPPRESS)
    p.add_argument("--out", default=argparse.SUPPRESS, help=out_help)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gas2s", description="Graph-augmented seq2seq link prediction.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ingest", help="validate a dataset and write a normalised copy")
    _common(p, out_help="destination dataset directory")
    p.add_argument("--synthetic", choices=sorted(KINDS), default=argparse.SUPPRESS,
                   help="generate a synthetic graph instead of reading --data")

    p = sub.add_parser("stats", help="graph statistics as JSON")
    _common(p)

    p = sub.add_parser("tokenizer-train", help="train the byte-level BPE vocabulary")
    _common(p)
    p.add_argument("--vocab", default=argparse.SUPPRESS, help="output vocabulary JSON path")
    p.add_argument("--vocab-size", dest="vocab_size", type=int, default=argparse.SUPPRESS)

    p = sub.add_parser("train", help="train a model")
    _common(p)
    p.add_argument("--vocab", default=argparse.SUPPRESS, help="vocabulary JSON (trained when absent)")
    p.add_argument("--vocab-size", dest="vocab_size", type=int, default=argparse.SUPPRESS)
    p.add_argument("--resume", default=argparse.SUPPRESS, help="checkpoint to continue from")
    p.add_argument("--grid", type=_parse_bool, default=argparse.SUPPRESS,
                   help="search the RGAT dropout x heads grid on the dev split")
    p.add_argument("--workers", type=int, default=argparse.SUPPRESS)
    _add_section_flags(p, "model")
    _add_section_flags(p, "train")
    _add_section_flags(p, "eval", prefix="eval-", only=("beam_width", "max_new_tokens", "batch_size"))

    p = sub.add_parser("evaluate", help="filtered MRR and Hits@k on a split")
    _common(p)
    p.add_argument("--checkpoint", default=argparse.SUPPRESS)
    p.add_argument("--split", choices=("train", "valid", "test"), default=argparse.SUPPRESS)
    p.add_argument("--workers", type=int, default=argparse.SUPPRESS)
    p.add_argument("--mode", dest="model.mode", choices=MODES, default=argparse.SUPPRESS,
                   help="expected mode; must match the checkpoint")
    _add_section_flags(p, "eval")

    p = sub.add_parser("predict", help="rank candidate entities for one query")
    _common(p)
    p.add_argument("--checkpoint", default=argparse.SUPPRESS)
    p.add_argument("--entity", default=argparse.SUPPRESS, help="raw id or mention")
    p.add_argument("--relation", default=argparse.SUPPRESS, help="raw id or mention")
    p.add_argument("--direction", choices=(TAIL, HEAD), default=argparse.SUPPRESS)
    p.add_argument("--top-k", dest="top_k", type=int, default=argparse.SUPPRESS)
    p.add_argument("--filtered", type=_parse_bool, default=argparse.SUPPRESS,
                   help="drop other known answers of the query")
    p.add_argument("--json", action="store_true", help="JSON lines instead of a tab-separated table")
    _add_section_flags(p, "eval", only=("beam_width", "max_new_tokens", "fanout", "max_edges"))

    p = sub.add_parser("sample", help="print one sampled neighbourhood as JSON")
    _common(p)
    p.add_argument("--entity", default=argparse.SUPPRESS, help="raw id of the query entity")
    p.add_argument("--k", type=int, default=argparse.SUPPRESS)
    p.add_argument("--fanout", default=argparse.SUPPRESS, help="per-hop caps, e.g. 10,5")
    p.add_argument("--max-edges", dest="max_edges", type=int, default=argparse.SUPPRESS)
    return parser


# -- helpers -----------------------------------------------------------------


class CommandError(RuntimeError):
    pass


def _dataset(cfg: RunConfig) -> KnowledgeGraph:
    if not cfg.data:
        raise UsageError("--data is required")
    return load_dataset(cfg.data, cfg.entity_labels, cfg.relation_labels)


def _need(cfg: RunConfig, *names: str) -> None:
    for n in names:
        if getattr(cfg, n) in (None, ""):
            raise UsageError(f"--{n.replace('_', '-')} is required")


def _section(cfg: RunConfig, section: str, **fixed):
    cls, _ = _SECTIONS[section]
    try:
        return cls(**getattr(cfg, section), **fixed)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {section} config: {exc}") from exc


def edit_distance(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _resolve(text: str, raw_ids: list[str], lookup: dict[str, int], kind: str) -> int:
    """Index of ``text`` as a raw id or exact mention; otherwise an error naming the closest mentions."""
    idx = {rid: i for i, rid in enumerate(raw_ids)}
    if text in idx:
        return idx[text]
    if text in lookup:
        return lookup[text]
    near = sorted(lookup, key=lambda s: (edit_distance(text.lower(), s.lower()), s))[:5]
    raise CommandError(f"unknown {kind} {text!r}; nearest mentions: {near}")


def config_digest(*parts: Any) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True).encode()).hexdigest()[:16]


def _check_model_overrides(cfg: RunConfig, stored: ModelConfig) -> None:
    have = stored.to_dict()
    diff = {k: (v, have[k]) for k, v in cfg.model.items() if have.get(k) != v}
    if diff:
        shown = ", ".join(f"{k}: config {a!r} vs checkpoint {b!r}" for k, (a, b) in sorted(diff.items()))
        raise CommandError(f"checkpoint does not match the requested model config ({shown})")


def _check_data(model_cfg: ModelConfig, vocab: Vocabulary, g: KnowledgeGraph) -> None:
    if model_cfg.num_relations != g.num_relations:
        raise CommandError(
            f"checkpoint was trained with {model_cfg.num_relations} relations, dataset has {g.num_relations}"
        )
    if model_cfg.vocab_size != vocab.size:
        raise CommandError("checkpoint vocabulary size does not match its model config")


# -- subcommands -------------------------------------------------------------


def cmd_ingest(cfg: RunConfig) -> dict:
    _need(cfg, "out")
    _write_effective(cfg)
    if cfg.synthetic:
        root = write_synthetic(cfg.synthetic, cfg.out)
        g = load_dataset(root)
    else:
        g = _dataset(cfg)
        raw = {
            name: [(g.entity_ids[h], g.relation_ids[r], g.entity_ids[t]) for h, r, t in arr.tolist()]
            for name, arr in g.triples.items()
        }
        write_dataset(cfg.out, raw, dict(zip(g.entity_ids, g.mentions.entity)),
                      dict(zip(g.relation_ids, g.mentions.relation)))
    return {"out": str(cfg.out), **graph_stats(g)}


def cmd_stats(cfg: RunConfig) -> dict:
    _write_effective(cfg)
    g = _dataset(cfg)
    stats = graph_stats(g)
    if cfg.out:
        from .plotting import degree_histogram

        (Path(cfg.out) / "stats.json").write_text(json.dumps(stats, indent=2) + "\n")
        degree_histogram(degrees(g), Path(cfg.out) / "degree_histogram.png", title=Path(cfg.data).name)
    return stats


def cmd_tokenizer_train(cfg: RunConfig) -> dict:
    _need(cfg, "vocab")
    _write_effective(cfg)
    g = _dataset(cfg)
    v = train_tokenizer(mention_corpus(g.mentions), cfg.vocab_size)
    v.save(cfg.vocab)
    return {"vocab": cfg.vocab, "vocab_size": v.size, "merges": len(v.merges)}


def cmd_train(cfg: RunConfig) -> dict:
    _need(cfg, "out")
    out = Path(cfg.out)
    g = _dataset(cfg)
    tc = _section(cfg, "train", seed=cfg.seed)
    ec = _section(cfg, "eval", seed=cfg.seed, workers=cfg.workers)
    state = None
    if cfg.resume:
        state, vocab, _ = TrainState.load(cfg.resume)
        _check_model_overrides(cfg, state.model.cfg)
        mc = state.model.cfg
    else:
        if cfg.vocab and Path(cfg.vocab).is_file():
            vocab = Vocabulary.load(cfg.vocab)
        else:
            vocab = train_tokenizer(mention_corpus(g.mentions), cfg.vocab_size)
        mc = _section(cfg, "model", vocab_size=vocab.size, num_relations=g.num_relations)
    _check_data(mc, vocab, g)
    _write_effective(cfg, {"model": mc.to_dict(), "train": tc.to_dict(), "eval": dataclasses.asdict(ec)})
    vocab.save(out / "vocab.json")

    from .plotting import grid_heatmap, loss_curve

    if cfg.grid:
        result = grid_search(g, mc, tc, vocab, ec, out)
        grid_heatmap(result["rows"], out / "grid.png")
        best = result["best"]
        return {"run_dir": str(out), "best": {k: best[k] for k in ("rgat_dropout", "rgat_heads", "dev_mrr",
                                                                    "checkpoint")}}
    state = train(g, mc, tc, vocab, out, state=state)
    final = state.save(out / "final.ckpt", vocab, tc)
    losses = [(int(s), float(v)) for s, v in np.loadtxt(out / "loss.csv", delimiter=",", skiprows=1, ndmin=2)]
    loss_curve(losses, out / "loss.png")
    return {
        "run_dir": str(out),
        "checkpoint": str(final),
        "steps": state.step,
        "final_loss": losses[-1][1] if losses else None,
        "mode": mc.mode,
    }


def cmd_evaluate(cfg: RunConfig) -> dict:
    _need(cfg, "checkpoint")
    ec = _section(cfg, "eval", seed=cfg.seed, workers=cfg.workers)
    model, vocab, _ = load_model(cfg.checkpoint)
    _check_model_overrides(cfg, model.cfg)
    _write_effective(cfg, {"model": model.cfg.to_dict(), "eval": dataclasses.asdict(ec)})
    g = _dataset(cfg)
    _check_data(model.cfg, vocab, g)
    report = evaluate_split(g, model, vocab, cfg.split, ec)
    eval_doc = {k: v for k, v in dataclasses.asdict(ec).items() if k != "workers"}
    result = {
        "split": cfg.split,
        "mode": model.cfg.mode,
        **report.to_dict(),
        "config_digest": config_digest(model.cfg.to_dict(), eval_doc, cfg.split),
    }
    result.setdefault("per_direction", {})
    if cfg.out:
        from .plotting import metrics_bars

        (Path(cfg.out) / "metrics.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
        metrics_bars(result, Path(cfg.out) / "metrics.png", title=f"{model.cfg.mode} on {cfg.split}")
    return result


def cmd_predict(cfg: RunConfig, as_json: bool = False) -> None:
    _need(cfg, "checkpoint", "entity", "relation")
    if cfg.top_k < 0:
        raise UsageError("--top-k must be >= 0")
    _write_effective(cfg)
    model, vocab, _ = load_model(cfg.checkpoint)
    g = _dataset(cfg)
    _check_data(model.cfg, vocab, g)
    e = _resolve(cfg.entity, g.entity_ids, g.mentions.entity_lookup, "entity")
    r = _resolve(cfg.relation, g.relation_ids, g.mentions.relation_lookup, "relation")
    columns = ("rank", "mention", "entity", "log_prob")
    rows = []
    if cfg.top_k > 0:
        ec = _section(cfg, "eval", seed=cfg.seed, workers=1)
        ec.beam_width = max(ec.beam_width, cfg.top_k)
        cands = predict_candidates(model, vocab, g, [Query(e, r, cfg.direction, -1)], ec)[0]
        skip = filter_answers(g, e, r, cfg.direction) if cfg.filtered else frozenset()
        seen: set[int] = set()
        for text, score in cands:
            ent = g.mentions.entity_lookup.get(text.strip())
            if ent is None or ent in seen or ent in skip:
                continue
            seen.add(ent)
            rows.append((len(rows) + 1, g.mentions.entity[ent], g.entity_ids[ent], score))
            if len(rows) == cfg.top_k:
                break
    if as_json:
        for row in rows:
            print(json.dumps(dict(zip(columns, row))))
    else:
        print("\t".join(columns))
        for rank, mention, rid, score in rows:
            print(f"{rank}\t{mention}\t{rid}\t{score:.6f}")


def cmd_sample(cfg: RunConfig) -> dict:
    _need(cfg, "entity")
    caps = _parse_ints(cfg.fanout) if cfg.fanout else []
    k = cfg.k if cfg.k is not None else len(caps) or 1
    if k < 0:
        raise UsageError("--k must be >= 0")
    if not caps:
        caps = [75] * k
    elif len(caps) == 1 and k > 1:
        caps = caps * k
    if len(caps) != k:
        raise UsageError(f"--fanout lists {len(caps)} caps for k={k}")
    try:
        spec = SubgraphSpec(tuple(caps), cfg.max_edges)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _write_effective(cfg)
    g = _dataset(cfg)
    e = _resolve(cfg.entity, g.entity_ids, {}, "entity")
    sub = sample_khop(g, e, spec, cfg.seed)
    rel = g.relation_ids
    return {
        "query": g.entity_ids[e],
        "k": k,
        "fanout": list(caps),
        "seed": cfg.seed,
        "nodes": [g.entity_ids[n] for n in sub.nodes.tolist()],
        "edges": [[int(a), rel[int(r)], int(b)] for (a, b), r in zip(sub.edge_endpoints.tolist(), sub.edge_relations)],
        "triples": [[g.entity_ids[h], rel[r], g.entity_ids[t]] for h, r, t in sub.triples.tolist()],
    }


_HANDLERS = {
    "ingest": cmd_ingest,
    "stats": cmd_stats,
    "tokenizer-train": cmd_tokenizer_train,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sample": cmd_sample,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 1
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            raise UsageError("a subcommand is required")
        logging.basicConfig(
            level=logging.DEBUG if ns.verbose > 1 else logging.INFO if ns.verbose else logging.WARNING,
            format="%(asctime)s %(name)s %(levelname)s %(message)s",
            stream=sys.stderr,
        )
        flags = {k: v for k, v in vars(ns).items() if k not in ("command", "config", "verbose", "json")}
        for key in ("train.fanout", "eval.fanout", "train.grid_heads", "train.grid_dropout"):
            if key in flags:
                flags[key] = list(flags[key])
        cfg = merge_config(_read_config(ns.config), flags)
    except UsageError as exc:
        print(f"gas2s: usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1

    try:
        if ns.command == "predict":
            cmd_predict(cfg, ns.json)
        else:
            _emit(_HANDLERS[ns.command](cfg))
    except UsageError as exc:
        print(f"gas2s {ns.command}: usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 2
        log.debug("failure", exc_info=True)
        print(f"gas2s {ns.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
