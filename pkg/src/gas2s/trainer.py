"""End-to-end training: deterministic batching, Adam with warmup, checkpoints, grid search."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .evaluate import EvalConfig, MetricsReport, evaluate_split
from .kg import KnowledgeGraph
from .model import GAS2S, ModelConfig
from .pipeline import Featurizer, forward_memory, make_training_queries, prepare_batch
from .sampler import SubgraphSpec, sample_khop
from .seeding import derive_seed, rng_for
from .tokenizer import Vocabulary

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-4
    warmup_steps: int = 2000
    max_steps: int = 1000
    seed: int = 0
    eval_interval: int = 0
    checkpoint_interval: int = 0
    fanout: tuple[int, ...] = (75,)
    max_edges: int = 512
    resample_each_epoch: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grid_dropout: tuple[float, ...] = (0.0, 0.1, 0.2, 0.5)
    grid_heads: tuple[int, ...] = (1, 2, 4)

    def __post_init__(self):
        self.fanout = tuple(int(x) for x in self.fanout)
        self.grid_dropout = tuple(float(x) for x in self.grid_dropout)
        self.grid_heads = tuple(int(x) for x in self.grid_heads)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_steps < 0 or self.warmup_steps < 0:
            raise ValueError("step counts must be non-negative")

    @property
    def spec(self) -> SubgraphSpec:
        return SubgraphSpec(self.fanout, self.max_edges)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainState:
    step: int
    model: GAS2S
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    losses: list[tuple[int, float]] = field(default_factory=list)

    @classmethod
    def fresh(cls, model_cfg: ModelConfig, seed: int) -> "TrainState":
        model = GAS2S(model_cfg, seed=derive_seed(seed, "init") % (1 << 32))
        return cls(
            step=0,
            model=model,
            adam_m={k: np.zeros_like(p.data) for k, p in model.params.items()},
            adam_v={k: np.zeros_like(p.data) for k, p in model.params.items()},
        )

    def save(self, path: str | Path, vocab: Vocabulary, train_cfg: TrainConfig | None = None) -> Path:
        tensors = {f"param/{k}": p.data for k, p in self.model.params.items()}
        tensors.update({f"adam_m/{k}": v for k, v in self.adam_m.items()})
        tensors.update({f"adam_v/{k}": v for k, v in self.adam_v.items()})
        header = {
            "model_config": self.model.cfg.to_dict(),
            "step": self.step,
            "vocab": vocab.to_json(),
            "train_config": train_cfg.to_dict() if train_cfg else None,
        }
        try:
            return save_checkpoint(path, tensors, header)
        except OSError as exc:
            raise TrainingError(f"could not write checkpoint {path}: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> tuple["TrainState", Vocabulary, dict]:
        tensors, header = load_checkpoint(path)
        cfg = ModelConfig.from_dict(header["model_config"])
        params = {
            k[len("param/"):]: Tensor(v.copy(), requires_grad=True, name=k[len("param/"):])
            for k, v in tensors.items() if k.startswith("param/")
        }
        model = GAS2S(cfg, params)
        state = cls(
            step=int(header["step"]),
            model=model,
            adam_m={k: tensors[f"adam_m/{k}"].copy() for k in params},
            adam_v={k: tensors[f"adam_v/{k}"].copy() for k in params},
        )
        return state, Vocabulary.from_json(header["vocab"]), header


def load_model(path: str | Path) -> tuple[GAS2S, Vocabulary, dict]:
    state, vocab, header = TrainState.load(path)
    return state.model, vocab, header


def batch_indices(step: int, n: int, cfg: TrainConfig) -> list[tuple[int, int]]:
    """``(epoch, query index)`` pairs of one step, drawn from a reshuffled stream of epochs."""
    out = []
    perms: dict[int, np.ndarray] = {}
    for pos in range(step * cfg.batch_size, (step + 1) * cfg.batch_size):
        epoch, k = divmod(pos, n)
        if epoch not in perms:
            perms[epoch] = rng_for(cfg.seed, "shuffle", epoch).permutation(n)
        out.append((epoch, int(perms[epoch][k])))
    return out


def _lr(step: int, cfg: TrainConfig) -> float:
    if cfg.warmup_steps <= 0:
        return cfg.learning_rate
    return cfg.learning_rate * min(1.0, (step + 1) / cfg.warmup_steps)


def adam_update(state: TrainState, cfg: TrainConfig) -> None:
    t = state.step + 1
    lr = _lr(state.step, cfg)
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for k, p in state.model.params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m, v = state.adam_m[k], state.adam_v[k]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(p.data.dtype)


def train(
    g: KnowledgeGraph,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    vocab: Vocabulary,
    out_dir: str | Path | None = None,
    state: TrainState | None = None,
    on_step: Callable[[TrainState, float], None] | None = None,
) -> TrainState:
    """Run (or resume) training until ``train_cfg.max_steps``.

    The batch composition, neighbourhood samples and dropout masks of step
    ``s`` depend only on ``(seed, s)``, so a resumed run reproduces the
    uninterrupted one exactly.
    """
    if state is None:
        state = TrainState.fresh(model_cfg, train_cfg.seed)
    model = state.model
    queries = make_training_queries(g)
    if not queries and train_cfg.max_steps > state.step:
        raise TrainingError("no training triples")
    feat = Featurizer(vocab, g.mentions, model.cfg.mode, model.cfg.max_len)
    spec = train_cfg.spec
    out = Path(out_dir) if out_dir else None
    if out:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        loss_path = out / "loss.csv"
        if state.step == 0 or not loss_path.exists():
            loss_path.write_text("step,loss\n")
        else:
            # drop rows written after the checkpoint being resumed
            kept = [(k, v) for k, v in read_loss_csv(loss_path) if k <= state.step]
            loss_path.write_text("step,loss\n" + "".join(f"{k},{v!r}\n" for k, v in kept))

    while state.step < train_cfg.max_steps:
        s = state.step
        picks = batch_indices(s, len(queries), train_cfg)
        qs = [queries[i] for _, i in picks]
        subs = [
            sample_khop(
                g, q.entity, spec,
                derive_seed(train_cfg.seed, "sample", epoch if train_cfg.resample_each_epoch else 0, i),
                q.exclude,
            )
            for (epoch, i), q in zip(picks, qs)
        ]
        batch = prepare_batch(feat, qs, subs, model.cfg.m)
        rng = rng_for(train_cfg.seed, "dropout", s)
        for p in model.params.values():
            p.grad = None
        loss = model.decode_loss(forward_memory(model, batch, True, rng), batch.targets, True, rng)
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss {value} at step {s + 1}")
        loss.backward()
        adam_update(state, train_cfg)
        state.step += 1
        state.losses.append((state.step, value))
        if out:
            with loss_path.open("a") as fh:
                fh.write(f"{state.step},{value!r}\n")
            if train_cfg.checkpoint_interval and state.step % train_cfg.checkpoint_interval == 0:
                state.save(out / "checkpoints" / f"step-{state.step}.ckpt", vocab, train_cfg)
        if on_step:
            on_step(state, value)
        if state.step % 50 == 0:
            log.info("step %d loss %.4f", state.step, value)
    return state


def read_loss_csv(path: str | Path) -> list[tuple[int, float]]:
    with Path(path).open() as fh:
        return [(int(r["step"]), float(r["loss"])) for r in csv.DictReader(fh)]


def grid_search(
    g: KnowledgeGraph,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    vocab: Vocabulary,
    eval_cfg: EvalConfig,
    out_dir: str | Path | None = None,
) -> dict:
    """One run per (RGAT dropout, RGAT heads) cell, scored by dev MRR.

    Ties prefer lower dropout, then fewer heads.
    """
    if not train_cfg.grid_dropout or not train_cfg.grid_heads:
        raise ValueError("grid must be non-empty")
    rows = []
    for p in train_cfg.grid_dropout:
        for h in train_cfg.grid_heads:
            cfg = dataclasses.replace(model_cfg, rgat_dropout=p, rgat_heads=h)
            cell_dir = Path(out_dir) / f"dropout-{p}_heads-{h}" if out_dir else None
            state = train(g, cfg, train_cfg, vocab, cell_dir)
            ckpt = None
            if cell_dir:
                ckpt = str(state.save(cell_dir / "final.ckpt", vocab, train_cfg))
            report: MetricsReport = evaluate_split(g, state.model, vocab, "valid", eval_cfg)
            rows.append({"rgat_dropout": p, "rgat_heads": h, "dev_mrr": report.mrr,
                         "dev": report.to_dict(), "checkpoint": ckpt})
            log.info("grid cell dropout=%s heads=%s dev MRR %.4f", p, h, report.mrr)
    best = min(rows, key=lambda r: (-r["dev_mrr"], r["rgat_dropout"], r["rgat_heads"]))
    result = {"rows": rows, "best": best}
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "grid.json").write_text(json.dumps(result, indent=2))
    return result
