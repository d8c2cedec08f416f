"""GA-S2S network: T5-style encoder/decoder with a relational graph-attention stage between them.

Three modes share one parameter layout:

``ga-s2s``
    decoder memory = distilled query vectors, distilled vectors of every
    neighbourhood triple, and RGAT node features.
``plain``
    decoder memory = the query's encoder output (KGT5-style).
``flat-context``
    decoder memory = encoder output of the query with its linearised 1-hop
    neighbourhood appended (KGT5-context-style).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .tokenizer import EOS, PAD

MODES = ("ga-s2s", "plain", "flat-context")
NEG_INF = -1e9


@dataclass
class ModelConfig:
    vocab_size: int
    num_relations: int
    d_model: int = 512
    encoder_layers: int = 6
    decoder_layers: int = 6
    attn_heads: int = 8
    d_ff: int = 2048
    m: int = 3
    rgat_layers: int = 2
    rgat_heads: int = 1
    rgat_dropout: float = 0.0
    dropout: float = 0.1
    mode: str = "ga-s2s"
    max_len: int = 512
    rel_buckets: int = 32
    rel_max_distance: int = 128
    init_std: float = 0.02

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.d_model % self.attn_heads:
            raise ValueError("d_model must be divisible by attn_heads")
        if self.d_model % self.rgat_heads:
            raise ValueError("d_model must be divisible by rgat_heads")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if not 0.0 <= self.rgat_dropout < 1.0 or not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout rates must be in [0, 1)")
        if self.vocab_size < 1 or self.num_relations < 0:
            raise ValueError("vocab_size and num_relations must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# -- parameters --------------------------------------------------------------


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return x * std


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """Fresh parameters, ordered by name registration."""
    rng = np.random.default_rng(seed)
    d, f, std = cfg.d_model, cfg.d_ff, cfg.init_std
    p: dict[str, np.ndarray] = {}

    def normal(name, *shape):
        p[name] = _trunc_normal(rng, shape, std)

    def ones(name, n):
        p[name] = np.ones(n)

    normal("shared.embedding", cfg.vocab_size, d)
    for stack, n_layers in (("encoder", cfg.encoder_layers), ("decoder", cfg.decoder_layers)):
        normal(f"{stack}.rel_bias", cfg.rel_buckets, cfg.attn_heads)
        for i in range(n_layers):
            pre = f"{stack}.{i}"
            blocks = ("self", "cross") if stack == "decoder" else ("self",)
            for blk in blocks:
                ones(f"{pre}.{blk}.norm", d)
                for w in ("q", "k", "v", "o"):
                    normal(f"{pre}.{blk}.{w}", d, d)
            ones(f"{pre}.ff.norm", d)
            normal(f"{pre}.ff.wi", d, f)
            normal(f"{pre}.ff.wo", f, d)
        ones(f"{stack}.final_norm", d)

    normal("distill.queries", cfg.m, d)
    normal("distill.k", d, d)
    normal("distill.v", d, d)

    n_rel = 2 * cfg.num_relations + 1
    dh = d // cfg.rgat_heads
    bound = 1.0 / math.sqrt(d)
    for j in range(cfg.rgat_layers):
        # variance-preserving scale: the stage is applied without residuals
        p[f"rgat.{j}.w_rel"] = _trunc_normal(rng, (n_rel, d, d), 1.0 / math.sqrt(d))
        p[f"rgat.{j}.w_self"] = _trunc_normal(rng, (d, d), 1.0 / math.sqrt(d))
        p[f"rgat.{j}.att_self"] = rng.uniform(-bound, bound, (cfg.rgat_heads, dh))
        p[f"rgat.{j}.att_nbr"] = rng.uniform(-bound, bound, (cfg.rgat_heads, dh))
    normal("node.fallback", d)
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}


# -- data carriers -----------------------------------------------------------


@dataclass
class EncoderOutput:
    hidden: Tensor      # (S, L, d)
    mask: np.ndarray    # (S, L) bool, True on real tokens

    def sequence(self, i: int) -> np.ndarray:
        """Unpadded hidden states of sequence ``i`` as an array."""
        return self.hidden.data[i, : int(self.mask[i].sum())]


@dataclass
class DecoderMemory:
    memory: Tensor      # (B, M, d)
    mask: np.ndarray    # (B, M) bool
    layouts: list[dict] = field(default_factory=list)

    def select(self, i: int) -> "DecoderMemory":
        n = int(self.mask[i].sum())
        return DecoderMemory(
            ad.take(self.memory, [i], axis=0)[:, :n],
            self.mask[i : i + 1, :n],
            self.layouts[i : i + 1],
        )


# -- relative position buckets ----------------------------------------------


def relative_position_bucket(rel: np.ndarray, bidirectional: bool, num_buckets: int, max_distance: int) -> np.ndarray:
    """T5 bucketing of ``key_pos - query_pos`` offsets."""
    ret = np.zeros_like(rel)
    n = -rel
    if bidirectional:
        num_buckets //= 2
        ret += (n < 0).astype(rel.dtype) * num_buckets
        n = np.abs(n)
    else:
        n = np.maximum(n, 0)
    max_exact = num_buckets // 2
    is_small = n < max_exact
    with np.errstate(divide="ignore"):
        large = max_exact + (
            np.log(np.maximum(n, 1) / max_exact) / math.log(max_distance / max_exact) * (num_buckets - max_exact)
        ).astype(rel.dtype)
    large = np.minimum(large, num_buckets - 1)
    return ret + np.where(is_small, n, large)


def _bucket_matrix(q_len: int, k_len: int, bidirectional: bool, cfg: ModelConfig) -> np.ndarray:
    rel = np.arange(k_len)[None, :] - np.arange(q_len)[:, None]
    return relative_position_bucket(rel, bidirectional, cfg.rel_buckets, cfg.rel_max_distance)


# -- network -----------------------------------------------------------------


class GAS2S:
    """Parameter container plus the forward computations of every stage."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    # building blocks

    def _linear(self, x: Tensor, name: str) -> Tensor:
        return x @ self.params[name]

    def _attention(self, pre: str, xq: Tensor, xkv: Tensor, bias, train: bool, rng) -> Tensor:
        cfg = self.cfg
        h, d = cfg.attn_heads, cfg.d_model
        dh = d // h
        S, Lq, _ = xq.shape
        Lk = xkv.shape[1]
        q = ad.transpose(self._linear(xq, f"{pre}.q").reshape(S, Lq, h, dh), (0, 2, 1, 3))
        k = ad.transpose(self._linear(xkv, f"{pre}.k").reshape(xkv.shape[0], Lk, h, dh), (0, 2, 3, 1))
        v = ad.transpose(self._linear(xkv, f"{pre}.v").reshape(xkv.shape[0], Lk, h, dh), (0, 2, 1, 3))
        scores = (q @ k) * (1.0 / math.sqrt(dh))
        for b in bias:
            scores = scores + b
        att = ad.dropout(ad.softmax(scores, axis=-1), cfg.dropout, train, rng)
        out = ad.transpose(att @ v, (0, 2, 1, 3)).reshape(S, Lq, d)
        return self._linear(out, f"{pre}.o")

    def _ff(self, pre: str, x: Tensor, train: bool, rng) -> Tensor:
        hid = ad.dropout(ad.relu(self._linear(x, f"{pre}.wi")), self.cfg.dropout, train, rng)
        return self._linear(hid, f"{pre}.wo")

    def _position_bias(self, stack: str, q_len: int, k_len: int, bidirectional: bool) -> Tensor:
        buckets = _bucket_matrix(q_len, k_len, bidirectional, self.cfg)
        return ad.transpose(ad.take(self.params[f"{stack}.rel_bias"], buckets), (2, 0, 1))

    # encoder

    def encode_batch(self, ids: np.ndarray, mask: np.ndarray | None = None, train: bool = False, rng=None) -> EncoderOutput:
        """Encode a padded (S, L) id matrix; ``mask`` defaults to ``ids != PAD``."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 2 or ids.shape[1] == 0:
            raise ValueError("encode_batch needs a non-empty (S, L) id matrix")
        if ids.shape[1] > self.cfg.max_len:
            raise ValueError(f"sequence length {ids.shape[1]} exceeds max_len {self.cfg.max_len}")
        mask = (ids != PAD) if mask is None else np.asarray(mask, dtype=bool)
        if not mask.any(axis=1).all():
            raise ValueError("every encoder sequence needs at least one token")
        cfg = self.cfg
        S, L = ids.shape
        x = ad.dropout(ad.take(self.params["shared.embedding"], ids), cfg.dropout, train, rng)
        pos = self._position_bias("encoder", L, L, True)
        pad = np.where(mask, 0.0, NEG_INF).astype(ad.get_default_dtype())[:, None, None, :]
        for i in range(cfg.encoder_layers):
            pre = f"encoder.{i}"
            y = ad.rms_norm(x, self.params[f"{pre}.self.norm"])
            x = x + ad.dropout(self._attention(f"{pre}.self", y, y, (pos, pad), train, rng), cfg.dropout, train, rng)
            y = ad.rms_norm(x, self.params[f"{pre}.ff.norm"])
            x = x + ad.dropout(self._ff(f"{pre}.ff", y, train, rng), cfg.dropout, train, rng)
        x = ad.dropout(ad.rms_norm(x, self.params["encoder.final_norm"]), cfg.dropout, train, rng)
        return EncoderOutput(x, mask)

    # graph stage

    def aggregate_entity_features(
        self, num_nodes: int, endpoints: np.ndarray, cls_states: Tensor
    ) -> Tensor:
        """Mean [CLS] state of the triples each node takes part in.

        ``endpoints`` (n, 2) holds local head/tail indices aligned with the
        rows of ``cls_states`` (n, d). Nodes in no triple get the learned
        fallback row.
        """
        endpoints = np.asarray(endpoints, dtype=np.int64).reshape(-1, 2)
        if len(endpoints) != cls_states.shape[0]:
            raise ValueError(f"{len(endpoints)} triples but {cls_states.shape[0]} [CLS] states")
        node_idx, trip_idx = [], []
        for j, (h, t) in enumerate(endpoints.tolist()):
            node_idx.append(h)
            trip_idx.append(j)
            if t != h:
                node_idx.append(t)
                trip_idx.append(j)
        node_idx = np.array(node_idx, dtype=np.int64)
        trip_idx = np.array(trip_idx, dtype=np.int64)
        counts = np.bincount(node_idx, minlength=num_nodes).astype(ad.get_default_dtype())
        empty = (counts == 0).astype(ad.get_default_dtype())[:, None]
        fallback = ad.reshape(self.params["node.fallback"], (1, -1)) * empty
        if len(node_idx) == 0:
            return fallback
        w = (1.0 / counts[node_idx])[:, None]
        summed = ad.index_add(num_nodes, node_idx, ad.take(cls_states, trip_idx) * w)
        return summed + fallback

    def rgat_forward(
        self,
        x: Tensor,
        endpoints: np.ndarray,
        relations: np.ndarray,
        train: bool = False,
        rng=None,
        return_attention: bool = False,
    ):
        """Relation-aware graph attention over a (possibly batched, disjoint) subgraph.

        Each directed edge ``h -> t`` with relation ``r`` is paired with an
        inverse edge ``t -> h`` (relation ``r + R``), and every node gets a
        self-loop (relation ``2R``). All in-edges of a node compete in one
        softmax per head.
        """
        cfg = self.cfg
        R = cfg.num_relations
        V = x.shape[0]
        endpoints = np.asarray(endpoints, dtype=np.int64).reshape(-1, 2)
        relations = np.asarray(relations, dtype=np.int64).reshape(-1)
        if relations.size and (relations.min() < 0 or relations.max() >= 2 * R + 1):
            raise ValueError(f"relation id out of range [0, {2 * R + 1})")
        loops = np.arange(V, dtype=np.int64)
        src = np.concatenate([endpoints[:, 0], endpoints[:, 1], loops])
        dst = np.concatenate([endpoints[:, 1], endpoints[:, 0], loops])
        inverse = np.where(relations < R, relations + R, np.where(relations < 2 * R, relations - R, relations))
        rel = np.concatenate([relations, inverse, np.full(V, 2 * R)])
        H = cfg.rgat_heads
        dh = cfg.d_model // H
        attn = []
        for j in range(cfg.rgat_layers):
            pre = f"rgat.{j}"
            msg = ad.grouped_matmul(ad.take(x, src), rel, self.params[f"{pre}.w_rel"])  # (E, d)
            msg = msg.reshape(-1, H, dh)
            me = ad.reshape(x @ self.params[f"{pre}.w_self"], (V, H, dh))
            s_self = ad.sum_(me * self.params[f"{pre}.att_self"], axis=-1)  # (V, H)
            s_nbr = ad.sum_(msg * self.params[f"{pre}.att_nbr"], axis=-1)   # (E, H)
            logits = ad.leaky_relu(ad.take(s_self, dst) + s_nbr, 0.2)
            # per-destination max for a stable softmax; a constant shift
            seg_max = np.full((V, H), -np.inf, dtype=logits.data.dtype)
            np.maximum.at(seg_max, dst, logits.data)
            ex = ad.exp(logits - seg_max[dst])
            den = ad.index_add(V, dst, ex)
            alpha = ex / ad.take(den, dst)
            attn.append(alpha.data)
            alpha = ad.dropout(alpha, cfg.rgat_dropout, train, rng)
            agg = ad.index_add(V, dst, msg * ad.reshape(alpha, (-1, H, 1)))
            x = ad.gelu(agg.reshape(V, cfg.d_model))
        if return_attention:
            return x, {"src": src, "dst": dst, "rel": rel, "alpha": attn}
        return x

    # distillation

    def distill(self, enc: EncoderOutput) -> Tensor:
        """Attention-pool each sequence into ``m`` vectors: (S, L, d) -> (S, m, d)."""
        d = self.cfg.d_model
        hid = enc.hidden
        keys = self._linear(hid, "distill.k")                        # (S, L, d)
        vals = self._linear(hid, "distill.v")                        # (S, L, d)
        scores = ad.matmul(self.params["distill.queries"], ad.swapaxes(keys, 1, 2)) * (1.0 / math.sqrt(d))
        pad = np.where(enc.mask, 0.0, NEG_INF).astype(ad.get_default_dtype())[:, None, :]
        att = ad.softmax(scores + pad, axis=-1)                       # (S, m, L)
        return att @ vals

    # decoder

    def decode_hidden(self, mem: DecoderMemory, dec_ids: np.ndarray, train: bool = False, rng=None) -> Tensor:
        cfg = self.cfg
        dec_ids = np.asarray(dec_ids, dtype=np.int64)
        B, T = dec_ids.shape
        x = ad.dropout(ad.take(self.params["shared.embedding"], dec_ids), cfg.dropout, train, rng)
        pos = self._position_bias("decoder", T, T, False)
        causal = np.where(np.tril(np.ones((T, T), dtype=bool)), 0.0, NEG_INF).astype(ad.get_default_dtype())
        mem_pad = np.where(mem.mask, 0.0, NEG_INF).astype(ad.get_default_dtype())[:, None, None, :]
        for i in range(cfg.decoder_layers):
            pre = f"decoder.{i}"
            y = ad.rms_norm(x, self.params[f"{pre}.self.norm"])
            x = x + ad.dropout(self._attention(f"{pre}.self", y, y, (pos, causal), train, rng), cfg.dropout, train, rng)
            y = ad.rms_norm(x, self.params[f"{pre}.cross.norm"])
            x = x + ad.dropout(
                self._attention(f"{pre}.cross", y, mem.memory, (mem_pad,), train, rng), cfg.dropout, train, rng
            )
            y = ad.rms_norm(x, self.params[f"{pre}.ff.norm"])
            x = x + ad.dropout(self._ff(f"{pre}.ff", y, train, rng), cfg.dropout, train, rng)
        return ad.dropout(ad.rms_norm(x, self.params["decoder.final_norm"]), cfg.dropout, train, rng)

    def logits(self, hidden: Tensor) -> Tensor:
        return hidden @ ad.transpose(self.params["shared.embedding"])

    def decode_loss(self, mem: DecoderMemory, targets: np.ndarray, train: bool = False, rng=None) -> Tensor:
        """Teacher-forced cross-entropy, mean over target tokens per sequence then over the batch."""
        targets = np.asarray(targets, dtype=np.int64)
        if targets.ndim != 2 or targets.shape[1] == 0 or not (targets != PAD).any(axis=1).all():
            raise ValueError("decode_loss needs non-empty EOS-terminated targets")
        B, T = targets.shape
        dec_in = np.concatenate([np.full((B, 1), PAD, dtype=np.int64), targets[:, :-1]], axis=1)
        hid = self.decode_hidden(mem, dec_in, train, rng)
        logits = self.logits(hid).reshape(B * T, self.cfg.vocab_size)
        valid = targets != PAD
        weights = (valid / valid.sum(axis=1, keepdims=True) / B).reshape(-1)
        return ad.cross_entropy(logits, targets.reshape(-1), ignore_id=PAD, weights=weights)

    def next_token_logprobs(self, mem: DecoderMemory, prefixes: np.ndarray) -> np.ndarray:
        """Log-probabilities (float64) of the next token after each prefix (K, t); memory batch is 1 or K."""
        prefixes = np.asarray(prefixes, dtype=np.int64)
        K = prefixes.shape[0]
        dec_in = np.concatenate([np.full((K, 1), PAD, dtype=np.int64), prefixes], axis=1)
        with ad.no_grad():
            hid = self.decode_hidden(mem, dec_in)
            last = hid.data[:, -1, :] @ self.params["shared.embedding"].data.T
        z = last.astype(np.float64)
        z -= z.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def sequence_logprob(self, mem: DecoderMemory, target: list[int]) -> float:
        """Exact teacher-forced log-probability of ``target`` (EOS included)."""
        tgt = np.asarray(target, dtype=np.int64)[None, :]
        dec_in = np.concatenate([[[PAD]], tgt[:, :-1]], axis=1)
        with ad.no_grad():
            hid = self.decode_hidden(mem, dec_in)
            z = (hid.data[0] @ self.params["shared.embedding"].data.T).astype(np.float64)
        z -= z.max(axis=1, keepdims=True)
        lp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return float(lp[np.arange(tgt.shape[1]), tgt[0]].sum())

