"""Graph-to-sequence comment generator.

Local-EKG vertex/edge sequences run through a shared temporal Bi-LSTM;
an edge-aware graph attention stack aggregates them; the decoder
cross-attends over the graph encodings concatenated with the passage
encoder output. Three modes: EKG (no graph attention), GAT_V (vertex
attention only), GAT_VE (vertex + edge attention).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import diffkit as dk
from .corpus import BOS, EOS, PAD, Vocabulary
from .ekg import LocalEKG

MODES = ("EKG", "GAT_V", "GAT_VE")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class G2SConfig:
    vocab_size: int
    d_f: int = 64                 # embedding-table feature width
    d_model: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    lstm_layers: int = 2
    gat_layers: int = 2
    mode: str = "GAT_VE"
    max_len: int = 50
    max_passage: int = 256
    eps_ls: float = 0.1
    gat_slope: float = 0.2
    shared_embedding: bool = True
    seed: int = 0

    @property
    def lstm_hidden(self) -> int:
        # Bi-directional concat must equal d_model so one shared projection
        # applies to both vertex and edge features in every GAT layer.
        return self.d_model // 2

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.d_model % (2 * self.n_heads):
            raise ValueError("d_model must be divisible by 2*n_heads")


class GATLayer(dk.Module):
    """Single-head graph attention with edge-feature terms.

    Attention logits for vertex i cover its self-loop, every neighbor j,
    and (in GAT_VE mode) every incident edge feature; one joint softmax
    per vertex normalizes them together.
    """

    def __init__(self, rng, d: int, slope: float = 0.2):
        self.w = dk.Linear(rng, d, d, bias=False)
        self.a_g = dk.parameter(rng, 2 * d)
        self.a_h = dk.parameter(rng, 2 * d)
        self.slope = slope
        self.last_coefficients: list[np.ndarray] = []  # per-vertex, post-softmax

    def __call__(self, vfeats: dk.Tensor, efeats: dk.Tensor | None,
                 edges: list[tuple[int, int]], use_edges: bool) -> dk.Tensor:
        c_e = vfeats.shape[0]
        wv = self.w(vfeats)
        wr = self.w(efeats) if (use_edges and efeats is not None
                                and efeats.shape[0]) else None
        neighbors: dict[int, list[int]] = {i: [] for i in range(c_e)}
        incident: dict[int, list[tuple[int, int]]] = {i: [] for i in range(c_e)}
        for e_idx, (a, b) in enumerate(edges):
            neighbors[a].append(b)
            neighbors[b].append(a)
            incident[a].append((e_idx, b))
            incident[b].append((e_idx, a))
        rows = []
        self.last_coefficients = []
        for i in range(c_e):
            wv_i = wv[i]
            logits = []
            values = []
            for j in [i] + neighbors[i]:
                score = (self.a_g @ dk.concat([wv_i, wv[j]])).leaky_relu(self.slope)
                logits.append(score)
                values.append(wv[j])
            if wr is not None:
                for e_idx, _ in incident[i]:
                    score = (self.a_h @ dk.concat([wv_i, wr[e_idx]])
                             ).leaky_relu(self.slope)
                    logits.append(score)
                    values.append(wr[e_idx])
            coefs = dk.softmax(dk.stack(logits))
            self.last_coefficients.append(coefs.numpy().copy())
            rows.append(dk.stack(values).T @ coefs)
        return dk.stack(rows)


def gat_layer(vfeats, efeats, edges, layer: GATLayer, mode: str) -> dk.Tensor:
    return layer(vfeats, efeats, edges, use_edges=(mode == "GAT_VE"))


class Graph2SeqModel(dk.Module):
    def __init__(self, config: G2SConfig):
        rng = np.random.default_rng(config.seed)
        cfg = config
        self.config = cfg
        d = cfg.d_model
        self.tok_emb = dk.parameter(rng, cfg.vocab_size, d, scale=0.1)
        self.enc_layers = [dk.TransformerEncoderLayer(rng, d, cfg.n_heads, 2 * d)
                           for _ in range(cfg.n_enc_layers)]
        self.dec_layers = [dk.TransformerDecoderLayer(rng, d, cfg.n_heads, 2 * d)
                           for _ in range(cfg.n_dec_layers)]
        self.out_proj = dk.Linear(rng, d, cfg.vocab_size)
        self.lstm = dk.BiLSTM(rng, cfg.d_f, cfg.lstm_hidden, cfg.lstm_layers)
        self.gat = [GATLayer(rng, d, cfg.gat_slope)
                    for _ in range(cfg.gat_layers)]
        self.pos = dk.sinusoidal_positions(max(cfg.max_passage, cfg.max_len) + 2, d)

    # -- encoding ------------------------------------------------------------

    def temporal_encode(self, local: LocalEKG) -> tuple[dk.Tensor, dk.Tensor | None]:
        """Bi-LSTM over each T-step sequence; features taken at the
        passage's chapter index."""
        if local.vertex_seq is None:
            raise ValueError("local EKG has no materialized embeddings")
        T = local.vertex_seq.shape[0]
        if T == 0:
            raise ValueError("empty temporal sequence")
        t_idx = local.t - 1
        v_out = self.lstm(dk.Tensor(local.vertex_seq))[t_idx]
        e_out = None
        if local.edge_seq is not None and local.edge_seq.shape[1]:
            e_out = self.lstm(dk.Tensor(local.edge_seq))[t_idx]
        return v_out, e_out

    def graph_encode(self, local: LocalEKG) -> dk.Tensor:
        vfeats, efeats = self.temporal_encode(local)
        if self.config.mode == "EKG":
            return vfeats
        pos = {eid: i for i, eid in enumerate(local.vertex_ids)}
        edges = [(pos[a], pos[b]) for (a, b) in local.edges]
        for layer in self.gat:
            vfeats = gat_layer(vfeats, efeats, edges, layer, self.config.mode)
        return vfeats

    def encode_passage(self, token_ids: list[int]) -> dk.Tensor:
        if not token_ids:
            raise ValueError("empty passage")
        ids = token_ids[-self.config.max_passage:]
        d = self.config.d_model
        x = dk.embedding_lookup(self.tok_emb, ids) * np.sqrt(d)
        x = x + dk.Tensor(self.pos[:len(ids)])
        pad = np.asarray(ids) == PAD
        mask = np.where(pad, -1e9, 0.0)[None, :] if pad.any() else None
        for layer in self.enc_layers:
            x = layer(x, mask)
        return x

    # -- decoding ------------------------------------------------------------

    def _decode(self, memory: dk.Tensor, prefix_ids: list[int]) -> dk.Tensor:
        """Logits for every prefix position; causal self-attention."""
        n = len(prefix_ids)
        if n > self.config.max_len + 1:
            raise ValueError(f"prefix of {n} exceeds max length")
        d = self.config.d_model
        x = dk.embedding_lookup(self.tok_emb, prefix_ids) * np.sqrt(d)
        x = x + dk.Tensor(self.pos[:n])
        cmask = dk.causal_mask(n)
        for layer in self.dec_layers:
            x = layer(x, memory, cmask)
        return self.out_proj(x)

    def fuse_memory(self, passage_ids: list[int], local: LocalEKG) -> dk.Tensor:
        graph = self.graph_encode(local)
        return dk.concat([graph, self.encode_passage(passage_ids)], axis=0)

    def fuse_and_decode_step(self, memory: dk.Tensor,
                             prefix_ids: list[int]) -> np.ndarray:
        """Next-token distribution after the given prefix (starts with BOS)."""
        if not prefix_ids or prefix_ids[0] != BOS:
            raise ValueError("prefix must start with BOS")
        logits = self._decode(memory, prefix_ids)[-1]
        return dk.softmax(logits).numpy()

    def nll(self, passage_ids: list[int], local: LocalEKG,
            comment_ids: list[int]) -> dk.Tensor:
        """Teacher-forced label-smoothed NLL, mean over target positions."""
        target = comment_ids[:self.config.max_len - 1] + [EOS]
        dec_in = [BOS] + target[:-1]
        memory = self.fuse_memory(passage_ids, local)
        logits = self._decode(memory, dec_in)
        return dk.cross_entropy_label_smoothed(logits, np.asarray(target),
                                               self.config.eps_ls)

    def token_accuracy(self, passage_ids, local, comment_ids) -> float:
        target = comment_ids[:self.config.max_len - 1] + [EOS]
        dec_in = [BOS] + target[:-1]
        memory = self.fuse_memory(passage_ids, local)
        pred = self._decode(memory, dec_in).numpy().argmax(axis=-1)
        return float((pred == np.asarray(target)).mean())


@dataclass
class G2SExample:
    passage_ids: list[int]
    local: LocalEKG
    comment_ids: list[int]


@dataclass
class G2STrainConfig:
    steps: int = 400
    batch_size: int = 8
    warmup: int = 50
    lr_scale: float = 1.0
    seed: int = 0
    log_every: int = 10
    checkpoint_dir: str | None = None


def train_g2s(examples: list[G2SExample], model: Graph2SeqModel,
              train_cfg: G2STrainConfig) -> dict:
    """Minimize teacher-forced NLL with Adam and the warmup/decay schedule.

    Returns the loss history; the model is updated in place.
    """
    if not examples:
        raise ValueError("no training examples")
    params = model.parameters()
    opt = dk.Adam(params)
    rng = np.random.default_rng(train_cfg.seed)
    order = []
    history: list[float] = []
    for step in range(1, train_cfg.steps + 1):
        if len(order) < train_cfg.batch_size:
            perm = rng.permutation(len(examples)).tolist()
            order.extend(perm)
        batch = [order.pop(0) for _ in range(min(train_cfg.batch_size, len(order)))]
        opt.zero_grad()
        loss = None
        for idx in batch:
            ex = examples[idx]
            term = model.nll(ex.passage_ids, ex.local, ex.comment_ids)
            loss = term if loss is None else loss + term
        loss = loss * (1.0 / len(batch))
        val = loss.item()
        if not np.isfinite(val):
            raise TrainingDiverged(f"NLL became {val} at step {step}")
        history.append(val)
        loss.backward()
        lr = dk.lr_schedule(step, model.config.d_model, train_cfg.warmup,
                            train_cfg.lr_scale)
        opt.step(lr)
    return {"loss": history}


@dataclass
class Hypothesis:
    tokens: list[int]            # starts with BOS
    logp: float
    finished: bool = False

    def generated(self) -> list[int]:
        toks = self.tokens[1:]
        return toks[:-1] if toks and toks[-1] == EOS else toks

    def score(self, alpha: float) -> float:
        n = max(len(self.tokens) - 1, 1)
        return self.logp / n ** alpha


def beam_decode(passage_ids: list[int], local: LocalEKG, model: Graph2SeqModel,
                beam: int = 4, max_len: int = 50,
                length_alpha: float = 0.7) -> list[tuple[list[int], float]]:
    """Length-normalized beam search; returns (token ids, score) sorted by
    score descending. No hypothesis exceeds `max_len` generated tokens."""
    memory = model.fuse_memory(passage_ids, local)
    active = [Hypothesis(tokens=[BOS], logp=0.0)]
    finished: list[Hypothesis] = []
    for _ in range(max_len):
        candidates: list[Hypothesis] = []
        for hyp in active:
            probs = model.fuse_and_decode_step(memory, hyp.tokens)
            logp = np.log(np.maximum(probs, 1e-30))
            top = np.argsort(-logp, kind="stable")[:beam]
            for tok in top:
                candidates.append(Hypothesis(tokens=hyp.tokens + [int(tok)],
                                             logp=hyp.logp + float(logp[tok]),
                                             finished=int(tok) == EOS))
        candidates.sort(key=lambda h: -h.logp)
        active = []
        for h in candidates[:beam]:
            (finished if h.finished else active).append(h)
        if not active:
            break
    finished.extend(active)
    finished.sort(key=lambda h: -h.score(length_alpha))
    return [(h.generated(), h.score(length_alpha)) for h in finished[:beam]]


def greedy_decode(passage_ids, local, model, max_len: int = 50):
    """Argmax decoding; reference for the degenerate beam=1 case."""
    memory = model.fuse_memory(passage_ids, local)
    tokens = [BOS]
    for _ in range(max_len):
        probs = model.fuse_and_decode_step(memory, tokens)
        tok = int(probs.argmax())
        tokens.append(tok)
        if tok == EOS:
            break
    out = tokens[1:]
    return out[:-1] if out and out[-1] == EOS else out
