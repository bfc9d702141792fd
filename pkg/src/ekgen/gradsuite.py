"""Named finite-difference checks for every differentiable op and loss.

Used by the `grad-check` CLI subcommand and by the acceptance suite.
All checks run in float64; smooth ops are held to 1e-6 relative error,
kinked/compound losses to 1e-4.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffkit as dk
from .ekg import LocalEKG
from .embed import (EdgeExample, HashedNgramEncoder, RelationNetwork,
                    VertexEmbeddingTable, VertexExample, edge_triplet_loss,
                    vertex_loss_smoothed, vertex_loss_total)
from .graph2seq import G2SConfig, Graph2SeqModel

SMOOTH_TOL = 1e-6
ROUGH_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.rel_err <= self.tolerance


def _check(name, f, params, tol) -> CheckResult:
    report = dk.grad_check(f, params)
    return CheckResult(name=name, rel_err=report.max_rel_err, tolerance=tol)


def _op_checks(rng) -> list[CheckResult]:
    results = []
    a = dk.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = dk.Tensor(rng.standard_normal((4, 5)), requires_grad=True)
    c = dk.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    v = dk.Tensor(rng.standard_normal(6), requires_grad=True)
    w = dk.Tensor(rng.standard_normal(6), requires_grad=True)

    results.append(_check("matmul", lambda: (a @ b).sum(), {"a": a, "b": b},
                          SMOOTH_TOL))
    results.append(_check("add_mul", lambda: ((a + c) * c).sum(),
                          {"a": a, "c": c}, SMOOTH_TOL))
    results.append(_check("concat_slice",
                          lambda: (dk.concat([v, w])[2:9] ** 2).sum(),
                          {"v": v, "w": w}, SMOOTH_TOL))
    results.append(_check("tanh", lambda: a.tanh().sum(), {"a": a}, SMOOTH_TOL))
    results.append(_check("sigmoid", lambda: a.sigmoid().sum(), {"a": a},
                          SMOOTH_TOL))
    results.append(_check("leaky_relu",
                          lambda: (a.leaky_relu(0.2) * c).sum(), {"a": a},
                          ROUGH_TOL))
    results.append(_check("softmax",
                          lambda: (dk.softmax(a, axis=-1) * c).sum(), {"a": a},
                          SMOOTH_TOL))
    results.append(_check("log", lambda: (a * a + 0.5).log().sum(), {"a": a},
                          SMOOTH_TOL))
    results.append(_check("cross_entropy_ls",
                          lambda: dk.cross_entropy_label_smoothed(v, 2, 0.1),
                          {"v": v}, SMOOTH_TOL))
    results.append(_check("l2_distance", lambda: dk.l2_distance(v, w),
                          {"v": v, "w": w}, SMOOTH_TOL))
    g = dk.Tensor(rng.standard_normal(4) * 0.5 + 1.0, requires_grad=True)
    bb = dk.Tensor(rng.standard_normal(4), requires_grad=True)
    ln_probe = dk.Tensor(rng.standard_normal((3, 4)))
    results.append(_check("layer_norm",
                          lambda: (dk.layer_norm(a, g, bb) * ln_probe).sum(),
                          {"a": a, "g": g, "b": bb}, SMOOTH_TOL))
    emb = dk.Tensor(rng.standard_normal((7, 4)), requires_grad=True)
    results.append(_check("embedding_lookup",
                          lambda: (dk.embedding_lookup(emb, [1, 3, 1]) ** 2).sum(),
                          {"emb": emb}, SMOOTH_TOL))
    return results


def _nn_checks(rng) -> list[CheckResult]:
    results = []
    seed = int(rng.integers(1 << 30))
    prng = np.random.default_rng(seed)
    cell = dk.LSTMCell(prng, 3, 4)
    x = dk.Tensor(prng.standard_normal(3), requires_grad=True)
    h0 = dk.Tensor(np.zeros(4))
    c0 = dk.Tensor(np.zeros(4))
    results.append(_check("lstm_cell",
                          lambda: (lambda hc: (hc[0] * hc[1]).sum())(cell(x, h0, c0)),
                          {"x": x, **cell.parameters()}, SMOOTH_TOL))
    lstm = dk.BiLSTM(prng, 3, 2, n_layers=2)
    seq = dk.Tensor(prng.standard_normal((3, 3)), requires_grad=True)
    results.append(_check("bilstm", lambda: (lstm(seq) ** 2).sum(),
                          {"seq": seq, **lstm.parameters()}, ROUGH_TOL))
    attn = dk.MultiHeadAttention(prng, 4, 2)
    q = dk.Tensor(prng.standard_normal((3, 4)), requires_grad=True)
    results.append(_check("multi_head_attention",
                          lambda: (attn(q, q, q) ** 2).sum(),
                          {"q": q, **attn.parameters()}, SMOOTH_TOL))
    dec = dk.TransformerDecoderLayer(prng, 4, 2, 8)
    mem = dk.Tensor(prng.standard_normal((2, 4)), requires_grad=True)
    mask = dk.causal_mask(3)
    results.append(_check("transformer_decoder_layer",
                          lambda: (dec(q, mem, mask) ** 2).sum(),
                          {"q": q, "mem": mem, **dec.parameters()}, ROUGH_TOL))
    return results


def _loss_checks(rng) -> list[CheckResult]:
    """Eq-level losses: plain and smoothed vertex loss, triplet loss, the
    multi-task sum, and the full generator NLL."""
    results = []
    T, n_e, d_f = 3, 4, 6
    table = VertexEmbeddingTable(T, n_e, d_f, seed=int(rng.integers(1 << 30)))
    encoder = HashedNgramEncoder(d_f=d_f, seed=3)
    examples = [VertexExample(t=int(rng.integers(1, T + 1)),
                              entity_id=int(rng.integers(n_e)),
                              tokens=list("abcXdef"), mask_pos=3)
                for _ in range(4)]
    results.append(_check(
        "vertex_loss_plain",
        lambda: vertex_loss_total(examples, table, (0.0, 1.0, 0.0), 0.0, encoder),
        {"w": table.w}, ROUGH_TOL))
    results.append(_check(
        "vertex_loss_smoothed",
        lambda: vertex_loss_total(examples, table, (0.5, 1.0, 0.3), 0.1, encoder),
        {"w": table.w}, ROUGH_TOL))

    rn = RelationNetwork(d_f, margin=0.3, seed=int(rng.integers(1 << 30)))
    ex = EdgeExample(t=2, pair=(0, 1), tokens=list("ghijkl"), negative=2)
    def triplet():
        loss = edge_triplet_loss(ex, table, rn, encoder)
        # keep away from the hinge kink: margin chosen so the hinge is active
        return loss
    results.append(_check("edge_triplet_loss", triplet,
                          {"w": table.w, **rn.parameters()}, ROUGH_TOL))

    def multitask():
        return (vertex_loss_total(examples, table, (0.5, 1.0, 0.3), 0.1, encoder)
                + 1.0 * edge_triplet_loss(ex, table, rn, encoder))
    results.append(_check("multi_task_loss", multitask,
                          {"w": table.w, **rn.parameters()}, ROUGH_TOL))

    cfg = G2SConfig(vocab_size=9, d_f=4, d_model=8, n_heads=2, n_enc_layers=1,
                    n_dec_layers=1, lstm_layers=1, gat_layers=1, mode="GAT_VE",
                    max_len=10, seed=int(rng.integers(1 << 30)))
    model = Graph2SeqModel(cfg)
    local = LocalEKG(passage_id="p", t=2, vertex_ids=[0, 1, 2],
                     edges=[(0, 1), (1, 2)],
                     vertex_seq=rng.standard_normal((3, 3, 4)),
                     edge_seq=rng.standard_normal((3, 2, 4)))
    passage = [6, 7, 8, 6]
    comment = [7, 8]
    params = model.parameters()
    results.append(_check("g2s_full_nll",
                          lambda: model.nll(passage, local, comment),
                          params, ROUGH_TOL))
    return results


def run_gradient_suite(seed: int = 0) -> list[CheckResult]:
    with dk.use_dtype(np.float64):
        rng = np.random.default_rng(seed)
        return _op_checks(rng) + _nn_checks(rng) + _loss_checks(rng)
