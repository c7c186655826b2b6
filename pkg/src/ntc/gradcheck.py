"""Finite-difference verification of every hand-written backward pass.

Each check builds a small random problem, computes the analytic gradient
with the layer's backward function, and compares every coordinate against
central differences.  Results are ``(name, worst_rel_err)`` pairs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L
from .graph import WeightedGraph, gcn_aggregate, gcn_backward
from .models import ARCHS, ModelConfig, build_model
from .tensor import grad_check, make_rng

# toy sizes: vocabulary, embedding, hidden, tokens, classes
V, D, H, T, K = 50, 8, 4, 6, 3
EPS = 1e-5


@dataclass
class CheckResult:
    name: str
    worst: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.worst < self.tol


def _worst(f, pairs) -> float:
    return max(grad_check(f, theta, g, EPS).max_rel_err for theta, g in pairs)


def check_model(arch: str, seed: int, tol: float = 1e-4, l2: float = 1e-2,
                graph: bool = False) -> list[CheckResult]:
    """Per-parameter-group worst error for the full loss of one architecture.

    Uses a 2-example batch with dropout active (masks replayed from a fixed
    seed) and ``l2 > 0`` so the regulariser gradient is exercised.
    """
    rng = make_rng(seed)
    cfg = ModelConfig(arch, vocab_size=V, num_classes=K, embed_dim=D, hidden=H, max_len=T,
                      dropout=0.5, l2=l2, seed=seed, cnn_widths=(2, 3), cnn_filters=3, graph=graph)
    model = build_model(cfg)
    for v in model.params.values.values():
        v[...] = rng.normal(scale=0.5, size=v.shape)
    ids = rng.integers(2, V, size=(2, T))
    lengths = np.array([T, T - 2])
    ids[1, T - 2:] = 0
    labels = np.eye(K)[rng.integers(0, K, size=2)]
    drop_seed = seed + 1000

    def f(_=None):
        return model.loss(ids, lengths, labels, "train", make_rng(drop_seed))

    model.params.zero_grad()
    probs, cache = model.forward(ids, lengths, "train", make_rng(drop_seed))
    model.backward(cache, probs, labels)
    groups: dict[str, float] = {}
    for name, value in model.params.values.items():
        err = grad_check(f, value, model.params.grads[name], EPS).max_rel_err
        group = name.split(".")[0]
        groups[group] = max(groups.get(group, 0.0), err)
    return [CheckResult(f"{arch}/{g}", e, tol) for g, e in groups.items()]


def check_layers(seed: int, tol: float = 1e-4) -> list[CheckResult]:
    rng = make_rng(seed)
    out = []

    def normal(*shape, scale=0.5):
        return rng.normal(scale=scale, size=shape)

    # embedding
    table = normal(V, D)
    ids = rng.integers(0, V, size=T)
    R = normal(T, D)

    def f_emb(_=None):
        return float((L.embedding_forward(ids, table)[0] * R).sum())

    g = L.embedding_backward(L.embedding_forward(ids, table)[1], R)["table"]
    out.append(CheckResult("embedding", _worst(f_emb, [(table, g)]), 1e-6))

    # recurrent cells over 3 and 4 steps
    for cell, gates, steps in (("rnn", 1, 3), ("lstm", 4, 4)):
        p = {"W": normal(gates * H, D), "U": normal(gates * H, H), "b": normal(gates * H)}
        xs = normal(steps, D)
        Rh = normal(H)

        def run(p=p, xs=xs, cell=cell):
            h = np.zeros(H)
            c = np.zeros(H)
            caches = []
            for x in xs:
                if cell == "rnn":
                    h, cc = L.rnn_cell_step(x, h, p)
                else:
                    h, c, cc = L.lstm_cell_step(x, h, c, p)
                caches.append(cc)
            return h, caches

        def f_cell(_=None, run=run, Rh=Rh):
            return float(run()[0] @ Rh)

        _, caches = run()
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        dxs = np.zeros_like(xs)
        dh, dc = Rh, np.zeros(H)
        for t in range(steps - 1, -1, -1):
            if cell == "rnn":
                dx, dh, gp = L.rnn_cell_backward(caches[t], dh)
            else:
                dx, dh, dc, gp = L.lstm_cell_backward(caches[t], dh, dc)
            dxs[t] = dx
            for k in grads:
                grads[k] += gp[k]
        out.append(CheckResult(f"{cell}_cell", _worst(f_cell, [(p[k], grads[k]) for k in p] + [(xs, dxs)]), tol))

    # bidirectional over T=3
    seq = normal(3, D)
    pf = {"W": normal(4 * H, D), "U": normal(4 * H, H), "b": normal(4 * H)}
    pb = {"W": normal(4 * H, D), "U": normal(4 * H, H), "b": normal(4 * H)}
    Rb = normal(3, 2 * H)

    def f_bi(_=None):
        return float((L.bidirectional_run(seq, 3, pf, pb)[0] * Rb).sum())

    _, _, cb = L.bidirectional_run(seq, 3, pf, pb)
    dseq, gf, gb = L.bidirectional_backward(cb, Rb)
    pairs = [(seq, dseq)] + [(pf[k], gf[k]) for k in pf] + [(pb[k], gb[k]) for k in pb]
    out.append(CheckResult("bidirectional", _worst(f_bi, pairs), tol))

    # attention pooling with a padded tail
    Hm = normal(T, 2 * H)
    pa = {"W_w": normal(2 * H, 2 * H), "b_w": normal(2 * H), "u_w": normal(2 * H)}
    Ra = normal(2 * H)

    def f_att(_=None):
        return float(L.attention_pool(Hm, T - 1, pa)[0] @ Ra)

    dH, ga = L.attention_backward(L.attention_pool(Hm, T - 1, pa)[2], Ra)
    out.append(CheckResult("attention", _worst(f_att, [(Hm, dH)] + [(pa[k], ga[k]) for k in pa]), tol))

    # convolution + max pool
    cs = normal(T, D)
    filt = normal(3, 2, D)
    bias = normal(3)
    Rc = normal(3)

    def f_conv(_=None):
        return float(L.conv1d_maxpool(cs, filt, bias)[0] @ Rc)

    dcs, gc = L.conv_backward(L.conv1d_maxpool(cs, filt, bias)[1], Rc)
    out.append(CheckResult("conv1d_maxpool", _worst(f_conv, [(cs, dcs), (filt, gc["filters"]), (bias, gc["bias"])]), tol))

    # dense softmax + cross-entropy
    v = normal(2, 2 * H)
    ph = {"W_v": normal(K, 2 * H), "b_v": normal(K)}
    t = np.eye(K)[[0, 2]]

    def f_head(_=None):
        return L.loss_ce_l2(L.dense_softmax(v, ph)[0], t)

    y, ch = L.dense_softmax(v, ph)
    dv, gh = L.dense_backward(ch, L.ce_grad_logits(y, t))
    out.append(CheckResult("dense_softmax", _worst(f_head, [(v, dv), (ph["W_v"], gh["W_v"]), (ph["b_v"], gh["b_v"])]), 1e-6))

    # dropout with a replayed mask
    xd = normal(T, D)
    Rd = normal(T, D)

    def f_drop(_=None):
        return float((L.dropout(xd, 0.5, "train", make_rng(seed))[0] * Rd).sum())

    dxd = L.dropout_backward(L.dropout(xd, 0.5, "train", make_rng(seed))[1], Rd)
    out.append(CheckResult("dropout", _worst(f_drop, [(xd, dxd)]), 1e-6))

    # graph aggregation, strictly positive adjacency keeps every entry differentiable
    A = rng.uniform(0.1, 1.0, size=(4, 4))
    Hg = normal(4, 3)
    Wg = normal(3, 3)
    bg = normal(3, scale=0.1)
    Rg = normal(4, 3)

    def f_gcn(_=None):
        return float((gcn_aggregate(WeightedGraph(A, Hg), Wg, bg)[0] * Rg).sum())

    dHg, dWg, dbg, dAg = gcn_backward(gcn_aggregate(WeightedGraph(A, Hg), Wg, bg)[1], Rg)
    out.append(CheckResult("gcn_aggregate", _worst(f_gcn, [(Hg, dHg), (Wg, dWg), (bg, dbg), (A, dAg)]), tol))
    return out


def run_suite(archs=ARCHS, seeds=range(5), tol: float = 1e-4, layers: bool = True) -> list[CheckResult]:
    """Worst error per check name, maximised over seeds."""
    worst: dict[str, CheckResult] = {}
    for seed in seeds:
        results = check_layers(seed, tol) if layers else []
        for arch in archs:
            results += check_model(arch, seed, tol)
        for r in results:
            if r.name not in worst or r.worst > worst[r.name].worst:
                worst[r.name] = r
    return list(worst.values())
