"""The six classifiers compared in the experiments, behind one interface.

Wiring (``E`` = embedding lookup with pad rows zeroed, ``D`` = dropout):

* ``bilstm-attn``: E -> D -> BiLSTM -> attention pool -> D -> softmax head
* ``bilstm``: E -> D -> BiLSTM -> [final fwd ; final bwd] -> D -> head
* ``lstm`` / ``rnn``: E -> D -> recurrence -> final state -> D -> head
* ``cnn``: E -> D -> conv + global max pool per width (concatenated) -> head
* ``attn``: E -> attention pool over the embeddings -> head

Parameters are enumerated in a fixed order: embedding, recurrent blocks
(forward then backward), convolution blocks by width, graph block,
attention, head.  Checkpoints rely on this order.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import layers as L
from .errors import CheckpointError, ConfigError, EmptyTextError
from .graph import WeightedGraph, gcn_aggregate, gcn_backward
from .params import ParamSet
from .tensor import Rng, glorot, make_rng, softmax_rows
from .text import PAD, Vocabulary, encode, tokenize

ARCHS = ("rnn", "cnn", "lstm", "bilstm", "attn", "bilstm-attn")
ATTENTION_ARCHS = ("attn", "bilstm-attn")
MAGIC = b"NTC1\n"


@dataclass
class ModelConfig:
    arch: str
    vocab_size: int
    num_classes: int
    embed_dim: int = 200
    hidden: int = 128
    attn_dim: int | None = None
    max_len: int = 64
    dropout: float = 0.5
    l2: float = 1e-4
    seed: int = 0
    embed_init: str = "random"
    embed_trainable: bool = True
    cnn_widths: tuple[int, ...] = (3, 4, 5)
    cnn_filters: int = 64
    loss: str = "ce"
    graph: bool = False

    def __post_init__(self) -> None:
        self.cnn_widths = tuple(int(w) for w in self.cnn_widths)
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown architecture {self.arch!r}; valid tags: {', '.join(ARCHS)}")
        sizes = [self.vocab_size, self.num_classes, self.embed_dim, self.hidden, self.max_len, self.cnn_filters]
        if min(sizes) < 1 or (self.attn_dim is not None and self.attn_dim < 1) or not self.cnn_widths \
                or min(self.cnn_widths) < 1:
            raise ConfigError("all sizes must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.l2 < 0:
            raise ConfigError(f"l2 must be >= 0, got {self.l2}")
        if self.loss not in ("ce", "mse"):
            raise ConfigError(f"loss must be 'ce' or 'mse', got {self.loss!r}")
        if self.graph and self.arch != "bilstm-attn":
            raise ConfigError("graph aggregation is only available for bilstm-attn")

    def to_lines(self) -> list[str]:
        out = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(map(str, v))
            out.append(f"{f.name}={'' if v is None else v}")
        return out

    @classmethod
    def from_mapping(cls, kv: dict[str, str]) -> "ModelConfig":
        names = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(kv) - set(names)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        parsed: dict[str, Any] = {}
        for k, raw in kv.items():
            if k in ("arch", "embed_init", "loss"):
                parsed[k] = raw
            elif k in ("embed_trainable", "graph"):
                parsed[k] = raw == "True"
            elif k in ("dropout", "l2"):
                parsed[k] = float(raw)
            elif k == "cnn_widths":
                parsed[k] = tuple(int(x) for x in raw.split(","))
            elif k == "attn_dim":
                parsed[k] = int(raw) if raw else None
            else:
                parsed[k] = int(raw)
        return cls(**parsed)


class Model:
    def __init__(self, config: ModelConfig, params: ParamSet):
        self.config = config
        self.params = params

    @property
    def arch(self) -> str:
        return self.config.arch

    @property
    def has_attention(self) -> bool:
        return self.arch in ATTENTION_ARCHS

    def feature_width(self) -> int:
        c = self.config
        if c.arch in ("bilstm", "bilstm-attn"):
            return 2 * c.hidden
        if c.arch in ("lstm", "rnn"):
            return c.hidden
        if c.arch == "cnn":
            return c.cnn_filters * len(c.cnn_widths)
        return c.embed_dim

    # -------------------------------------------------------------- forward

    def forward(self, ids, lengths, mode: str = "eval", rng: Rng | None = None):
        """Class probabilities ``[B, K]`` and a single-use cache.

        Inputs are trimmed to the longest row in the batch (at least the
        widest convolution filter), so results do not depend on padding.
        """
        c = self.config
        p = self.params
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        lengths = np.atleast_1d(np.asarray(lengths, dtype=np.int64))
        if mode == "train" and rng is None and c.dropout > 0:
            raise ValueError("train mode needs an rng for dropout")
        width = int(lengths.max())
        if c.arch == "cnn":
            width = max(width, max(c.cnn_widths))
        ids = ids[:, :width]
        if ids.shape[1] < width:
            ids = np.pad(ids, ((0, 0), (0, width - ids.shape[1])), constant_values=PAD)
        mask = L.length_mask(lengths, width)
        cache: dict[str, Any] = {"lengths": lengths, "mask": mask}

        E, cache["embed"] = L.embedding_forward(ids, p["embed.table"])
        x = E * mask[:, :, None]
        alpha = None
        if c.arch != "attn":
            x, cache["drop_in"] = L.dropout(x, c.dropout, mode, rng)

        if c.arch in ("rnn", "lstm"):
            _, feat, cache["rec"] = L.recurrent_run(c.arch, x, lengths, p.group(c.arch))
        elif c.arch in ("bilstm", "bilstm-attn"):
            H, final, cache["rec"] = L.bidirectional_run(x, lengths, p.group("fwd"), p.group("bwd"))
            if c.arch == "bilstm":
                feat = final
            else:
                if c.graph:
                    H, cache["graph"] = self._graph_forward(H, mask)
                feat, alpha, cache["attn"] = L.attention_pool(H, lengths, p.group("attn"))
        elif c.arch == "cnn":
            feats = []
            for w in c.cnn_widths:
                g = p.group(f"conv{w}")
                out, cache[f"conv{w}"] = L.conv1d_maxpool(x, g["filters"], g["bias"], lengths)
                feats.append(out)
            feat = np.concatenate(feats, axis=1)
        else:
            feat, alpha, cache["attn"] = L.attention_pool(x, lengths, p.group("attn"))

        if c.arch not in ("cnn", "attn"):
            feat, cache["drop_out"] = L.dropout(feat, c.dropout, mode, rng)
        probs, cache["head"] = L.dense_softmax(feat, p.group("head"))
        cache["alpha"] = alpha
        return probs, L.Cache(**cache)

    def _graph_forward(self, H, mask):
        g = self.params.group("graph")
        z = H @ g["W_a"].T
        scores = z @ np.swapaxes(z, 1, 2)
        pair = mask[:, :, None] * mask[:, None, :]
        scores = np.where(pair > 0, scores, -np.inf)
        scores = np.where(mask[:, :, None] > 0, scores, 0.0)
        A = softmax_rows(scores) * pair
        out, gc = gcn_aggregate(WeightedGraph(A, H), g["W"], g["b"])
        return out * mask[:, :, None], L.Cache(z=z, A=A, H=H, gcn=gc, mask=mask, W_a=g["W_a"])

    # -------------------------------------------------------------- backward

    def backward(self, cache: L.Cache, probs, labels) -> float:
        """Accumulate loss gradients (data term plus ``2 * l2 * theta``) into the
        parameter gradient slots and return the scalar loss."""
        cache = cache.consume()
        c = self.config
        p = self.params
        m = probs.shape[0]
        if c.loss == "ce":
            loss = L.loss_ce_l2(probs, labels, p, c.l2, m)
            dlogits = L.ce_grad_logits(probs, labels, m)
        else:
            loss = L.loss_mse_l2(probs, labels, p, c.l2, m)
            dlogits = L.mse_grad_logits(probs, labels, m)
        dfeat, g = L.dense_backward(cache.head, dlogits)
        p.accumulate("head", g)
        if c.arch not in ("cnn", "attn"):
            dfeat = L.dropout_backward(cache.drop_out, dfeat)

        if c.arch in ("rnn", "lstm"):
            dx, g = L.recurrent_backward(cache.rec, None, dfeat)
            p.accumulate(c.arch, g)
        elif c.arch == "bilstm":
            dx, gf, gb = L.bidirectional_backward(cache.rec, None, dfeat)
            p.accumulate("fwd", gf)
            p.accumulate("bwd", gb)
        elif c.arch == "bilstm-attn":
            dH, g = L.attention_backward(cache.attn, dfeat)
            p.accumulate("attn", g)
            if c.graph:
                dH = self._graph_backward(cache.graph, dH)
            dx, gf, gb = L.bidirectional_backward(cache.rec, dH)
            p.accumulate("fwd", gf)
            p.accumulate("bwd", gb)
        elif c.arch == "cnn":
            dx = 0.0
            start = 0
            for w in c.cnn_widths:
                dseq, g = L.conv_backward(getattr(cache, f"conv{w}"), dfeat[:, start:start + c.cnn_filters])
                p.accumulate(f"conv{w}", g)
                dx = dx + dseq
                start += c.cnn_filters
        else:
            dx, g = L.attention_backward(cache.attn, dfeat)
            p.accumulate("attn", g)

        if c.arch != "attn":
            dx = L.dropout_backward(cache.drop_in, dx)
        dE = dx * cache.mask[:, :, None]
        p.accumulate("embed", L.embedding_backward(cache.embed, dE))
        if c.l2:
            for name in p.trainable():
                p.grads[name] += 2.0 * c.l2 * p.values[name]
        return loss

    def _graph_backward(self, gcache: L.Cache, dout):
        gc = gcache.consume()
        dout = dout * gc.mask[:, :, None]
        dH, dW, db, dA = gcn_backward(gc.gcn, dout)
        # row softmax backward; rows and columns outside the mask carry zero A
        dscores = gc.A * (dA - (gc.A * dA).sum(axis=2, keepdims=True))
        dz = dscores @ gc.z + np.swapaxes(dscores, 1, 2) @ gc.z
        dW_a = dz.reshape(-1, dz.shape[-1]).T @ gc.H.reshape(-1, gc.H.shape[-1])
        dH = dH + dz @ gc.W_a
        self.params.accumulate("graph", {"W_a": dW_a, "W": dW, "b": db})
        return dH

    # -------------------------------------------------------------- helpers

    def loss(self, ids, lengths, labels, mode: str = "eval", rng: Rng | None = None) -> float:
        probs, _ = self.forward(ids, lengths, mode, rng)
        c = self.config
        fn = L.loss_ce_l2 if c.loss == "ce" else L.loss_mse_l2
        return fn(probs, labels, self.params, c.l2, probs.shape[0])

    def predict_batch(self, ids, lengths) -> tuple[np.ndarray, np.ndarray]:
        probs, _ = self.forward(ids, lengths, "eval")
        return probs.argmax(axis=1), probs


def build_model(config: ModelConfig, rng: Rng | None = None, embeddings: np.ndarray | None = None) -> Model:
    """Initialise parameters: Glorot-uniform weights, zero biases, LSTM forget bias 1."""
    rng = make_rng(config.seed) if rng is None else rng
    c = config
    ps = ParamSet()
    V, d, h, K = c.vocab_size, c.embed_dim, c.hidden, c.num_classes
    if embeddings is not None:
        if embeddings.shape != (V, d):
            raise ConfigError(f"embedding table {embeddings.shape} does not match ({V}, {d})")
        table = np.array(embeddings, dtype=np.float64)
    else:
        table = glorot(rng, (V, d), V, d)
    table[PAD] = 0.0
    ps.add("embed.table", table)
    if not c.embed_trainable:
        ps.frozen.add("embed.table")

    def recurrent(prefix: str, gates: int) -> None:
        ps.add(f"{prefix}.W", glorot(rng, (gates * h, d), d, h))
        ps.add(f"{prefix}.U", glorot(rng, (gates * h, h), h, h))
        b = np.zeros(gates * h)
        if gates == 4:
            b[h:2 * h] = 1.0
        ps.add(f"{prefix}.b", b)

    if c.arch == "rnn":
        recurrent("rnn", 1)
    elif c.arch == "lstm":
        recurrent("lstm", 4)
    elif c.arch in ("bilstm", "bilstm-attn"):
        recurrent("fwd", 4)
        recurrent("bwd", 4)
    elif c.arch == "cnn":
        for w in c.cnn_widths:
            ps.add(f"conv{w}.filters", glorot(rng, (c.cnn_filters, w, d), w * d, c.cnn_filters))
            ps.add(f"conv{w}.bias", np.zeros(c.cnn_filters))

    model = Model(c, ps)
    n = model.feature_width()
    if c.graph:
        a = c.attn_dim or n
        ps.add("graph.W_a", glorot(rng, (a, n), n, a))
        ps.add("graph.W", glorot(rng, (n, n), n, n))
        ps.add("graph.b", np.zeros(n))
    if c.arch in ATTENTION_ARCHS:
        a = c.attn_dim or n
        ps.add("attn.W_w", glorot(rng, (a, n), n, a))
        ps.add("attn.b_w", np.zeros(a))
        ps.add("attn.u_w", glorot(rng, (a,), a, 1))
    ps.add("head.W_v", glorot(rng, (K, n), n, K))
    ps.add("head.b_v", np.zeros(K))
    return model


def forward(model: Model, batch, mode: str = "eval", rng: Rng | None = None):
    return model.forward(batch.ids, batch.lengths, mode, rng)


def backward(model: Model, cache, probs, labels) -> float:
    return model.backward(cache, probs, labels)


@dataclass
class Prediction:
    label: int
    probs: np.ndarray
    alpha: np.ndarray | None
    tokens: list[str]


def predict(model: Model, text: str, vocab: Vocabulary) -> Prediction:
    """Classify one text; ties in the argmax go to the lowest class id."""
    tokens = tokenize(text)
    if not tokens:
        raise EmptyTextError("text has no tokens")
    ids, length = encode(tokens, vocab, model.config.max_len)
    probs, cache = model.forward(ids[None], [length], "eval")
    alpha = cache.alpha[0, :length].copy() if cache.alpha is not None else None
    return Prediction(int(np.argmax(probs[0])), probs[0], alpha, tokens[:length])


# ------------------------------------------------------------------ checkpoints

def save_checkpoint(path: str | Path, model: Model, vocab: Vocabulary, classes: list[str],
                    run: dict[str, Any] | None = None) -> None:
    """Write the NTC1 format.

    ``NTC1`` magic line, then text sections ``[config]`` (key=value),
    ``[run]`` (key=value), ``[classes]``, ``[vocab]`` (token<TAB>count),
    ``[params]`` (name followed by its dimensions), a ``[data]`` line, and
    finally the parameters as little-endian float64 in manifest order.
    """
    lines = ["[config]", *model.config.to_lines(), "[run]"]
    for k, v in (run or {}).items():
        lines.append(f"{k}={v}")
    lines.append("[classes]")
    lines.extend(classes)
    lines.append("[vocab]")
    lines.extend(f"{t}\t{n}" for t, n in zip(vocab.itos, vocab.counts))
    lines.append("[params]")
    for name, shape in model.params.shapes().items():
        lines.append(" ".join([name, *map(str, shape)]))
    lines.append("[data]")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header)
        for v in model.params.values.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


@dataclass
class Checkpoint:
    model: Model
    vocab: Vocabulary
    classes: list[str]
    run: dict[str, str]


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not an NTC1 checkpoint (bad magic)")
        sections: dict[str, list[str]] = {}
        current = None
        while True:
            raw = fh.readline()
            if not raw:
                raise CheckpointError(f"{path}: truncated header")
            line = raw.decode("utf-8").rstrip("\n")
            if line == "[data]":
                break
            if line.startswith("[") and line.endswith("]") and line[1:-1] in (
                    "config", "run", "classes", "vocab", "params"):
                current = line[1:-1]
                sections[current] = []
            elif current is None:
                raise CheckpointError(f"{path}: header line outside any section")
            else:
                sections[current].append(line)
        data = fh.read()
    try:
        cfg = ModelConfig.from_mapping(dict(l.split("=", 1) for l in sections["config"]))
        run = dict(l.split("=", 1) for l in sections.get("run", []))
        classes = sections["classes"]
        vocab_rows = [l.split("\t") for l in sections["vocab"]]
        vocab = Vocabulary([r[0] for r in vocab_rows], [int(r[1]) for r in vocab_rows])
        manifest = [(p[0], tuple(int(x) for x in p[1:])) for p in (l.split(" ") for l in sections["params"])]
    except (KeyError, ValueError, IndexError, ConfigError) as exc:
        raise CheckpointError(f"{path}: malformed header ({exc})") from None
    model = build_model(cfg, make_rng(0))
    expected = model.params.shapes()
    if [(n, s) for n, s in manifest] != list(expected.items()):
        raise CheckpointError(f"{path}: parameter manifest does not match the configured architecture")
    total = sum(int(np.prod(s)) for _, s in manifest)
    if len(data) != 8 * total:
        raise CheckpointError(f"{path}: expected {8 * total} bytes of parameters, found {len(data)}")
    flat = np.frombuffer(data, dtype="<f8")
    offset = 0
    for name, shape in manifest:
        n = int(np.prod(shape))
        model.params.values[name][...] = flat[offset:offset + n].reshape(shape)
        offset += n
    if len(vocab) != cfg.vocab_size or len(classes) != cfg.num_classes:
        raise CheckpointError(f"{path}: vocabulary or class list does not match the config")
    return Checkpoint(model, vocab, classes, run)
