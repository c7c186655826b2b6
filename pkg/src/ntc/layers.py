"""Forward and backward passes for every layer used by the model zoo.

Every forward function returns ``(output, cache)``; the matching backward
function consumes the cache exactly once.  Sequence layers accept either a
single example (``[T, d]`` with an ``int`` length) or a padded batch
(``[B, T, d]`` with a length vector) and return outputs of the same rank.
Valid positions are always a prefix ``0 .. length-1`` of each row.

Parameter layouts (``n`` input width, ``h`` hidden width, ``a`` attention width):

* recurrent cell: ``W [G*h, n]``, ``U [G*h, h]``, ``b [G*h]`` with ``G = 1``
  for the tanh RNN and ``G = 4`` for the LSTM (gate blocks ordered i, f, o, g)
* attention: ``W_w [a, n]``, ``b_w [a]``, ``u_w [a]``
* classifier: ``W_v [K, n]``, ``b_v [K]``
* convolution: ``filters [F, w, d]``, ``bias [F]``
"""
from __future__ import annotations

from collections.abc import Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, EmptySequenceError, LabelError, ParameterError, StateError
from .params import ParamSet
from .tensor import Rng, sigmoid, softmax_rows

LOG_FLOOR = 1e-12


class Cache:
    """Activations saved by a forward pass for its backward pass."""

    def __init__(self, **fields):
        self.__dict__.update(fields)
        self._consumed = False

    def consume(self) -> "Cache":
        if self._consumed:
            raise StateError("forward cache already consumed by a backward pass")
        self._consumed = True
        return self


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise DimensionError(msg)


def _as_batch(seq: np.ndarray, lengths) -> tuple[np.ndarray, np.ndarray, bool]:
    seq = np.asarray(seq, dtype=np.float64)
    single = seq.ndim == 2
    if single:
        seq = seq[None]
        lengths = np.array([int(lengths)])
    else:
        lengths = np.asarray(lengths, dtype=np.int64)
    _check(seq.ndim == 3, f"sequence must be [T, d] or [B, T, d], got {seq.shape}")
    _check(lengths.shape == (seq.shape[0],), f"lengths {lengths.shape} do not match batch {seq.shape[0]}")
    if (lengths < 1).any():
        raise EmptySequenceError("sequence length must be >= 1")
    _check(bool((lengths <= seq.shape[1]).all()), f"length exceeds padded width {seq.shape[1]}")
    return seq, lengths, single


def length_mask(lengths: np.ndarray, width: int) -> np.ndarray:
    """``[B, width]`` float mask, 1 on valid positions."""
    return (np.arange(width)[None, :] < np.asarray(lengths)[:, None]).astype(np.float64)


# ---------------------------------------------------------------- embedding

def embedding_forward(ids, table: np.ndarray):
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        bad = ids[(ids < 0) | (ids >= table.shape[0])][0]
        raise IndexError(f"token id {bad} out of range for vocabulary of size {table.shape[0]}")
    return table[ids], Cache(ids=ids, shape=table.shape)


def embedding_backward(cache: Cache, grad_out: np.ndarray) -> dict[str, np.ndarray]:
    c = cache.consume()
    grad = np.zeros(c.shape)
    np.add.at(grad, c.ids.reshape(-1), grad_out.reshape(-1, c.shape[1]))
    return {"table": grad}


# ---------------------------------------------------------------- recurrent cells

def _rnn_step(zx, h_prev, U):
    h = np.tanh(zx + h_prev @ U.T)
    return h, (h_prev, h)


def _rnn_step_backward(saved, dh, U):
    h_prev, h = saved
    dz = dh * (1.0 - h * h)
    return dz, dz @ U, dz.T @ h_prev if dz.ndim == 2 else np.outer(dz, h_prev)


def _lstm_step(zx, h_prev, c_prev, U):
    hs = U.shape[1]
    z = zx + h_prev @ U.T
    i = sigmoid(z[..., :hs])
    f = sigmoid(z[..., hs:2 * hs])
    o = sigmoid(z[..., 2 * hs:3 * hs])
    g = np.tanh(z[..., 3 * hs:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (h_prev, c_prev, i, f, o, g, tc)


def _lstm_step_backward(saved, dh, dc, U):
    """Gradients of one LSTM step given upstream ``dh`` and ``dc`` (on the new state)."""
    h_prev, c_prev, i, f, o, g, tc = saved
    dc = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate(
        [
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dh * tc * o * (1.0 - o),
            dc * i * (1.0 - g * g),
        ],
        axis=-1,
    )
    dU = dz.T @ h_prev if dz.ndim == 2 else np.outer(dz, h_prev)
    return dz, dz @ U, dc * f, dU


def _cell_shapes(x, h_prev, params, gates):
    W, U, b = params["W"], params["U"], params["b"]
    hs = U.shape[1]
    _check(W.shape == (gates * hs, x.shape[-1]), f"W has shape {W.shape}, expected {(gates * hs, x.shape[-1])}")
    _check(U.shape == (gates * hs, hs), f"U has shape {U.shape}, expected {(gates * hs, hs)}")
    _check(b.shape == (gates * hs,), f"b has shape {b.shape}, expected {(gates * hs,)}")
    _check(h_prev.shape[-1] == hs, f"hidden state width {h_prev.shape[-1]} != {hs}")


def rnn_cell_step(x_t, h_prev, params):
    """``h_t = tanh(W x_t + U h_prev + b)``."""
    _cell_shapes(x_t, h_prev, params, 1)
    h, saved = _rnn_step(x_t @ params["W"].T + params["b"], h_prev, params["U"])
    return h, Cache(x=x_t, saved=saved, U=params["U"], W=params["W"])


def rnn_cell_backward(cache: Cache, dh):
    c = cache.consume()
    dz, dh_prev, dU = _rnn_step_backward(c.saved, dh, c.U)
    dW = dz.T @ c.x if dz.ndim == 2 else np.outer(dz, c.x)
    db = dz.sum(axis=0) if dz.ndim == 2 else dz
    return dz @ c.W, dh_prev, {"W": dW, "U": dU, "b": db}


def lstm_cell_step(x_t, h_prev, c_prev, params):
    _cell_shapes(x_t, h_prev, params, 4)
    _check(c_prev.shape == h_prev.shape, f"cell state {c_prev.shape} != hidden {h_prev.shape}")
    h, c, saved = _lstm_step(x_t @ params["W"].T + params["b"], h_prev, c_prev, params["U"])
    return h, c, Cache(x=x_t, saved=saved, U=params["U"], W=params["W"])


def lstm_cell_backward(cache: Cache, dh, dc):
    c = cache.consume()
    dz, dh_prev, dc_prev, dU = _lstm_step_backward(c.saved, dh, dc, c.U)
    dW = dz.T @ c.x if dz.ndim == 2 else np.outer(dz, c.x)
    db = dz.sum(axis=0) if dz.ndim == 2 else dz
    return dz @ c.W, dh_prev, dc_prev, {"W": dW, "U": dU, "b": db}


# ---------------------------------------------------------------- sequence runners

def _reverse_index(lengths: np.ndarray, width: int) -> np.ndarray:
    t = np.arange(width)[None, :]
    L = lengths[:, None]
    return np.where(t < L, L - 1 - t, t)


def recurrent_run(cell: str, seq, lengths, params, reverse: bool = False):
    """Run a masked recurrence over each row's valid prefix.

    Returns ``(H, h_final, cache)``: per-step outputs (zero on pad positions)
    and the state after the last valid step.  With ``reverse`` the valid
    prefix is traversed right to left and outputs are written back in the
    original positions.
    """
    if cell not in ("rnn", "lstm"):
        raise ParameterError(f"unknown cell {cell!r}")
    X, lengths, single = _as_batch(seq, lengths)
    B, T, _ = X.shape
    gates = 4 if cell == "lstm" else 1
    W, U, b = params["W"], params["U"], params["b"]
    hs = U.shape[1]
    _cell_shapes(X[:, 0], np.zeros((B, hs)), params, gates)
    rows = np.arange(B)[:, None]
    ridx = _reverse_index(lengths, T) if reverse else None
    if reverse:
        X = X[rows, ridx]
    mask = length_mask(lengths, T)
    zx = X @ W.T + b
    h = np.zeros((B, hs))
    c = np.zeros((B, hs))
    H = np.empty((B, T, hs))
    saved = []
    for t in range(T):
        m = mask[:, t:t + 1]
        if cell == "lstm":
            h_new, c_new, s = _lstm_step(zx[:, t], h, c, U)
            c = m * c_new + (1.0 - m) * c
        else:
            h_new, s = _rnn_step(zx[:, t], h, U)
        h = m * h_new + (1.0 - m) * h
        H[:, t] = m * h_new
        saved.append(s)
    if reverse:
        H = H[rows, ridx]
    cache = Cache(cell=cell, X=X, mask=mask, saved=saved, W=W, U=U, ridx=ridx, single=single)
    if single:
        return H[0], h[0], cache
    return H, h, cache


def recurrent_backward(cache: Cache, dH, dfinal=None):
    c = cache.consume()
    X, mask, U = c.X, c.mask, c.U
    B, T, _ = X.shape
    hs = U.shape[1]
    if c.single:
        dH = dH[None]
        dfinal = None if dfinal is None else dfinal[None]
    rows = np.arange(B)[:, None]
    if dH is None:
        dH = np.zeros((B, T, hs))
    elif c.ridx is not None:
        dH = dH[rows, c.ridx]
    dh_carry = np.zeros((B, hs)) if dfinal is None else np.array(dfinal, dtype=np.float64)
    dc_carry = np.zeros((B, hs))
    dzx = np.empty((B, T, U.shape[0]))
    dU = np.zeros_like(U)
    for t in range(T - 1, -1, -1):
        m = mask[:, t:t + 1]
        dh_new = m * (dH[:, t] + dh_carry)
        if c.cell == "lstm":
            dz, dh_prev, dc_prev, dU_t = _lstm_step_backward(c.saved[t], dh_new, m * dc_carry, U)
            dc_carry = dc_prev + (1.0 - m) * dc_carry
        else:
            dz, dh_prev, dU_t = _rnn_step_backward(c.saved[t], dh_new, U)
        dh_carry = dh_prev + (1.0 - m) * dh_carry
        dzx[:, t] = dz
        dU += dU_t
    flat = dzx.reshape(-1, dzx.shape[-1])
    dW = flat.T @ X.reshape(-1, X.shape[-1])
    db = flat.sum(axis=0)
    dX = dzx @ c.W
    if c.ridx is not None:
        dX = dX[rows, c.ridx]
    if c.single:
        dX = dX[0]
    return dX, {"W": dW, "U": dU, "b": db}


def bidirectional_run(seq, lengths, fwd_params, bwd_params, cell: str = "lstm"):
    """Concatenate ``[h_fwd_t ; h_bwd_t]`` per step.

    Returns ``(H, final, cache)`` where ``final`` joins the forward state after
    the last valid token with the backward state after the first token.
    """
    Hf, hf, cf = recurrent_run(cell, seq, lengths, fwd_params)
    Hb, hb, cb = recurrent_run(cell, seq, lengths, bwd_params, reverse=True)
    hs = hf.shape[-1]
    return (
        np.concatenate([Hf, Hb], axis=-1),
        np.concatenate([hf, hb], axis=-1),
        Cache(fwd=cf, bwd=cb, hs=hs),
    )


def bidirectional_backward(cache: Cache, dH, dfinal=None):
    c = cache.consume()
    hs = c.hs
    dHf = None if dH is None else dH[..., :hs]
    dHb = None if dH is None else dH[..., hs:]
    dff = None if dfinal is None else dfinal[..., :hs]
    dfb = None if dfinal is None else dfinal[..., hs:]
    dXf, gf = recurrent_backward(c.fwd, dHf, dff)
    dXb, gb = recurrent_backward(c.bwd, dHb, dfb)
    return dXf + dXb, gf, gb


# ---------------------------------------------------------------- attention pooling

def attention_pool(H, lengths, params):
    """Additive attention with a single learned context vector.

    ``u_t = tanh(W_w h_t + b_w)``, ``alpha = softmax_t(u_t . u_w)`` over valid
    positions (pad positions get exactly 0), ``s = sum_t alpha_t h_t``.
    """
    Hb, lengths, single = _as_batch(H, lengths)
    W_w, b_w, u_w = params["W_w"], params["b_w"], params["u_w"]
    _check(W_w.shape[1] == Hb.shape[2], f"W_w has shape {W_w.shape}, input width is {Hb.shape[2]}")
    _check(b_w.shape == (W_w.shape[0],) and u_w.shape == (W_w.shape[0],),
           f"b_w {b_w.shape} / u_w {u_w.shape} must be ({W_w.shape[0]},)")
    mask = length_mask(lengths, Hb.shape[1]) > 0
    u = np.tanh(Hb @ W_w.T + b_w)
    score = u @ u_w
    score = np.where(mask, score, -np.inf)
    score = score - score.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(score), 0.0)
    alpha = e / e.sum(axis=1, keepdims=True)
    s = np.einsum("bt,btn->bn", alpha, Hb)
    cache = Cache(H=Hb, u=u, alpha=alpha, W_w=W_w, u_w=u_w, single=single)
    if single:
        return s[0], alpha[0], cache
    return s, alpha, cache


def attention_backward(cache: Cache, ds):
    c = cache.consume()
    if c.single:
        ds = ds[None]
    H, u, alpha = c.H, c.u, c.alpha
    dH = alpha[:, :, None] * ds[:, None, :]
    dalpha = np.einsum("btn,bn->bt", H, ds)
    dscore = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
    du_w = np.einsum("bt,bta->a", dscore, u)
    dpre = dscore[:, :, None] * c.u_w * (1.0 - u * u)
    flat = dpre.reshape(-1, dpre.shape[-1])
    dW_w = flat.T @ H.reshape(-1, H.shape[-1])
    db_w = flat.sum(axis=0)
    dH = dH + dpre @ c.W_w
    if c.single:
        dH = dH[0]
    return dH, {"W_w": dW_w, "b_w": db_w, "u_w": du_w}


# ---------------------------------------------------------------- convolution

def conv1d_maxpool(seq, filters, bias, lengths=None):
    """Valid 1-D convolution, ReLU, then global max over positions.

    With ``lengths``, only windows starting at ``p <= max(length, w) - w`` are
    pooled, so padding beyond a row's length never wins the max unless the
    row is shorter than the filter.
    """
    seq = np.asarray(seq, dtype=np.float64)
    single = seq.ndim == 2
    if single:
        seq = seq[None]
    B, T, d = seq.shape
    F, w, fd = filters.shape
    _check(fd == d, f"filters {filters.shape} do not match input width {d}")
    _check(bias.shape == (F,), f"bias {bias.shape} != ({F},)")
    if T < w:
        raise EmptySequenceError(f"sequence of length {T} is shorter than filter width {w}")
    P = T - w + 1
    win = sliding_window_view(seq, w, axis=1)  # [B, P, d, w]
    pre = np.einsum("bpdw,fwd->bpf", win, filters, optimize=True) + bias
    act = np.maximum(pre, 0.0)
    if lengths is not None:
        lengths = np.atleast_1d(np.asarray(lengths))
        last = np.maximum(lengths, w) - w
        valid = np.arange(P)[None, :] <= last[:, None]
        act = np.where(valid[:, :, None], act, -1.0)
    arg = act.argmax(axis=1)  # first maximum on ties
    out = np.take_along_axis(act, arg[:, None, :], axis=1)[:, 0]
    cache = Cache(win=win, pre=pre, arg=arg, filters=filters, shape=seq.shape, single=single)
    return (out[0] if single else out), cache


def conv_backward(cache: Cache, dout):
    c = cache.consume()
    if c.single:
        dout = dout[None]
    B, T, d = c.shape
    F, w, _ = c.filters.shape
    P = T - w + 1
    b_idx = np.arange(B)[:, None]
    f_idx = np.arange(F)[None, :]
    pre_at = c.pre[b_idx, c.arg, f_idx]
    dpre = np.zeros((B, P, F))
    dpre[b_idx, c.arg, f_idx] = dout * (pre_at > 0)
    dfilters = np.einsum("bpf,bpdw->fwd", dpre, c.win, optimize=True)
    dbias = dpre.sum(axis=(0, 1))
    dwin = np.einsum("bpf,fwd->bpwd", dpre, c.filters, optimize=True)
    dseq = np.zeros((B, T, d))
    for k in range(w):
        dseq[:, k:k + P] += dwin[:, :, k]
    if c.single:
        dseq = dseq[0]
    return dseq, {"filters": dfilters, "bias": dbias}


# ---------------------------------------------------------------- classifier head

def dense_softmax(v, params):
    W_v, b_v = params["W_v"], params["b_v"]
    _check(W_v.shape[1] == np.shape(v)[-1], f"W_v {W_v.shape} does not accept input of width {np.shape(v)[-1]}")
    _check(b_v.shape == (W_v.shape[0],), f"b_v {b_v.shape} != ({W_v.shape[0]},)")
    y = softmax_rows(v @ W_v.T + b_v)
    return y, Cache(v=np.asarray(v), y=y, W_v=W_v)


def softmax_grad_logits(y, grad_y):
    """Pull a gradient on softmax outputs back to the logits."""
    return y * (grad_y - (y * grad_y).sum(axis=-1, keepdims=True))


def dense_backward(cache: Cache, grad_logits):
    """Backward from logits; use ``(y - t) / m`` for cross-entropy."""
    c = cache.consume()
    g = np.atleast_2d(grad_logits)
    v = np.atleast_2d(c.v)
    dv = g @ c.W_v
    return (dv[0] if np.ndim(c.v) == 1 else dv), {"W_v": g.T @ v, "b_v": g.sum(axis=0)}


# ---------------------------------------------------------------- dropout

def dropout(x, rate: float, mode: str, rng: Rng | None):
    """Inverted dropout; eval mode returns ``x`` itself."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval":
        return x, Cache(mask=None)
    if mode != "train":
        raise ParameterError(f"mode must be 'train' or 'eval', got {mode!r}")
    mask = (rng.random(np.shape(x)) >= rate) / (1.0 - rate)
    return x * mask, Cache(mask=mask)


def dropout_backward(cache: Cache, grad_out):
    c = cache.consume()
    return grad_out if c.mask is None else grad_out * c.mask


# ---------------------------------------------------------------- loss

def _check_one_hot(t: np.ndarray) -> None:
    ok = np.isin(t, (0.0, 1.0)).all() and (t.sum(axis=-1) == 1).all()
    if not ok:
        raise LabelError("targets must be one-hot rows")


def _theta_sq_norm(theta) -> float:
    if theta is None:
        return 0.0
    if isinstance(theta, ParamSet):
        return theta.sq_norm()
    if isinstance(theta, (int, float)):
        return float(theta)
    if isinstance(theta, np.ndarray):
        return float(np.vdot(theta, theta))
    return float(sum(np.vdot(p, p) for p in theta))


def loss_ce_l2(y, t, theta: ParamSet | Iterable[np.ndarray] | None = None, lam: float = 0.0, m: int | None = None) -> float:
    """``-(1/m) sum_i t_i . log y_i + lam * ||theta||_F^2`` with log clamped at 1e-12.

    ``theta`` may be a :class:`ParamSet`, an iterable of arrays, or an
    already-computed squared norm.
    """
    y = np.atleast_2d(y)
    t = np.atleast_2d(t)
    _check(y.shape == t.shape, f"predictions {y.shape} and targets {t.shape} differ")
    _check_one_hot(t)
    m = y.shape[0] if m is None else m
    nll = -float((t * np.log(np.maximum(y, LOG_FLOOR))).sum()) / m
    return nll + lam * _theta_sq_norm(theta)


def loss_mse_l2(y, t, theta=None, lam: float = 0.0, m: int | None = None) -> float:
    """Sum-of-squares alternative: ``(1/m) sum_i ||y_i - t_i||^2 + lam * ||theta||^2``."""
    y = np.atleast_2d(y)
    t = np.atleast_2d(t)
    _check(y.shape == t.shape, f"predictions {y.shape} and targets {t.shape} differ")
    _check_one_hot(t)
    m = y.shape[0] if m is None else m
    return float(((y - t) ** 2).sum()) / m + lam * _theta_sq_norm(theta)


def ce_grad_logits(y, t, m: int | None = None):
    y = np.atleast_2d(y)
    return (y - t) / (y.shape[0] if m is None else m)


def mse_grad_logits(y, t, m: int | None = None):
    y = np.atleast_2d(y)
    m = y.shape[0] if m is None else m
    return softmax_grad_logits(y, 2.0 * (y - t) / m)
