"""Recursive attention model with a fixed, reused sequence matrix.

One evolving user-state row vector attends over the sequence embedding E;
E itself is never rewritten between blocks, so per-block cost is linear
in the window length. Gradients are hand-composed; `backward` walks the
cached forward trace in reverse.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError
from .model_common import embed_sequence, window_mask, zero_grads
from .numerics import activation, activation_grad, masked_softmax, matmul


@dataclass
class ForwardTrace:
    """Everything the matching backward pass needs."""

    slots: tuple
    user: int
    E: np.ndarray                  # n x d, identical object across blocks
    mask: np.ndarray               # n bools, valid attention slots
    hs: list                       # n_b+1 row vectors (1 x d), hs[0] = e_n
    betas: list = field(default_factory=list)   # per block: list of per-head (n,)
    caches: list = field(default_factory=list)  # per block: dict of intermediates


def _dropout_mask(shape, p, rng):
    if p <= 0.0 or rng is None:
        return None
    keep = (rng.random(shape) >= p).astype(np.float64) / (1.0 - p)
    return keep


def attention_block(h_prev, E, params, prefix, mask, hyper, counter=None):
    """Multi-head attention of one state vector over the fixed matrix E.

    Per head: weights = softmax((h Q)(E Z)^T / scale) over unmasked slots,
    head = weights (E W); heads are concatenated and mixed by C.
    Returns (g, per-head weights, cache).
    """
    s = hyper.logit_scale
    dh = hyper.head_dim
    heads = []
    concat = np.empty((1, hyper.d))
    betas = []
    for k in range(hyper.n_h):
        q = matmul(h_prev, params[f"{prefix}.Q{k}"], counter)
        K = matmul(E, params[f"{prefix}.Z{k}"], counter)
        logits = matmul(q, K.T, counter) / s
        beta = masked_softmax(logits.ravel(), mask)
        Wv = matmul(E, params[f"{prefix}.Wv{k}"], counter)
        head = matmul(beta.reshape(1, -1), Wv, counter)
        concat[0, k * dh:(k + 1) * dh] = head[0]
        heads.append({"q": q, "K": K, "Wv": Wv, "beta": beta})
        betas.append(beta)
    g = matmul(concat, params[f"{prefix}.C"], counter)
    cache = {"heads": heads, "concat": concat, "h_prev": h_prev}
    return g, betas, cache


def block_step(h_prev, E, params, prefix, mask, hyper, counter=None, dropout_rng=None):
    """Attention plus feed-forward, each wrapped in a residual connection."""
    g, betas, cache = attention_block(h_prev, E, params, prefix, mask, hyper, counter)
    mask_g = _dropout_mask(g.shape, hyper.dropout, dropout_rng)
    g_d = g * mask_g if mask_g is not None else g
    a = h_prev + g_d
    z = matmul(a, params[f"{prefix}.W1"], counter) + params[f"{prefix}.b1"]
    fz = activation(z, hyper.activation)
    mask_f = _dropout_mask(fz.shape, hyper.dropout, dropout_rng)
    fz_d = fz * mask_f if mask_f is not None else fz
    out = matmul(fz_d, params[f"{prefix}.W2"], counter) + params[f"{prefix}.b2"]
    h_next = a + out
    cache.update({"mask_g": mask_g, "a": a, "z": z, "fz": fz,
                  "fz_d": fz_d, "mask_f": mask_f})
    return h_next, betas, cache


def forward(user, slots, params, hyper, counter=None, dropout_rng=None):
    """Full forward pass: h^(0) is the last row of E, then n_b block steps.

    Returns (h, trace) with h of shape (1, d).
    """
    E = embed_sequence(slots, params, hyper)
    mask = window_mask(slots, hyper)
    h = E[-1:].copy()
    trace = ForwardTrace(slots=tuple(slots), user=user, E=E, mask=mask, hs=[h])
    for m in range(hyper.n_b):
        h, betas, cache = block_step(h, E, params, f"b{m}", mask, hyper,
                                     counter, dropout_rng)
        trace.hs.append(h)
        trace.betas.append(betas)
        trace.caches.append(cache)
    return h, trace


def _softmax_backward(beta, dbeta):
    inner = float(np.dot(dbeta, beta))
    return beta * (dbeta - inner)


def _block_backward(dh, E, cache, betas, params, prefix, mask, hyper, grads,
                    dE, counter=None):
    """Reverse one block step; returns the gradient w.r.t. h_prev."""
    s = hyper.logit_scale
    dh_next = dh
    # feed-forward residual
    dout = dh_next
    da = dh_next.copy()
    grads[f"{prefix}.W2"] += matmul(cache["fz_d"].T, dout, counter)
    grads[f"{prefix}.b2"] += dout
    dfz = matmul(dout, params[f"{prefix}.W2"].T, counter)
    if cache["mask_f"] is not None:
        dfz = dfz * cache["mask_f"]
    dz = dfz * activation_grad(cache["z"], hyper.activation)
    grads[f"{prefix}.W1"] += matmul(cache["a"].T, dz, counter)
    grads[f"{prefix}.b1"] += dz
    da += matmul(dz, params[f"{prefix}.W1"].T, counter)
    # attention residual
    dg = da
    dh_prev = da.copy()
    if cache["mask_g"] is not None:
        dg = dg * cache["mask_g"]
    grads[f"{prefix}.C"] += matmul(cache["concat"].T, dg, counter)
    dconcat = matmul(dg, params[f"{prefix}.C"].T, counter)
    dhd = hyper.head_dim
    h_prev = cache["h_prev"]
    for k in range(hyper.n_h):
        hc = cache["heads"][k]
        d_head = dconcat[:, k * dhd:(k + 1) * dhd]
        dbeta = matmul(d_head, hc["Wv"].T, counter).ravel()
        dWv = matmul(hc["beta"].reshape(-1, 1), d_head, counter)
        grads[f"{prefix}.Wv{k}"] += matmul(E.T, dWv, counter)
        dE += matmul(dWv, params[f"{prefix}.Wv{k}"].T, counter)
        dlogits = (_softmax_backward(hc["beta"], dbeta) / s).reshape(1, -1)
        dq = matmul(dlogits, hc["K"], counter)
        dK = matmul(dlogits.T, hc["q"], counter)
        grads[f"{prefix}.Q{k}"] += matmul(h_prev.T, dq, counter)
        dh_prev += matmul(dq, params[f"{prefix}.Q{k}"].T, counter)
        grads[f"{prefix}.Z{k}"] += matmul(E.T, dK, counter)
        dE += matmul(dK, params[f"{prefix}.Z{k}"].T, counter)
    return dh_prev


def backward(dh, trace, params, hyper, grads=None, counter=None):
    """Analytic gradients of everything reachable from h^(n_b).

    `dh` is the upstream gradient at the final state (1 x d). Accumulates
    into `grads` (created if missing) and returns it. The padding row of
    V is forced to zero. Gradients flowing into scored item rows or the
    user embedding are the caller's concern (they are outside the trace).
    """
    if grads is None:
        grads = zero_grads(params)
    if len(trace.caches) != hyper.n_b:
        raise ContractViolationError("trace does not match the given hyperparameters")
    dE = np.zeros_like(trace.E)
    dh = np.asarray(dh, dtype=np.float64).reshape(1, -1)
    for m in reversed(range(hyper.n_b)):
        dh = _block_backward(dh, trace.E, trace.caches[m], trace.betas[m],
                             params, f"b{m}", trace.mask, hyper, grads, dE, counter)
    dE[-1] += dh.ravel()  # h^(0) = e_n
    grads["P"] += dE
    slots = np.asarray(trace.slots, dtype=np.int64)
    for t, slot in enumerate(slots):
        if slot != 0:
            grads["V"][slot] += dE[t]
    grads["V"][0, :] = 0.0
    return grads
