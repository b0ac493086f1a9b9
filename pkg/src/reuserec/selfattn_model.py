"""Minimal causal self-attention comparator.

Every block rewrites all n position representations (quadratic in n),
which is exactly the behaviour the reuse model avoids. Block conventions
(residual placement, activation, no layer norm) mirror the reuse model so
the two differ only in what the attention consumes. Per-block n x n
attention maps are exported for the entropy diagnostics.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError, DegenerateInputError
from .model_common import embed_sequence, window_mask, zero_grads
from .numerics import activation, activation_grad, matmul


@dataclass
class SaTrace:
    slots: tuple
    E: np.ndarray
    key_mask: np.ndarray          # n x n bools: position j may attend to k
    hs: list                      # n_b+1 matrices (n x d)
    maps: list = field(default_factory=list)    # per block: head-averaged n x n
    caches: list = field(default_factory=list)


def causal_key_mask(slots, hyper):
    """key_mask[j, k] is True when position j may attend to position k.

    Causality restricts k <= j; with mask_padding on, padding slots are
    additionally excluded as keys. Rows at padding query positions may end
    up empty; their attention output is defined as zero.
    """
    n = hyper.n
    valid = window_mask(slots, hyper)
    causal = np.tril(np.ones((n, n), dtype=bool))
    return causal & valid[None, :]


def _rows_softmax(logits, key_mask):
    """Row-wise masked softmax; rows with no valid key come out all-zero."""
    n = logits.shape[0]
    out = np.zeros_like(logits)
    for j in range(n):
        mask = key_mask[j]
        if not mask.any():
            continue
        row = logits[j][mask]
        e = np.exp(row - row.max())
        out[j][mask] = e / e.sum()
    return out


def sa_block(H, params, prefix, key_mask, hyper, counter=None, dropout_rng=None):
    """One causal self-attention block over all positions.

    Returns (H_next, head-averaged attention map, per-head maps, cache).
    The map satisfies A[j, k] = 0 for j < k by construction.
    """
    if not key_mask.any():
        raise DegenerateInputError("sa_block: no position can attend anywhere")
    s = hyper.logit_scale
    dh = hyper.head_dim
    n = H.shape[0]
    concat = np.empty((n, hyper.d))
    heads = []
    head_maps = []
    for k in range(hyper.n_h):
        Qh = matmul(H, params[f"{prefix}.Q{k}"], counter)
        Kh = matmul(H, params[f"{prefix}.Z{k}"], counter)
        Vh = matmul(H, params[f"{prefix}.Wv{k}"], counter)
        logits = matmul(Qh, Kh.T, counter) / s
        A = _rows_softmax(logits, key_mask)
        out = matmul(A, Vh, counter)
        concat[:, k * dh:(k + 1) * dh] = out
        heads.append({"Qh": Qh, "Kh": Kh, "Vh": Vh, "A": A})
        head_maps.append(A)
    G = matmul(concat, params[f"{prefix}.C"], counter)
    if dropout_rng is not None and hyper.dropout > 0.0:
        mask_g = (dropout_rng.random(G.shape) >= hyper.dropout) / (1.0 - hyper.dropout)
        G = G * mask_g
    else:
        mask_g = None
    a = H + G
    z = matmul(a, params[f"{prefix}.W1"], counter) + params[f"{prefix}.b1"]
    fz = activation(z, hyper.activation)
    if dropout_rng is not None and hyper.dropout > 0.0:
        mask_f = (dropout_rng.random(fz.shape) >= hyper.dropout) / (1.0 - hyper.dropout)
        fz_d = fz * mask_f
    else:
        mask_f = None
        fz_d = fz
    out = matmul(fz_d, params[f"{prefix}.W2"], counter) + params[f"{prefix}.b2"]
    H_next = a + out
    A_mean = sum(head_maps) / hyper.n_h
    cache = {"H": H, "heads": heads, "concat": concat, "mask_g": mask_g,
             "a": a, "z": z, "fz": fz, "fz_d": fz_d, "mask_f": mask_f}
    return H_next, A_mean, head_maps, cache


def forward(slots, params, hyper, counter=None, dropout_rng=None):
    """Stacked SA blocks over the embedded window.

    Returns (h, trace): h is the last-position row (1 x d), the prediction
    representation; trace.maps holds the head-averaged map of every block.
    """
    E = embed_sequence(slots, params, hyper)
    key_mask = causal_key_mask(slots, hyper)
    H = E
    trace = SaTrace(slots=tuple(slots), E=E, key_mask=key_mask, hs=[H])
    for m in range(hyper.n_b):
        H, A_mean, head_maps, cache = sa_block(H, params, f"b{m}", key_mask,
                                               hyper, counter, dropout_rng)
        trace.hs.append(H)
        trace.maps.append(A_mean)
        cache["head_maps"] = head_maps
        trace.caches.append(cache)
    return H[-1:].copy(), trace


def _rows_softmax_backward(A, dA):
    inner = np.sum(dA * A, axis=1, keepdims=True)
    return A * (dA - inner)


def backward(dh, trace, params, hyper, grads=None, counter=None):
    """Analytic gradients from the last-position output row.

    Mirrors the reuse model's contract: accumulates into `grads`, forces
    the padding row of V to zero, returns the dict.
    """
    if grads is None:
        grads = zero_grads(params)
    if len(trace.caches) != hyper.n_b:
        raise ContractViolationError("trace does not match the given hyperparameters")
    s = hyper.logit_scale
    dhd = hyper.head_dim
    n = trace.E.shape[0]
    dH = np.zeros_like(trace.E)
    dH[-1] += np.asarray(dh, dtype=np.float64).ravel()
    for m in reversed(range(hyper.n_b)):
        prefix = f"b{m}"
        cache = trace.caches[m]
        dout = dH
        da = dH.copy()
        grads[f"{prefix}.W2"] += matmul(cache["fz_d"].T, dout, counter)
        grads[f"{prefix}.b2"] += dout.sum(axis=0, keepdims=True)
        dfz = matmul(dout, params[f"{prefix}.W2"].T, counter)
        if cache["mask_f"] is not None:
            dfz = dfz * cache["mask_f"]
        dz = dfz * activation_grad(cache["z"], hyper.activation)
        grads[f"{prefix}.W1"] += matmul(cache["a"].T, dz, counter)
        grads[f"{prefix}.b1"] += dz.sum(axis=0, keepdims=True)
        da += matmul(dz, params[f"{prefix}.W1"].T, counter)
        dG = da
        dH_prev = da.copy()
        if cache["mask_g"] is not None:
            dG = dG * cache["mask_g"]
        grads[f"{prefix}.C"] += matmul(cache["concat"].T, dG, counter)
        dconcat = matmul(dG, params[f"{prefix}.C"].T, counter)
        H = cache["H"]
        for k in range(hyper.n_h):
            hc = cache["heads"][k]
            d_out = dconcat[:, k * dhd:(k + 1) * dhd]
            dA = matmul(d_out, hc["Vh"].T, counter)
            dVh = matmul(hc["A"].T, d_out, counter)
            dlogits = _rows_softmax_backward(hc["A"], dA) / s
            dQh = matmul(dlogits, hc["Kh"], counter)
            dKh = matmul(dlogits.T, hc["Qh"], counter)
            grads[f"{prefix}.Q{k}"] += matmul(H.T, dQh, counter)
            grads[f"{prefix}.Z{k}"] += matmul(H.T, dKh, counter)
            grads[f"{prefix}.Wv{k}"] += matmul(H.T, dVh, counter)
            dH_prev += matmul(dQh, params[f"{prefix}.Q{k}"].T, counter)
            dH_prev += matmul(dKh, params[f"{prefix}.Z{k}"].T, counter)
            dH_prev += matmul(dVh, params[f"{prefix}.Wv{k}"].T, counter)
        dH = dH_prev
    grads["P"] += dH
    slots = np.asarray(trace.slots, dtype=np.int64)
    for t, slot in enumerate(slots):
        if slot != 0:
            grads["V"][slot] += dH[t]
    grads["V"][0, :] = 0.0
    return grads
