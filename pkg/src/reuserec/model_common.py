"""Shapes, initialization, embedding and scoring shared by both models."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError, ShapeError
from .numerics import matmul


@dataclass
class ModelHyper:
    """Architecture settings shared by the reuse model and the SA comparator.

    scale picks the attention logit divisor: "full" is sqrt(d), "head" is
    sqrt(d / n_h). use_user_embedding distinguishes the full model from
    its no-user-embedding ablation and is ignored by the SA comparator.
    """

    d: int = 64
    n: int = 50
    n_h: int = 2
    n_b: int = 2
    activation: str = "gelu"
    use_user_embedding: bool = True
    mask_padding: bool = True
    scale: str = "full"
    dropout: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.d % self.n_h != 0:
            raise ValueError(f"d mod n_h must be 0 (d={self.d}, n_h={self.n_h})")
        if self.n_b < 1:
            raise ValueError("n_b must be >= 1")
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.scale not in ("full", "head"):
            raise ValueError(f"unknown scale mode {self.scale!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def head_dim(self):
        return self.d // self.n_h

    @property
    def logit_scale(self):
        return float(np.sqrt(self.d if self.scale == "full" else self.head_dim))

    def to_dict(self):
        return {
            "d": self.d, "n": self.n, "n_h": self.n_h, "n_b": self.n_b,
            "activation": self.activation,
            "use_user_embedding": self.use_user_embedding,
            "mask_padding": self.mask_padding,
            "scale": self.scale, "dropout": self.dropout,
        }


def block_param_shapes(hyper):
    dh = hyper.head_dim
    shapes = {}
    for k in range(hyper.n_h):
        shapes[f"Q{k}"] = (hyper.d, dh)
        shapes[f"Z{k}"] = (hyper.d, dh)
        shapes[f"Wv{k}"] = (hyper.d, dh)
    shapes["C"] = (hyper.d, hyper.d)
    shapes["W1"] = (hyper.d, hyper.d)
    shapes["b1"] = (1, hyper.d)
    shapes["W2"] = (hyper.d, hyper.d)
    shapes["b2"] = (1, hyper.d)
    return shapes


def param_shapes(hyper, n_items, n_users, with_user):
    """Ordered name -> shape table; row 0 of V is the frozen padding row."""
    shapes = {"V": (n_items + 1, hyper.d), "P": (hyper.n, hyper.d)}
    if with_user:
        shapes["U"] = (n_users, hyper.d)
    for m in range(hyper.n_b):
        for name, shp in block_param_shapes(hyper).items():
            shapes[f"b{m}.{name}"] = shp
    return shapes


def init_params(hyper, n_items, n_users, rng, with_user):
    """Zero-mean uniform init with scale 1/sqrt(d); biases and padding row zero."""
    bound = 1.0 / np.sqrt(hyper.d)
    params = {}
    for name, shape in param_shapes(hyper, n_items, n_users, with_user).items():
        if name.endswith((".b1", ".b2")):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.uniform(-bound, bound, size=shape)
    params["V"][0, :] = 0.0
    return params


def zero_grads(params):
    return {k: np.zeros_like(v) for k, v in params.items()}


def embed_sequence(slots, params, hyper):
    """Sequence matrix: row t is item embedding of slot t plus position embedding t.

    Padding slots (id 0) hit the all-zero row of V, leaving the position
    embedding alone.
    """
    slots = np.asarray(slots, dtype=np.int64)
    if slots.shape != (hyper.n,):
        raise ShapeError(f"window must have exactly {hyper.n} slots, got {slots.shape}")
    if slots.min() < 0 or slots.max() >= params["V"].shape[0]:
        raise IndexError(f"item id out of range [0, {params['V'].shape[0] - 1}]")
    return params["V"][slots] + params["P"]


def window_mask(slots, hyper):
    slots = np.asarray(slots, dtype=np.int64)
    if hyper.mask_padding:
        return slots != 0
    return np.ones(len(slots), dtype=bool)


def score(h, user_row, item_id, params):
    """Dot-product score of one item; padding (id 0) is never scored.

    Computed as h.v + u.v (not (h+u).v) so the user-embedding term is an
    exact additive contribution: score-with-user minus score-without-user
    equals u.v to the last bit.
    """
    if item_id < 1 or item_id >= params["V"].shape[0]:
        raise ContractViolationError(f"item id {item_id} is not a scorable item")
    v = params["V"][item_id]
    val = float(np.dot(np.asarray(h, dtype=np.float64).ravel(), v))
    if user_row is not None:
        val += float(np.dot(np.asarray(user_row, dtype=np.float64).ravel(), v))
    return val


def score_all(h, user_row, params, counter=None):
    """Scores over items 1..|V| as one matrix-vector product."""
    q = np.asarray(h, dtype=np.float64).reshape(1, -1)
    if user_row is not None:
        q = q + np.asarray(user_row, dtype=np.float64).reshape(1, -1)
    return matmul(q, params["V"][1:].T, counter=counter).ravel()
