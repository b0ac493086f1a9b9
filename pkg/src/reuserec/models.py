"""Thin dispatch over the two model families.

Kinds: "ram" (reuse model with user embedding), "ram-u" (same without the
user embedding), "sa" (causal self-attention comparator).
"""

import numpy as np

from . import reuse_model, selfattn_model
from .model_common import init_params, score, score_all

MODEL_KINDS = ("ram", "ram-u", "sa")


class SequenceModel:
    """Parameter set plus forward/backward/scoring for one model kind."""

    def __init__(self, kind, hyper, params, n_items, n_users):
        if kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {kind!r}")
        self.kind = kind
        self.hyper = hyper
        self.params = params
        self.n_items = n_items
        self.n_users = n_users
        self.frozen_rows = {"V": 0}

    @classmethod
    def create(cls, kind, hyper, n_items, n_users, rng_stream):
        if kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {kind!r}")
        hyper.use_user_embedding = kind == "ram"
        params = init_params(hyper, n_items, n_users, rng_stream,
                             with_user=kind == "ram")
        return cls(kind, hyper, params, n_items, n_users)

    def forward(self, user, slots, counter=None, dropout_rng=None):
        if self.kind == "sa":
            return selfattn_model.forward(slots, self.params, self.hyper,
                                          counter, dropout_rng)
        return reuse_model.forward(user, slots, self.params, self.hyper,
                                   counter, dropout_rng)

    def backward(self, dh, trace, grads=None, counter=None):
        if self.kind == "sa":
            return selfattn_model.backward(dh, trace, self.params, self.hyper,
                                           grads, counter)
        return reuse_model.backward(dh, trace, self.params, self.hyper,
                                    grads, counter)

    def user_row(self, user):
        if self.kind == "ram":
            return self.params["U"][user - 1]
        return None

    def score(self, h, user, item_id):
        return score(h, self.user_row(user), item_id, self.params)

    def score_all(self, h, user, counter=None):
        return score_all(h, self.user_row(user), self.params, counter)

    def copy_params(self):
        return {k: v.copy() for k, v in self.params.items()}

    def set_params(self, params):
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
