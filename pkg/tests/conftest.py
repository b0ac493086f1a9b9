"""Shared fixtures and oracles for the test suite."""

import os

import numpy as np
import pytest

from reuserec.datapipe import Dataset
from reuserec.model_common import ModelHyper, zero_grads
from reuserec.models import SequenceModel
from reuserec.numerics import Rng, sigmoid
from reuserec.trainer import bce_pair_loss

ML1M_ENV = "REUSEREC_ML1M"
ML1M_CANDIDATES = (
    "data/ml-1m/ratings.dat",
    "ml-1m/ratings.dat",
    "/root/data/ml-1m/ratings.dat",
    os.path.expanduser("~/ml-1m/ratings.dat"),
)


def ml1m_ratings_path():
    """Path to the raw MovieLens-1M ratings file, or None if unavailable."""
    env = os.environ.get(ML1M_ENV)
    if env and os.path.exists(env):
        return env
    for cand in ML1M_CANDIDATES:
        if os.path.exists(cand):
            return cand
    return None


def markov_dataset(n_users=1000, n_items=100, seq_len=30, successors=5, seed=1234):
    """First-order Markov interaction data: each item has `successors` fixed
    high-probability next items carrying 0.9 of the transition mass.

    Successor sets are shifts of one random offset set (a circulant
    transition matrix), so every item is a high-probability successor of
    exactly `successors` items and the stationary distribution stays
    uniform — item popularity alone predicts nothing beyond chance.
    """
    gen = np.random.default_rng(seed)
    offsets = gen.choice(np.arange(1, n_items), size=successors, replace=False)
    succ = (np.arange(n_items)[:, None] + offsets[None, :]) % n_items
    hi, lo = 0.9 / successors, 0.1 / (n_items - successors)
    probs = np.full((n_items, n_items), lo)
    for i in range(n_items):
        probs[i, succ[i]] = hi
    sequences = []
    for _u in range(n_users):
        cur = int(gen.integers(n_items))
        seq = [cur + 1]
        for _ in range(seq_len - 1):
            cur = int(gen.choice(n_items, p=probs[cur]))
            seq.append(cur + 1)
        sequences.append(seq)
    return Dataset(user_keys=[f"u{i}" for i in range(n_users)],
                   item_keys=[f"i{j}" for j in range(n_items)],
                   sequences=sequences)


def build_model(kind, seed=0, d=8, n=6, n_h=2, n_b=2, n_items=20, n_users=4,
                **hyper_kw):
    rng = Rng(seed)
    hyper = ModelHyper(d=d, n=n, n_h=n_h, n_b=n_b, **hyper_kw)
    return SequenceModel.create(kind, hyper, n_items, n_users, rng.stream("init"))


def pair_loss_and_grads(model, user, slots, target, negative):
    """Loss plus full analytic gradients for one training pair."""
    h, trace = model.forward(user, slots)
    r_pos = model.score(h, user, target)
    r_neg = model.score(h, user, negative)
    loss = bce_pair_loss(r_pos, r_neg)
    grads = zero_grads(model.params)
    d_pos = float(sigmoid(r_pos)) - 1.0
    d_neg = float(sigmoid(r_neg))
    V = model.params["V"]
    dh = d_pos * V[target] + d_neg * V[negative]
    q = h.ravel()
    u_row = model.user_row(user)
    if u_row is not None:
        q = q + u_row
        grads["U"][user - 1] += dh
    grads["V"][target] += d_pos * q
    grads["V"][negative] += d_neg * q
    model.backward(dh.reshape(1, -1), trace, grads)
    return loss, grads


def fd_worst_rel_err(kind, seed, step=1e-5, denom_floor=1e-6, sample=None):
    """Central finite-difference check of the full-model gradient.

    Relative error uses max(|fd|, |analytic|, denom_floor) in the
    denominator: entries above the floor are checked at full relative
    strength; below it the check degrades to an absolute gate around
    step^2, far tighter than any genuine gradient bug. With `sample` set,
    at most that many entries per parameter tensor are probed (seeded).
    """
    rng = Rng(seed)
    model = build_model(kind, seed=seed)
    gen = rng.stream("data")
    slots = tuple([0, 0] + list(int(x) for x in gen.integers(1, 21, size=4)))
    user = int(gen.integers(1, 5))
    target = int(gen.integers(1, 21))
    negative = int(gen.integers(1, 21))
    _, grads = pair_loss_and_grads(model, user, slots, target, negative)

    def loss_only():
        h, _ = model.forward(user, slots)
        return bce_pair_loss(model.score(h, user, target),
                             model.score(h, user, negative))

    worst = 0.0
    pick = np.random.default_rng(seed + 1)
    for name, g in grads.items():
        flat = model.params[name].reshape(-1)
        gflat = g.reshape(-1)
        d = model.params[name].shape[-1]
        if sample is not None and flat.size > sample:
            indices = pick.choice(flat.size, size=sample, replace=False)
        else:
            indices = range(flat.size)
        for i in indices:
            if name == "V" and i < d:
                continue  # frozen padding row
            old = flat[i]
            flat[i] = old + step
            lp = loss_only()
            flat[i] = old - step
            lm = loss_only()
            flat[i] = old
            fd = (lp - lm) / (2.0 * step)
            rel = abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), denom_floor)
            worst = max(worst, rel)
    return worst


@pytest.fixture
def tiny_log(tmp_path):
    """A small raw interaction log where every user/item survives 2-core."""
    lines = []
    gen = np.random.default_rng(9)
    for u in range(12):
        items = gen.permutation(8)[:6] + 1
        for t, it in enumerate(items):
            lines.append(f"{u + 1}::{it}::{int(gen.integers(1, 6))}::{1000 + u * 50 + t}")
    path = tmp_path / "raw.dat"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)
