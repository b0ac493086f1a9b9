"""Training loop: pairwise BCE loss, per-epoch negative sampling,
seeded example shuffling, Adam updates, early stopping on validation
Recall@10, and grid sweeps."""

import time
from dataclasses import dataclass, field

import numpy as np

from . import evalkit
from .datapipe import training_windows
from .errors import DegenerateInputError, NumericalError
from .model_common import ModelHyper, zero_grads
from .models import SequenceModel
from .numerics import AdamState, Rng, adam_step, sigmoid, softplus


@dataclass
class TrainConfig:
    model: str = "ram"            # ram | ram-u | sa
    epochs: int = 20
    learning_rate: float = 1e-3
    batch_size: int = 1           # examples per Adam step; 1 = pure SGD-style
    seed: int = 42
    patience: int = 10            # non-improving validation evaluations allowed
    eval_every: int = 1           # epochs between validation evaluations
    dropout_in_training: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class FitResult:
    model: SequenceModel
    best_params: dict
    best_metric: float | None
    best_epoch: int | None
    log: list = field(default_factory=list)       # deterministic epoch records
    timings: list = field(default_factory=list)   # wall-clock seconds per epoch
    last_adam: AdamState | None = None            # optimizer state after the last epoch


def bce_pair_loss(r_pos, r_neg):
    """-[log sigma(r_pos) + log(1 - sigma(r_neg))] in softplus form."""
    return float(softplus(-r_pos) + softplus(r_neg))


def sample_negative(n_items, interacted, gen):
    """Uniform draw over items 1..n_items outside the user's item set."""
    if len(interacted) >= n_items:
        raise DegenerateInputError("user interacted with every item; no negative exists")
    while True:
        j = int(gen.integers(1, n_items + 1))
        if j not in interacted:
            return j


def _train_one(model, example, negative, grads, dropout_rng=None):
    """Forward/backward for one example; returns the pair loss."""
    h, trace = model.forward(example.user, example.slots, dropout_rng=dropout_rng)
    r_pos = model.score(h, example.user, example.target)
    r_neg = model.score(h, example.user, negative)
    loss = bce_pair_loss(r_pos, r_neg)
    d_pos = float(sigmoid(r_pos)) - 1.0
    d_neg = float(sigmoid(r_neg))
    V = model.params["V"]
    dh = d_pos * V[example.target] + d_neg * V[negative]
    q = h.ravel()
    u_row = model.user_row(example.user)
    if u_row is not None:
        q = q + u_row
        grads["U"][example.user - 1] += dh
    grads["V"][example.target] += d_pos * q
    grads["V"][negative] += d_neg * q
    model.backward(dh.reshape(1, -1), trace, grads)
    return loss


def train_epoch(model, examples, item_sets, config, epoch, rng, adam):
    """One pass over the examples in a seeded permutation.

    One fresh negative per example per epoch, drawn from a stream keyed by
    (seed, epoch, example index). Returns the mean pair loss.
    """
    if not examples:
        raise DegenerateInputError("train_epoch: no training examples")
    perm = rng.stream("perm", epoch).permutation(len(examples))
    grads = zero_grads(model.params)
    total = 0.0
    in_batch = 0
    use_dropout = model.hyper.dropout > 0.0 and config.dropout_in_training
    for idx in perm:
        ex = examples[int(idx)]
        neg = sample_negative(model.n_items, item_sets[ex.user],
                              rng.stream("neg", epoch, int(idx)))
        drop = rng.stream("drop", epoch, int(idx)) if use_dropout else None
        loss = _train_one(model, ex, neg, grads, dropout_rng=drop)
        if not np.isfinite(loss):
            raise NumericalError(
                f"non-finite loss at epoch {epoch}; check the learning rate "
                f"({adam.learning_rate}) and initialization scale")
        total += loss
        in_batch += 1
        if in_batch == config.batch_size:
            adam_step(model.params, grads, adam, frozen_rows=model.frozen_rows)
            grads = zero_grads(model.params)
            in_batch = 0
    if in_batch:
        adam_step(model.params, grads, adam, frozen_rows=model.frozen_rows)
    return total / len(examples)


def fit(bundle, n_items, n_users, hyper, config, start_state=None):
    """Train with early stopping on validation Recall@10.

    Keeps the parameter snapshot of the best validation evaluation and
    stops once `patience` consecutive evaluations fail to improve.
    `start_state` resumes from (model, adam, epoch) of a loaded checkpoint.
    """
    rng = Rng(config.seed)
    if start_state is None:
        model = SequenceModel.create(config.model, hyper, n_items, n_users,
                                     rng.stream("init"))
        adam = AdamState.for_params(model.params, learning_rate=config.learning_rate)
        first_epoch = 1
    else:
        model, adam, last_epoch = start_state
        first_epoch = last_epoch + 1
    examples = training_windows(bundle, hyper.n)
    item_sets = _full_item_sets(bundle)
    result = FitResult(model=model, best_params=model.copy_params(),
                       best_metric=None, best_epoch=None)
    bad_evals = 0
    for epoch in range(first_epoch, config.epochs + 1):
        t0 = time.perf_counter()
        loss = train_epoch(model, examples, item_sets, config, epoch, rng, adam)
        record = {"epoch": epoch, "loss": loss}
        if epoch % config.eval_every == 0 and bundle.val_pairs:
            report = evalkit.evaluate(model, bundle.val_pairs, cutoffs=(10,))
            recall10 = report["cutoffs"]["10"]["recall"]
            record["val_recall10"] = recall10
            if result.best_metric is None or recall10 > result.best_metric:
                result.best_metric = recall10
                result.best_epoch = epoch
                result.best_params = model.copy_params()
                bad_evals = 0
            else:
                bad_evals += 1
        result.log.append(record)
        result.timings.append({"epoch": epoch, "seconds": time.perf_counter() - t0})
        if record.get("val_recall10") is not None and bad_evals > config.patience:
            break
    if result.best_metric is None:
        result.best_params = model.copy_params()
    result.last_adam = adam
    return result


def _full_item_sets(bundle):
    """Train+val+test item set per user; negatives must avoid all of S_i."""
    sets = {}
    val_t = {u: t for u, _, t in bundle.val_pairs}
    test_t = {u: t for u, _, t in bundle.test_pairs}
    for user, seq in bundle.train_seqs.items():
        s = set(seq)
        if user in val_t:
            s.add(val_t[user])
        if user in test_t:
            s.add(test_t[user])
        sets[user] = s
    return sets


def sweep(grid, bundle, n_items, n_users, config, base_hyper=None):
    """One fit per grid cell, ranked by validation Recall@10 (descending).

    Cells where n_h does not divide d are skipped with a log entry. Each
    grid entry is a dict with any of d, n, n_h, n_b.
    """
    base = (base_hyper or ModelHyper()).to_dict()
    rows = []
    skipped = []
    for cell in grid:
        settings = dict(base)
        settings.update(cell)
        try:
            hyper = ModelHyper(**settings)
        except ValueError as exc:
            skipped.append({"cell": dict(cell), "reason": str(exc)})
            continue
        res = fit(bundle, n_items, n_users, hyper, config)
        rows.append({
            "d": hyper.d, "n": hyper.n, "n_h": hyper.n_h, "n_b": hyper.n_b,
            "val_recall10": res.best_metric,
            "best_epoch": res.best_epoch,
        })
    rows.sort(key=lambda r: (-(r["val_recall10"] if r["val_recall10"] is not None else -1.0),
                             r["d"], r["n"], r["n_h"], r["n_b"]))
    return rows, skipped


def popularity_recall(bundle, n_items, k=10):
    """Recall@k of the most-popular-items baseline on the test split."""
    counts = np.zeros(n_items + 1, dtype=np.int64)
    for seq in bundle.train_seqs.values():
        for item in seq:
            counts[item] += 1
    top = set(np.argsort(-counts[1:], kind="stable")[:k] + 1)
    hits = sum(1 for _, _, t in bundle.test_pairs if t in top)
    return hits / len(bundle.test_pairs)
