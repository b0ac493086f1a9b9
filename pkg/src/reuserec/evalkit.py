"""Ranking metrics and model diagnostics.

Covers Recall@k / NDCG@k over full-catalog rankings, the average-entropy
diagnostic for exported attention maps with its uniform-random baseline,
consecutive-block output similarity, and user-embedding similarity
histograms.
"""

import math
from dataclasses import dataclass

import numpy as np

from .datapipe import window_from_history
from .errors import DataFormatError, DegenerateInputError
from .numerics import cosine_similarity


def rank_of_target(scores, target):
    """1-indexed rank of the target item in a score vector over items 1..|V|.

    Ties break by ascending item id: an equal-scoring item outranks the
    target only if its id is smaller.
    """
    scores = np.asarray(scores, dtype=np.float64)
    s_t = scores[target - 1]
    greater = int(np.sum(scores > s_t))
    ties_before = int(np.sum(scores[:target - 1] == s_t))
    return 1 + greater + ties_before


def recall_ndcg(rank, k):
    """Per-user contributions: hit indicator and its rank-discounted form.

    The single relevant item makes the ideal DCG 1, so NDCG reduces to
    1/log2(rank+1) inside the cutoff.
    """
    if rank <= k:
        return 1.0, 1.0 / math.log2(rank + 1)
    return 0.0, 0.0


def evaluate(model, pairs, cutoffs=(10, 20), exclude_seen=False, item_sets=None):
    """Mean Recall@k / NDCG@k over (user, history, target) pairs.

    Ranks over the full catalog by default. With exclude_seen, every item
    the user has interacted with (except the target) is pushed below
    everything else before ranking.
    """
    if not pairs:
        raise DegenerateInputError("evaluate: empty split")
    cutoffs = tuple(sorted(cutoffs))
    totals = {k: [0.0, 0.0] for k in cutoffs}
    for user, history, target in pairs:
        window = window_from_history(history, model.hyper.n)
        h, _ = model.forward(user, window)
        scores = model.score_all(h, user)
        if exclude_seen and item_sets is not None:
            seen = [i - 1 for i in item_sets[user] if i != target]
            if seen:
                scores = scores.copy()
                scores[seen] = -np.inf
        rank = rank_of_target(scores, target)
        for k in cutoffs:
            r, n = recall_ndcg(rank, k)
            totals[k][0] += r
            totals[k][1] += n
    users = len(pairs)
    return {
        "users": users,
        "exclude_seen": bool(exclude_seen),
        "cutoffs": {str(k): {"recall": totals[k][0] / users,
                             "ndcg": totals[k][1] / users}
                    for k in cutoffs},
    }


# ---------------------------------------------------------------------------
# attention-map entropy

@dataclass
class ExportedTrace:
    """Per-user attention maps from the SA comparator.

    valid[j] marks non-padding query positions; maps[m] is the
    head-averaged n x n weight matrix of block m.
    """

    user: int
    valid: np.ndarray
    maps: list


def entropy_of_row(row):
    """Shannon entropy (natural log) with the 0*log(0) = 0 convention."""
    row = np.asarray(row, dtype=np.float64)
    p = row[row > 0]
    return float(-(p * np.log(p)).sum())


def average_entropy(traces, row_sum_tol=1e-6):
    """Mean row entropy per block, excluding padding query positions.

    Every counted row must be a distribution (sum within `row_sum_tol`
    of 1). Returns (per-block means, counted row pairs).
    """
    traces = list(traces)
    if not traces:
        raise DegenerateInputError("average_entropy: no traces")
    n_b = len(traces[0].maps)
    sums = [0.0] * n_b
    count = 0
    for tr in traces:
        rows = np.flatnonzero(tr.valid)
        for m, A in enumerate(tr.maps):
            for j in rows:
                row = A[j]
                if abs(row.sum() - 1.0) > row_sum_tol:
                    raise DataFormatError(
                        f"attention row (user {tr.user}, block {m}, pos {j}) "
                        f"sums to {row.sum():.9f}, not 1")
                sums[m] += entropy_of_row(row)
        count += len(rows)
    if count == 0:
        raise DegenerateInputError("average_entropy: every query position is padding")
    return [s / count for s in sums], count


def uniform_baseline_entropy(traces, rng_gen, repeats=1):
    """Entropy of softmax-normalized Uniform(0,1) draws on the same support.

    For each counted row, the nonzero pattern of the learned row is kept
    and its weights replaced by softmax(u), u ~ Uniform(0,1) per slot.
    `repeats` averages several independent fills.
    """
    traces = list(traces)
    if not traces:
        raise DegenerateInputError("uniform_baseline_entropy: no traces")
    n_b = len(traces[0].maps)
    sums = [0.0] * n_b
    count = 0
    for tr in traces:
        rows = np.flatnonzero(tr.valid)
        for m, A in enumerate(tr.maps):
            for j in rows:
                support = np.flatnonzero(A[j] > 0)
                acc = 0.0
                for _ in range(repeats):
                    u = rng_gen.random(len(support))
                    e = np.exp(u - u.max())
                    acc += entropy_of_row(e / e.sum())
                sums[m] += acc / repeats
        count += len(rows)
    if count == 0:
        raise DegenerateInputError("uniform_baseline_entropy: no counted rows")
    return [s / count for s in sums], count


def beta_entropy(model, pairs):
    """Entropy of the reuse model's per-block attention rows (one row per
    block per head), averaged over heads and users. An extension: the map
    diagnostic above is defined on the SA comparator's n x n maps."""
    if model.kind == "sa":
        raise ValueError("beta_entropy applies to the reuse model")
    n_b = model.hyper.n_b
    sums = [0.0] * n_b
    count = 0
    for user, history, _target in pairs:
        window = window_from_history(history, model.hyper.n)
        _, trace = model.forward(user, window)
        for m in range(n_b):
            sums[m] += sum(entropy_of_row(b) for b in trace.betas[m]) / model.hyper.n_h
        count += 1
    return [s / count for s in sums], count


def export_sa_maps(model, pairs, per_head=False):
    """Run the SA comparator over evaluation pairs and collect attention maps."""
    if model.kind != "sa":
        raise ValueError("attention-map export requires the sa model")
    out = []
    for user, history, _target in pairs:
        window = window_from_history(history, model.hyper.n)
        slots = np.asarray(window, dtype=np.int64)
        _, trace = model.forward(user, window)
        maps = ([m for c in trace.caches for m in c["head_maps"]] if per_head
                else list(trace.maps))
        out.append(ExportedTrace(user=user, valid=slots != 0, maps=maps))
    return out


# ---------------------------------------------------------------------------
# similarity diagnostics

def block_similarity(hs):
    """Cosine similarity between consecutive block outputs.

    `hs` is the list h^(0)..h^(n_b); for the SA comparator pass the
    last-position rows. Zero-norm pairs yield None.
    """
    sims = []
    for a, b in zip(hs[:-1], hs[1:]):
        try:
            sims.append(cosine_similarity(np.ravel(a), np.ravel(b)))
        except DegenerateInputError:
            sims.append(None)
    return sims


def mean_block_similarity(model, pairs):
    """block_similarity averaged over users (unweighted mean of per-user values)."""
    n_b = model.hyper.n_b
    sums = [0.0] * n_b
    counts = [0] * n_b
    skipped = 0
    for user, history, _target in pairs:
        window = window_from_history(history, model.hyper.n)
        _, trace = model.forward(user, window)
        hs = trace.hs if model.kind != "sa" else [H[-1] for H in trace.hs]
        for m, sim in enumerate(block_similarity(hs)):
            if sim is None:
                skipped += 1
            else:
                sums[m] += sim
                counts[m] += 1
    means = [sums[m] / counts[m] if counts[m] else None for m in range(n_b)]
    return {"mean_sims": means, "users": len(pairs), "skipped_pairs": skipped}


def user_similarity_histogram(model, pairs, rng_gen, bin_width=0.05):
    """Histograms of sim(h_i, u_i) and sim(h_i, u_j) for a random other user j."""
    if model.kind != "ram":
        raise ValueError("user-similarity analysis needs the user-embedding model")
    if model.n_users < 2:
        raise DegenerateInputError("need at least 2 users")
    edges = np.round(np.arange(-1.0, 1.0 + bin_width / 2, bin_width), 10)
    own_counts = np.zeros(len(edges) - 1, dtype=np.int64)
    other_counts = np.zeros(len(edges) - 1, dtype=np.int64)
    skipped = 0
    for user, history, _target in pairs:
        window = window_from_history(history, model.hyper.n)
        h, _ = model.forward(user, window)
        other = user
        while other == user:
            other = int(rng_gen.integers(1, model.n_users + 1))
        try:
            s_own = cosine_similarity(h, model.params["U"][user - 1])
            s_other = cosine_similarity(h, model.params["U"][other - 1])
        except DegenerateInputError:
            skipped += 1
            continue
        own_counts[min(int((s_own + 1.0) / bin_width), len(own_counts) - 1)] += 1
        other_counts[min(int((s_other + 1.0) / bin_width), len(other_counts) - 1)] += 1
    return {
        "bin_edges": edges.tolist(),
        "own_counts": own_counts.tolist(),
        "other_counts": other_counts.tolist(),
        "users": len(pairs),
        "skipped": skipped,
    }


# ---------------------------------------------------------------------------
# attention-trace file (CSV): header line "n,n_b,n_h,count", then records
# user,block,head,row,w_1..w_n with head = -1 for the head-averaged map.

def write_trace_csv(path, hyper, traces):
    traces = list(traces)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{hyper.n},{hyper.n_b},{hyper.n_h},{len(traces)}\n")
        for tr in traces:
            for m, A in enumerate(tr.maps):
                for j in range(A.shape[0]):
                    if not tr.valid[j]:
                        continue
                    row = ",".join(repr(float(w)) for w in A[j])
                    fh.write(f"{tr.user},{m},-1,{j},{row}\n")


def read_trace_csv(path):
    """Reassembles head-averaged ExportedTrace records from a trace file."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if len(header) != 4:
            raise DataFormatError("trace file header must be n,n_b,n_h,count")
        n, n_b, n_h, count = (int(x) for x in header)
        by_user = {}
        for line in fh:
            parts = line.rstrip("\n").split(",")
            user, block, head, row = (int(x) for x in parts[:4])
            if head != -1:
                continue
            weights = np.array([float(x) for x in parts[4:]])
            if len(weights) != n:
                raise DataFormatError(f"trace row has {len(weights)} weights, expected {n}")
            tr = by_user.setdefault(user, ExportedTrace(
                user=user, valid=np.zeros(n, dtype=bool),
                maps=[np.zeros((n, n)) for _ in range(n_b)]))
            tr.valid[row] = True
            tr.maps[block][row] = weights
    traces = [by_user[u] for u in sorted(by_user)]
    if len(traces) != count:
        raise DataFormatError(f"trace file header says {count} traces, found {len(traces)}")
    return traces, {"n": n, "n_b": n_b, "n_h": n_h, "count": count}
