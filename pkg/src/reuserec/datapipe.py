"""Interaction-log parsing, filtering, splitting and windowing.

The pipeline is: parse a raw log into (user, item, rating, timestamp)
records, apply the rating/count policy to get dense per-user chronological
sequences, split leave-one-out, and expand training portions into
left-padded fixed windows with one example per prefix.
"""

import io
import json
import os
from dataclasses import dataclass, field
from typing import NamedTuple

from .errors import DataFormatError, DegenerateInputError

PAD = 0  # reserved item id for left padding


class Interaction(NamedTuple):
    user: str
    item: str
    rating: float | None
    timestamp: int


class FixedWindow(NamedTuple):
    slots: tuple  # exactly n dense item ids, PAD only as a left prefix
    target: int   # dense item id, never PAD
    user: int     # dense user id


@dataclass
class Dataset:
    """Dense-id view of the filtered log.

    user/item dense ids start at 1; id 0 is the padding item. sequences[i]
    is the chronological item-id list of user i+1.
    """

    user_keys: list          # index u-1 -> external user key
    item_keys: list          # index v-1 -> external item key
    sequences: list          # index u-1 -> list of dense item ids

    @property
    def n_users(self):
        return len(self.user_keys)

    @property
    def n_items(self):
        return len(self.item_keys)

    @property
    def n_interactions(self):
        return sum(len(s) for s in self.sequences)

    def stats(self):
        n_i = self.n_interactions
        return {
            "users": self.n_users,
            "items": self.n_items,
            "interactions": n_i,
            "intrns_per_user": n_i / self.n_users if self.n_users else 0.0,
            "users_per_item": n_i / self.n_items if self.n_items else 0.0,
        }


@dataclass
class SplitBundle:
    """Leave-one-out split: last item -> test, second-last -> validation."""

    train_seqs: dict                  # user id -> list of training item ids
    val_pairs: list                   # (user, input item tuple, target)
    test_pairs: list                  # (user, input item tuple, target)
    excluded_users: list = field(default_factory=list)  # |S| < 3


def parse_log(source, fmt="movielens-dat"):
    """Read an interaction log.

    `source` is a path or a text file object. Formats:
      movielens-dat  user::item::rating::timestamp
      csv / tsv      delimited with header user,item,rating,timestamp
                     (rating column optional)
    Returns (interactions, malformed_count). More than 1% malformed data
    lines is a format error.
    """
    if fmt not in ("movielens-dat", "csv", "tsv"):
        raise ValueError(f"unknown log format {fmt!r}")
    close = False
    if isinstance(source, (str, os.PathLike)):
        fh = open(source, "r", encoding="utf-8", errors="replace")
        close = True
    elif isinstance(source, (bytes, bytearray)):
        fh = io.StringIO(source.decode("utf-8", errors="replace"))
    else:
        fh = source
    try:
        sep = {"movielens-dat": "::", "csv": ",", "tsv": "\t"}[fmt]
        has_header = fmt in ("csv", "tsv")
        out = []
        malformed = 0
        total = 0
        for lineno, line in enumerate(fh):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            if has_header and lineno == 0:
                continue
            total += 1
            parts = line.split(sep)
            try:
                if len(parts) == 4:
                    user, item, rating, ts = parts
                    rating_val = float(rating) if rating != "" else None
                elif len(parts) == 3 and has_header:
                    user, item, ts = parts
                    rating_val = None
                else:
                    raise ValueError("field count")
                out.append(Interaction(user, item, rating_val, int(ts)))
            except ValueError:
                malformed += 1
        if total and malformed > 0.01 * total:
            raise DataFormatError(
                f"{malformed} of {total} data lines malformed (>1%) in {fmt} input")
        return out, malformed
    finally:
        if close:
            fh.close()


def apply_policy(log, min_user_events=5, min_item_events=5, rating_threshold=None):
    """Filter the log and build dense chronological sequences.

    Interactions below `rating_threshold` (if set) are dropped first.
    Minimum-count filtering then iterates to a fixed point so both
    constraints hold simultaneously. Per-user ordering is by timestamp
    with input order breaking ties (stable). Dense ids follow first
    appearance in the resulting ordered stream.
    """
    if not log:
        raise DegenerateInputError("apply_policy: empty interaction log")
    events = [x for x in log
              if rating_threshold is None
              or (x.rating is not None and x.rating >= rating_threshold)]
    if not events:
        raise DegenerateInputError("apply_policy: no interactions above the rating threshold")

    users = {x.user for x in events}
    items = {x.item for x in events}
    while True:
        ucnt, icnt = {}, {}
        for x in events:
            if x.user in users and x.item in items:
                ucnt[x.user] = ucnt.get(x.user, 0) + 1
                icnt[x.item] = icnt.get(x.item, 0) + 1
        keep_u = {u for u, c in ucnt.items() if c >= min_user_events}
        keep_i = {i for i, c in icnt.items() if c >= min_item_events}
        if keep_u == users and keep_i == items:
            break
        users, items = keep_u, keep_i
        if not users or not items:
            raise DegenerateInputError("apply_policy: nothing survives the count constraints")
    events = [x for x in events if x.user in users and x.item in items]

    # user ids by first appearance in input order
    user_id = {}
    user_keys = []
    for x in events:
        if x.user not in user_id:
            user_id[x.user] = len(user_keys) + 1
            user_keys.append(x.user)
    # chronological per-user streams, stable on input order
    per_user = [[] for _ in user_keys]
    for idx, x in enumerate(events):
        per_user[user_id[x.user] - 1].append((x.timestamp, idx, x.item))
    item_id = {}
    item_keys = []
    sequences = []
    for stream in per_user:
        stream.sort(key=lambda t: (t[0], t[1]))
        seq = []
        for _, _, item in stream:
            if item not in item_id:
                item_id[item] = len(item_keys) + 1
                item_keys.append(item)
            seq.append(item_id[item])
        sequences.append(seq)
    return Dataset(user_keys=user_keys, item_keys=item_keys, sequences=sequences)


def leave_one_out(ds):
    """Per user: test target = last item, validation target = second-last.

    Users with fewer than 3 interactions cannot supply train+val+test and
    are excluded from every split.
    """
    train_seqs = {}
    val_pairs = []
    test_pairs = []
    excluded = []
    for u0, seq in enumerate(ds.sequences):
        user = u0 + 1
        if len(seq) < 3:
            excluded.append(user)
            continue
        train = seq[:-2]
        val_t, test_t = seq[-2], seq[-1]
        train_seqs[user] = train
        val_pairs.append((user, tuple(train), val_t))
        test_pairs.append((user, tuple(seq[:-1]), test_t))
    return SplitBundle(train_seqs=train_seqs, val_pairs=val_pairs,
                       test_pairs=test_pairs, excluded_users=excluded)


def window_from_history(items, n):
    """Last n items, left-padded with PAD to exactly n slots."""
    tail = list(items)[-n:]
    return tuple([PAD] * (n - len(tail)) + tail)


def make_windows(train_seq, n, user=0):
    """Prefix-augmented training examples from one training sequence.

    Takes the last n items [b1..bm] and emits, for each t in 2..m, the
    window holding [b1..b_{t-1}] (left-padded) with target b_t.
    """
    if n < 2:
        raise ValueError("window length n must be >= 2")
    tail = list(train_seq)[-n:]
    out = []
    for t in range(1, len(tail)):
        prefix = tail[:t]
        out.append(FixedWindow(
            slots=tuple([PAD] * (n - len(prefix)) + prefix),
            target=tail[t],
            user=user,
        ))
    return out


def training_windows(bundle, n):
    """All training examples, ordered by user id then prefix length."""
    out = []
    for user in sorted(bundle.train_seqs):
        out.extend(make_windows(bundle.train_seqs[user], n, user=user))
    return out


def user_item_sets(ds):
    """Full interacted-item set per user (train+val+test), for negative sampling."""
    return {u0 + 1: set(seq) for u0, seq in enumerate(ds.sequences)}


# ---------------------------------------------------------------------------
# canonical on-disk form: dense ids, tab-separated, sorted by (user, position)

CANONICAL_FILE = "interactions.tsv"
IDMAP_FILE = "idmap.json"


def write_canonical(ds, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, CANONICAL_FILE)
    with open(path, "w", encoding="utf-8") as fh:
        for u0, seq in enumerate(ds.sequences):
            for pos, item in enumerate(seq):
                # position doubles as the canonical timestamp ordinal
                fh.write(f"{u0 + 1}\t{item}\t{pos}\n")
    with open(os.path.join(out_dir, IDMAP_FILE), "w", encoding="utf-8") as fh:
        json.dump({"users": ds.user_keys, "items": ds.item_keys}, fh, indent=0,
                  sort_keys=True)
    return path


def read_canonical(data_dir):
    with open(os.path.join(data_dir, IDMAP_FILE), encoding="utf-8") as fh:
        idmap = json.load(fh)
    sequences = [[] for _ in idmap["users"]]
    with open(os.path.join(data_dir, CANONICAL_FILE), encoding="utf-8") as fh:
        for line in fh:
            u, i, _pos = line.split("\t")
            sequences[int(u) - 1].append(int(i))
    return Dataset(user_keys=idmap["users"], item_keys=idmap["items"],
                   sequences=sequences)
