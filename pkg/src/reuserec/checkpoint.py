"""Bit-exact parameter checkpoints.

Layout: one UTF-8 JSON header line (format tag, model kind, hyper block,
ordered array shape table, scalar metadata), a newline, then the raw
little-endian float64 row-major bytes of every array in table order.
Writing the same state twice yields byte-identical files.
"""

import json

import numpy as np

from .errors import DataFormatError
from .model_common import ModelHyper
from .numerics import AdamState

FORMAT_TAG = "reuserec-checkpoint"
FORMAT_VERSION = 1


def save_checkpoint(path, kind, hyper, n_items, n_users, params,
                    adam=None, meta=None):
    arrays = [(name, params[name]) for name in params]
    if adam is not None:
        for name in params:
            arrays.append((f"adam.m.{name}", adam.first_moment[name]))
            arrays.append((f"adam.v.{name}", adam.second_moment[name]))
    header = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "kind": kind,
        "hyper": hyper.to_dict(),
        "n_items": int(n_items),
        "n_users": int(n_users),
        "arrays": [[name, list(a.shape)] for name, a in arrays],
        "adam": None if adam is None else {
            "learning_rate": adam.learning_rate, "beta1": adam.beta1,
            "beta2": adam.beta2, "epsilon": adam.epsilon,
            "step_count": adam.step_count,
        },
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns a dict with kind, hyper, n_items, n_users, params, adam, meta."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataFormatError(f"not a checkpoint file: {path}") from exc
        if header.get("format") != FORMAT_TAG:
            raise DataFormatError(f"not a checkpoint file: {path}")
        if header.get("version") != FORMAT_VERSION:
            raise DataFormatError(f"unsupported checkpoint version {header.get('version')}")
        blob = fh.read()
    arrays = {}
    offset = 0
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(blob):
            raise DataFormatError(f"checkpoint truncated at array {name!r}")
        arrays[name] = np.frombuffer(blob[offset:offset + nbytes],
                                     dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise DataFormatError("checkpoint has trailing bytes")
    params = {k: v for k, v in arrays.items() if not k.startswith("adam.")}
    adam = None
    if header.get("adam"):
        ah = header["adam"]
        adam = AdamState(learning_rate=ah["learning_rate"], beta1=ah["beta1"],
                         beta2=ah["beta2"], epsilon=ah["epsilon"],
                         step_count=ah["step_count"])
        adam.first_moment = {k: arrays[f"adam.m.{k}"] for k in params}
        adam.second_moment = {k: arrays[f"adam.v.{k}"] for k in params}
    return {
        "kind": header["kind"],
        "hyper": ModelHyper(**header["hyper"]),
        "n_items": header["n_items"],
        "n_users": header["n_users"],
        "params": params,
        "adam": adam,
        "meta": header["meta"],
    }
