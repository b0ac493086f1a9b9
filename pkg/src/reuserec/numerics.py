"""Deterministic dense linear algebra and small numeric primitives.

Everything is float64. Reductions run in a fixed order (ascending index
over the shared dimension), so results are bit-reproducible across runs
and match a naive triple-loop evaluation exactly. There is no global
state; the optional multiply counter is a per-call context object.
"""

import math
import zlib
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DegenerateInputError, NumericalError, ShapeError

# Identifier of the pseudo-random algorithm, recorded in run manifests.
RNG_ALGORITHM = "numpy-pcg64"


class OpCounter:
    """Tallies scalar multiplies performed by matmul.

    Pass one instance through a forward pass to instrument it. Never
    shared implicitly: callers that do not pass a counter pay nothing.
    """

    def __init__(self):
        self.multiplies = 0

    def add(self, n):
        self.multiplies += int(n)


@njit(cache=True)
def _mm_kernel(a, b, out):
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s


def matmul(a, b, counter=None):
    """Matrix product with a fixed summation order.

    The accumulation over the shared dimension runs in ascending index
    order with no reassociation, so the result is bit-identical to a
    scalar triple-loop evaluation. Reports rows_a*cols_a*cols_b scalar
    multiplies to `counter` when one is given.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.ndim}-d and {b.ndim}-d")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    if counter is not None:
        counter.add(a.shape[0] * a.shape[1] * b.shape[1])
    out = np.empty((a.shape[0], b.shape[1]), dtype=np.float64)
    _mm_kernel(np.ascontiguousarray(a), np.ascontiguousarray(b), out)
    return out


def masked_softmax(logits, valid):
    """Softmax restricted to positions where `valid` is True.

    Invalid positions come out exactly zero. Max-subtraction keeps the
    exponentials in range for large logits.
    """
    logits = np.asarray(logits, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if logits.shape != valid.shape:
        raise ShapeError(f"logits {logits.shape} vs mask {valid.shape}")
    if not valid.any():
        raise DegenerateInputError("masked_softmax: every position is masked")
    if not np.isfinite(logits[valid]).all():
        raise NumericalError("masked_softmax: non-finite logit on a valid position")
    out = np.zeros_like(logits)
    m = logits[valid].max()
    e = np.exp(logits[valid] - m)
    out[valid] = e / e.sum()
    return out


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def softplus(x):
    """log(1 + e^x) without overflow."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _phi(x):
    # standard normal CDF via erf (exact form, not the tanh approximation)
    return 0.5 * (1.0 + np.vectorize(math.erf)(np.asarray(x, dtype=np.float64) / _SQRT2))


def gelu(x):
    x = np.asarray(x, dtype=np.float64)
    return x * _phi(x)


def gelu_grad(x):
    x = np.asarray(x, dtype=np.float64)
    return _phi(x) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_grad(x):
    return (np.asarray(x, dtype=np.float64) > 0).astype(np.float64)


ACTIVATIONS = {
    "gelu": (gelu, gelu_grad),
    "relu": (relu, relu_grad),
}


def activation(x, kind):
    if kind not in ACTIVATIONS:
        raise ValueError(f"unknown activation kind {kind!r}")
    return ACTIVATIONS[kind][0](x)


def activation_grad(x, kind):
    if kind not in ACTIVATIONS:
        raise ValueError(f"unknown activation kind {kind!r}")
    return ACTIVATIONS[kind][1](x)


def cosine_similarity(a, b):
    """a.b / (|a||b|), clipped to [-1, 1] against rounding spill."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"cosine_similarity length mismatch: {a.shape} vs {b.shape}")
    na = math.sqrt(float(np.dot(a, a)))
    nb = math.sqrt(float(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine_similarity: zero-norm input")
    return min(1.0, max(-1.0, float(np.dot(a, b)) / (na * nb)))


@dataclass
class AdamState:
    """Bias-corrected Adam moments for a named parameter set."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        st = cls(learning_rate=learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon)
        st.first_moment = {k: np.zeros_like(v) for k, v in params.items()}
        st.second_moment = {k: np.zeros_like(v) for k, v in params.items()}
        return st


def adam_step(params, grads, state, frozen_rows=None):
    """One in-place Adam update over a dict of parameters.

    `frozen_rows` maps a parameter name to a row index whose gradient is
    discarded; that row (and its moments) never moves.
    """
    frozen_rows = frozen_rows or {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        if name in frozen_rows:
            g = g.copy()
            g[frozen_rows[name]] = 0.0
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)


class Rng:
    """Seedable source of named, independent pseudo-random streams.

    Built on numpy's PCG64. Identical seed and stream tags give a
    bit-identical draw sequence across runs.
    """

    algorithm = RNG_ALGORITHM

    def __init__(self, seed):
        self.seed = int(seed)

    @staticmethod
    def _tag_words(tags):
        words = []
        for t in tags:
            if isinstance(t, str):
                words.append(zlib.crc32(t.encode("utf-8")))
            else:
                words.append(int(t) & 0xFFFFFFFF)
        return words

    def stream(self, *tags):
        """A fresh Generator for the given tag path, independent of other paths."""
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=tuple(self._tag_words(tags)))
        return np.random.Generator(np.random.PCG64(ss))
