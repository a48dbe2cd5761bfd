"""CTC label machinery and the forward-backward loss.

All probabilities are handled as natural-log values.  The blank unit is
always id 0.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DataError, ParseError

BLANK = 0
NEG_INF = -np.inf


@dataclass
class Posteriorgram:
    """T x V per-frame log-probabilities; column 0 is blank."""

    values: np.ndarray
    frame_shift_ms: float = 10.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"posteriorgram must be 2-D, got shape {self.values.shape}")
        if self.values.shape[1] < 2:
            raise DataError("posteriorgram needs at least 2 units (blank + one label)")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def V(self) -> int:
        return self.values.shape[1]

    @property
    def blank_id(self) -> int:
        return BLANK

    @property
    def duration_ms(self) -> float:
        return self.T * self.frame_shift_ms

    def is_normalized(self, atol: float = 1e-6) -> bool:
        if self.T == 0:
            return True
        return bool(np.allclose(_logsumexp_rows(self.values), 0.0, atol=atol))

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def _logsumexp_rows(x: np.ndarray) -> np.ndarray:
    m = np.max(x, axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return (m + np.log(np.sum(np.exp(x - m), axis=1, keepdims=True)))[:, 0]


def log_softmax(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x - _logsumexp_rows(x)[:, None]


# binary / text IO for posteriorgrams and feature matrices

_MAGIC = b"PGRM"


def write_matrix(path, values: np.ndarray) -> None:
    values = np.asarray(values, dtype="<f4")
    T, V = values.shape
    with open(path, "wb") as f:
        f.write(_MAGIC + struct.pack("<II", T, V))
        f.write(np.ascontiguousarray(values).tobytes())


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 12 or data[:4] != _MAGIC:
        raise DataError(f"{path}: not a PGRM file")
    T, V = struct.unpack("<II", data[4:12])
    if len(data) != 12 + 4 * T * V:
        raise DataError(f"{path}: expected {T}x{V} floats, file size {len(data)} does not match")
    return np.frombuffer(data[12:], dtype="<f4").reshape(T, V).astype(np.float64)


def write_posteriorgram(path, post: Posteriorgram) -> None:
    write_matrix(path, post.values)


def read_posteriorgram(path, frame_shift_ms: float = 10.0) -> Posteriorgram:
    return Posteriorgram(read_matrix(path), frame_shift_ms)


def posteriorgram_to_text(post: Posteriorgram) -> str:
    return "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in post.values)


def posteriorgram_from_text(text: str) -> Posteriorgram:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append([float(tok) for tok in line.split()])
        except ValueError:
            raise ParseError(f"non-numeric value in {line!r}", lineno) from None
        if len(rows[-1]) != len(rows[0]):
            raise ParseError(f"row has {len(rows[-1])} values, expected {len(rows[0])}", lineno)
    if not rows:
        raise ParseError("empty posteriorgram text")
    return Posteriorgram(np.array(rows))


# label maps

def collapse(path: Sequence[int]) -> list[int]:
    """Merge runs of identical labels, then drop blanks."""
    out = []
    prev = None
    for label in path:
        if label != prev and label != BLANK:
            out.append(int(label))
        prev = label
    return out


def squeeze_repeats(path: Sequence[int]) -> list[int]:
    """Merge runs of identical labels; blanks are kept."""
    out = []
    for label in path:
        if not out or out[-1] != label:
            out.append(int(label))
    return out


def shift_labels(alignment: Sequence[int]) -> list[int]:
    """Move an external frame alignment up by one so id 0 is free for blank."""
    out = []
    for label in alignment:
        if label < 0:
            raise DataError(f"negative alignment label {label}")
        out.append(int(label) + 1)
    return out


def min_frames(target: Sequence[int]) -> int:
    """Fewest frames that can emit ``target``: one per label plus a blank between repeats."""
    return len(target) + sum(1 for a, b in zip(target, target[1:]) if a == b)


def is_feasible(target: Sequence[int], T: int) -> bool:
    return min_frames(target) <= T


# loss

class CtcResult(NamedTuple):
    loss: float
    grad: np.ndarray
    feasible: bool


def ctc_loss(logp, target: Sequence[int]) -> CtcResult:
    """Negative log-likelihood of ``target`` and its gradient w.r.t. ``logp``.

    ``logp`` is a T x V array (or Posteriorgram) of log-probabilities.  The
    gradient treats every entry as an independent input, so callers chain
    it through their own normalisation.  An infeasible target gives an
    infinite loss, a zero gradient and ``feasible=False``.
    """
    logp = np.asarray(logp, dtype=np.float64)
    T, V = logp.shape
    target = [int(x) for x in target]
    for label in target:
        if not 0 < label < V:
            raise DataError(f"target label {label} outside [1, {V - 1}]")
    if not is_feasible(target, T):
        return CtcResult(np.inf, np.zeros_like(logp), False)
    if T == 0:
        return CtcResult(0.0, np.zeros_like(logp), True)

    ext = np.zeros(2 * len(target) + 1, dtype=np.int64)
    ext[1::2] = target
    S = len(ext)
    # s-2 -> s transitions: label states whose label differs from the previous label
    skip = np.zeros(S, dtype=bool)
    skip[3::2] = ext[3::2] != ext[1:-2:2]

    emit = logp[:, ext]  # T x S
    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    with np.errstate(invalid="ignore"):
        for t in range(1, T):
            prev = alpha[t - 1]
            acc = prev.copy()
            acc[1:] = np.logaddexp(acc[1:], prev[:-1])
            acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
            alpha[t] = acc + emit[t]

        beta = np.full((T, S), NEG_INF)
        beta[T - 1, S - 1] = emit[T - 1, S - 1]
        if S > 1:
            beta[T - 1, S - 2] = emit[T - 1, S - 2]
        for t in range(T - 2, -1, -1):
            nxt = beta[t + 1]
            acc = nxt.copy()
            acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
            acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
            beta[t] = acc + emit[t]

    log_like = np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2]) if S > 1 else alpha[T - 1, 0]
    if not np.isfinite(log_like):
        # every allowed alignment has zero probability
        return CtcResult(np.inf, np.zeros_like(logp), True)

    with np.errstate(invalid="ignore"):
        occ = alpha + beta - emit  # log sum over paths through (t, s)
    occ = np.where(np.isfinite(occ), occ, NEG_INF)
    grad = np.zeros_like(logp)
    for label in np.unique(ext):
        cols = occ[:, ext == label]
        m = cols.max(axis=1, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        with np.errstate(divide="ignore"):
            lse = m[:, 0] + np.log(np.exp(cols - m).sum(axis=1))
        grad[:, label] = -np.exp(lse - log_like)
    return CtcResult(float(-log_like), grad, True)
