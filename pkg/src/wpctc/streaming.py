"""Latency-controlled chunked evaluation of frame-wise encoders.

The input is cut into chunks of ``chunk_size`` frames that overlap by
``right_context`` frames.  Each chunk is encoded with the state carried
from the previous one; only the first ``chunk_size - right_context``
outputs are kept (all of them for the last chunk), and the carried state
is the encoder state at the end of that kept region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Protocol

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class StreamConfig:
    chunk_size: int
    right_context: int = 0

    def __post_init__(self):
        if not 0 <= self.right_context < self.chunk_size:
            raise ConfigError(
                f"need 0 <= right_context < chunk_size, got CS={self.chunk_size} RC={self.right_context}")

    @property
    def step(self) -> int:
        return self.chunk_size - self.right_context

    def num_chunks(self, T: int) -> int:
        if T <= 0:
            return 0
        return math.ceil(max(0, T - self.chunk_size) / self.step) + 1


class ChunkEncoder(Protocol):
    """Anything that encodes a chunk given carried left state.

    ``right_reach`` is how many future frames an output may depend on;
    streaming equals full-sequence encoding when it is <= right_context.
    ``process`` returns outputs for every chunk frame and the state after
    the first ``n_keep`` frames.
    """

    right_reach: int

    def initial_state(self) -> Any: ...

    def process(self, chunk: np.ndarray, state: Any, n_keep: int) -> tuple[np.ndarray, Any]: ...


def chunk_bounds(T: int, cfg: StreamConfig) -> list[tuple[int, int, int]]:
    """(start, end, n_keep) for each chunk."""
    out = []
    pos = 0
    while pos < T:
        end = min(pos + cfg.chunk_size, T)
        if end == T:
            out.append((pos, end, end - pos))
            break
        out.append((pos, end, cfg.step))
        pos += cfg.step
    return out


def stream(frames, enc: ChunkEncoder, cfg: StreamConfig) -> np.ndarray:
    frames = np.asarray(frames)
    if len(frames) == 0:
        return frames[:0].copy()
    state = enc.initial_state()
    kept = []
    for start, end, n_keep in chunk_bounds(len(frames), cfg):
        out, state = enc.process(frames[start:end], state, n_keep)
        if len(out) != end - start:
            raise ConfigError(f"encoder returned {len(out)} frames for a {end - start}-frame chunk")
        kept.append(out[:n_keep])
    return np.concatenate(kept)


def latency_ms(cfg: StreamConfig, frame_shift_ms: float) -> float:
    """Worst-case algorithmic latency: a frame waits at most one full chunk."""
    return cfg.chunk_size * frame_shift_ms


def emission_delays_ms(T: int, cfg: StreamConfig, frame_shift_ms: float) -> np.ndarray:
    """Per-frame delay from a frame's start time until its output is produced.

    Frame i starts at i * shift and is fully available at (i + 1) * shift;
    a chunk is encoded as soon as its last frame is available.
    """
    delays = np.zeros(T)
    for start, end, n_keep in chunk_bounds(T, cfg):
        ready = end * frame_shift_ms
        idx = np.arange(start, start + n_keep)
        delays[idx] = ready - idx * frame_shift_ms
    return delays


class MovingAverageEncoder:
    """Mean over frames [t - left, t + right]; left frames come from carried state."""

    def __init__(self, left: int, right: int):
        self.left = left
        self.right_reach = right

    def initial_state(self):
        return None

    def process(self, chunk, state, n_keep):
        chunk = np.asarray(chunk, dtype=np.float64)
        hist = state if state is not None else chunk[:0]
        ext = np.concatenate([hist, chunk])
        off = len(hist)
        out = np.empty_like(chunk)
        for i in range(len(chunk)):
            t = off + i
            out[i] = ext[max(0, t - self.left):t + self.right_reach + 1].mean(axis=0)
        new_hist = ext[:off + n_keep][-self.left:] if self.left else ext[:0]
        return out, new_hist


class LookaheadRecurrentEncoder:
    """Leaky left-to-right recurrence followed by a right-looking average.

    h_t = decay * h_{t-1} + x_t and y_t = mean(h_t .. h_{t+right}); the only
    cross-chunk memory is h at the end of the kept region.
    """

    def __init__(self, decay: float, right: int):
        self.decay = decay
        self.right_reach = right

    def initial_state(self):
        return None

    def process(self, chunk, state, n_keep):
        chunk = np.asarray(chunk, dtype=np.float64)
        h = np.zeros(chunk.shape[1:]) if state is None else state
        hs = np.empty_like(chunk)
        for i, x in enumerate(chunk):
            h = self.decay * h + x
            hs[i] = h
        out = np.empty_like(chunk)
        for i in range(len(chunk)):
            out[i] = hs[i:i + self.right_reach + 1].mean(axis=0)
        carried = hs[n_keep - 1] if n_keep > 0 else (np.zeros(chunk.shape[1:]) if state is None else state)
        return out, carried
