"""A tiny feed-forward CTC acoustic model over spliced frames.

Each output frame sees ``2 * context + 1`` input frames; the spliced
sequence is subsampled by ``stride``, so T input frames give ceil(T / k)
output frames.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ctc import Posteriorgram, ctc_loss, is_feasible, log_softmax
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

_MAGIC = b"TAMC"
_VERSION = 1


def splice(features: np.ndarray, context: int) -> np.ndarray:
    """Stack each frame with ``context`` neighbours per side; edges repeat."""
    T = len(features)
    padded = np.concatenate([np.repeat(features[:1], context, axis=0), features,
                             np.repeat(features[-1:], context, axis=0)])
    return np.concatenate([padded[i:i + T] for i in range(2 * context + 1)], axis=1)


@dataclass
class ToyModel:
    feat_dim: int
    n_out: int
    context: int = 4
    stride: int = 1
    hidden: tuple[int, ...] = (128,)
    params: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.stride < 1 or self.context < 0:
            raise ConfigError("stride must be >= 1 and context >= 0")
        if self.n_out < 2:
            raise ConfigError("need at least blank plus one unit")
        self.hidden = tuple(self.hidden)
        if not self.params:
            self.params = [np.zeros(s) for s in self.param_shapes()]

    @classmethod
    def init(cls, feat_dim, n_out, context=4, stride=1, hidden=(128,), seed=0) -> ToyModel:
        model = cls(feat_dim, n_out, context, stride, tuple(hidden))
        rng = np.random.default_rng(seed)
        for i, shape in enumerate(model.param_shapes()):
            if len(shape) == 2:
                model.params[i] = rng.normal(scale=1.0 / math.sqrt(shape[0]), size=shape)
        return model

    @property
    def input_dim(self) -> int:
        return self.feat_dim * (2 * self.context + 1)

    def param_shapes(self) -> list[tuple[int, ...]]:
        dims = [self.input_dim, *self.hidden, self.n_out]
        shapes = []
        for a, b in zip(dims, dims[1:]):
            shapes += [(a, b), (b,)]
        return shapes

    def output_frames(self, T: int) -> int:
        return math.ceil(T / self.stride)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        pos = 0
        for i, shape in enumerate(self.param_shapes()):
            n = int(np.prod(shape))
            self.params[i] = np.array(flat[pos:pos + n], dtype=np.float64).reshape(shape)
            pos += n

    def _inputs(self, features) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.feat_dim:
            raise DataError(f"expected T x {self.feat_dim} features, got shape {features.shape}")
        if len(features) == 0:
            return np.zeros((0, self.input_dim))
        return splice(features, self.context)[::self.stride]

    def _forward(self, x):
        acts = [x]
        h = x
        n_layers = len(self.params) // 2
        for layer in range(n_layers):
            z = h @ self.params[2 * layer] + self.params[2 * layer + 1]
            h = np.tanh(z) if layer < n_layers - 1 else z
            acts.append(h)
        return acts

    def forward(self, features) -> Posteriorgram:
        logits = self._forward(self._inputs(features))[-1]
        return Posteriorgram(log_softmax(logits), frame_shift_ms=10.0 * self.stride)

    def frame_logits(self, spliced: np.ndarray) -> np.ndarray:
        return self._forward(spliced)[-1]

    def loss_and_grad(self, features, target: Sequence[int]) -> tuple[float, list[np.ndarray], bool]:
        """CTC loss of one utterance and gradients for every parameter."""
        x = self._inputs(features)
        acts = self._forward(x)
        logp = log_softmax(acts[-1])
        res = ctc_loss(logp, target)
        if not res.feasible or not math.isfinite(res.loss):
            return res.loss, [np.zeros_like(p) for p in self.params], res.feasible
        g = res.grad
        delta = g - np.exp(logp) * g.sum(axis=1, keepdims=True)
        grads = [None] * len(self.params)
        n_layers = len(self.params) // 2
        for layer in range(n_layers - 1, -1, -1):
            grads[2 * layer] = acts[layer].T @ delta
            grads[2 * layer + 1] = delta.sum(axis=0)
            if layer:
                delta = (delta @ self.params[2 * layer].T) * (1.0 - acts[layer] ** 2)
        return res.loss, grads, True

    def save(self, path) -> None:
        header = struct.pack("<4sIIIII", _MAGIC, _VERSION, self.feat_dim, self.context, self.stride,
                             len(self.hidden))
        header += struct.pack(f"<{len(self.hidden)}I", *self.hidden) + struct.pack("<I", self.n_out)
        with open(path, "wb") as f:
            f.write(header)
            f.write(self.get_flat().astype("<f4").tobytes())

    @classmethod
    def load(cls, path) -> ToyModel:
        with open(path, "rb") as f:
            data = f.read()
        if len(data) < 24 or data[:4] != _MAGIC:
            raise DataError(f"{path}: not a toy-model checkpoint")
        _, version, feat_dim, context, stride, n_hidden = struct.unpack("<4sIIIII", data[:24])
        if version != _VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        pos = 24 + 4 * n_hidden
        hidden = struct.unpack(f"<{n_hidden}I", data[24:pos])
        (n_out,) = struct.unpack("<I", data[pos:pos + 4])
        model = cls(feat_dim, n_out, context, stride, hidden)
        flat = np.frombuffer(data[pos + 4:], dtype="<f4")
        if len(flat) != sum(int(np.prod(s)) for s in model.param_shapes()):
            raise DataError(f"{path}: parameter count does not match the header")
        model.set_flat(flat.astype(np.float64))
        return model


class StreamingAdapter:
    """Runs a ToyModel as a chunk encoder at the input frame rate.

    Outputs are per input frame; subsample by the model stride afterwards.
    Carried state is the last ``context`` input frames of the kept region.
    """

    def __init__(self, model: ToyModel):
        self.model = model
        self.right_reach = model.context

    def initial_state(self):
        return None

    def process(self, chunk, state, n_keep):
        c = self.model.context
        chunk = np.asarray(chunk, dtype=np.float64)
        left = state if state is not None else np.repeat(chunk[:1], c, axis=0)
        ext = np.concatenate([left, chunk, np.repeat(chunk[-1:], c, axis=0)])
        T = len(chunk)
        spliced = np.concatenate([ext[i:i + T] for i in range(2 * c + 1)], axis=1)
        out = log_softmax(self.model.frame_logits(spliced))
        hist = np.concatenate([left, chunk[:n_keep]])
        return out, hist[len(hist) - c:] if c else hist[:0]


@dataclass
class TriStageSchedule:
    """Linear warm-up to ``peak``, hold, then exponential decay to ``final_scale * peak``."""

    peak: float = 1e-3
    warmup: int = 100
    hold: int = 400
    decay: int = 500
    init_scale: float = 0.01
    final_scale: float = 0.05

    def __call__(self, step: int) -> float:
        if step < self.warmup:
            start = self.init_scale * self.peak
            return start + (self.peak - start) * step / self.warmup
        step -= self.warmup
        if step < self.hold:
            return self.peak
        step -= self.hold
        if step < self.decay:
            return self.peak * self.final_scale ** (step / self.decay)
        return self.peak * self.final_scale

    @classmethod
    def over(cls, total_steps: int, peak: float = 1e-3, fractions=(0.1, 0.4, 0.5), **kw) -> TriStageSchedule:
        w, h, _ = fractions
        warm = max(1, int(total_steps * w))
        hold = int(total_steps * h)
        return cls(peak, warm, hold, max(1, total_steps - warm - hold), **kw)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 4
    peak_lr: float = 1e-3
    stage_fractions: tuple[float, float, float] = (0.1, 0.4, 0.5)
    rms_decay: float = 0.99
    eps: float = 1e-8
    seed: int = 0


@dataclass
class TrainResult:
    model: ToyModel
    epoch_losses: list[float]
    skipped: int


def train(model: ToyModel, features: Sequence[np.ndarray], targets: Sequence[Sequence[int]],
          cfg: TrainConfig | None = None) -> TrainResult:
    """RMSProp (no momentum) CTC training under a tri-stage learning rate.

    Utterances whose target cannot fit the model's output frame count are
    skipped with a warning.  Epoch losses are per-frame averages.
    """
    cfg = cfg or TrainConfig()
    if len(features) != len(targets):
        raise ConfigError("features and targets differ in length")
    usable = []
    for i, (f, y) in enumerate(zip(features, targets)):
        if is_feasible(y, model.output_frames(len(f))):
            usable.append(i)
    skipped = len(features) - len(usable)
    if skipped:
        log.warning("skipping %d of %d utterances: target longer than %d-strided output",
                    skipped, len(features), model.stride)
    if not usable:
        raise DataError("no trainable utterances at this stride")

    rng = np.random.default_rng(cfg.seed)
    steps_per_epoch = math.ceil(len(usable) / cfg.batch_size)
    schedule = TriStageSchedule.over(cfg.epochs * steps_per_epoch, cfg.peak_lr, cfg.stage_fractions)
    sq = [np.zeros_like(p) for p in model.params]
    step = 0
    epoch_losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(usable)
        total_loss = 0.0
        total_frames = 0
        for b in range(0, len(order), cfg.batch_size):
            batch = order[b:b + cfg.batch_size]
            acc = [np.zeros_like(p) for p in model.params]
            frames = 0
            for i in batch:
                loss, grads, _ = model.loss_and_grad(features[i], targets[i])
                total_loss += loss
                frames += model.output_frames(len(features[i]))
                for a, g in zip(acc, grads):
                    a += g
            total_frames += frames
            lr = schedule(step)
            for p, a, s in zip(model.params, acc, sq):
                g = a / frames
                s *= cfg.rms_decay
                s += (1 - cfg.rms_decay) * g * g
                p -= lr * g / (np.sqrt(s) + cfg.eps)
            step += 1
        epoch_losses.append(total_loss / total_frames)
    return TrainResult(model, epoch_losses, skipped)
