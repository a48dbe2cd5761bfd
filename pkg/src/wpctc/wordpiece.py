"""Unigram-LM wordpiece model: EM training with likelihood-based pruning,
Viterbi / sampled segmentation, and detokenization.

A word is segmented with the marker prepended ("_hello"), and the marker is
glued to the first character: "_" on its own is never a piece.  Every
character seen in training therefore contributes two atomic pieces, "_c"
for word-initial use and "c" elsewhere; atoms are never pruned, so any word
over the training alphabet stays segmentable.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, OOVError, ParseError

log = logging.getLogger(__name__)

MARKER = "_"
MAX_PIECE_CHARS = 8
# vocab-size presets accepted by the CLI
VOCAB_PRESETS = {"1K": 1000, "2K": 2000, "5K": 5000, "10K": 10000, "16K": 16000}


def parse_vocab_size(text: str) -> int:
    key = text.strip().upper()
    if key in VOCAB_PRESETS:
        return VOCAB_PRESETS[key]
    try:
        return int(key)
    except ValueError:
        raise ConfigError(f"vocab size must be an integer or one of {sorted(VOCAB_PRESETS)}") from None


def _boundaries(marked: str) -> list[int]:
    # positions where a piece may start or end: the marker never stands alone
    return [0] + list(range(2, len(marked) + 1))


def _piece_chars(piece: str) -> int:
    return len(piece) - 1 if piece.startswith(MARKER) else len(piece)


def _logsumexp(values) -> float:
    m = max(values, default=-math.inf)
    if m == -math.inf:
        return -math.inf
    return m + math.log(sum(math.exp(v - m) for v in values))


def detokenize(pieces: Sequence[str]) -> str:
    """Join pieces into text: each word-start marker becomes a word break."""
    words: list[str] = []
    for piece in pieces:
        if piece.startswith(MARKER) or not words:
            words.append(piece[1:] if piece.startswith(MARKER) else piece)
        else:
            words[-1] += piece
    return " ".join(words)


@dataclass
class Segmentation:
    word: str
    pieces: list[int]
    tokens: list[str]
    score: float


class _Lattice:
    """All ways of covering one marked word with vocabulary pieces."""

    __slots__ = ("n", "arcs_out", "arcs_in")

    def __init__(self, text: str, piece_index: Mapping[str, int], exclude: int = -1,
                 word_initial: bool = True):
        bounds = _boundaries(text) if word_initial else list(range(len(text) + 1))
        self.n = len(text)
        self.arcs_out: dict[int, list[tuple[int, int]]] = {b: [] for b in bounds}
        self.arcs_in: dict[int, list[tuple[int, int]]] = {b: [] for b in bounds}
        for a, i in enumerate(bounds):
            limit = i + MAX_PIECE_CHARS + (1 if i == 0 and word_initial else 0)
            for j in bounds[a + 1:]:
                if j > limit:
                    break
                pid = piece_index.get(text[i:j])
                if pid is not None and pid != exclude:
                    self.arcs_out[i].append((j, pid))
                    self.arcs_in[j].append((i, pid))

    def forward(self, logp: Sequence[float]) -> dict[int, float]:
        alpha = {0: 0.0}
        for j in sorted(self.arcs_in):
            if j == 0:
                continue
            alpha[j] = _logsumexp([alpha[i] + logp[p] for i, p in self.arcs_in[j]])
        return alpha

    def backward(self, logp: Sequence[float]) -> dict[int, float]:
        beta = {self.n: 0.0}
        for i in sorted(self.arcs_out, reverse=True):
            if i == self.n:
                continue
            beta[i] = _logsumexp([logp[p] + beta[j] for j, p in self.arcs_out[i]])
        return beta

    def viterbi(self, logp: Sequence[float]) -> tuple[float, list[int]]:
        best = {0: (0.0, -1, -1)}
        for j in sorted(self.arcs_in):
            if j == 0:
                continue
            cand = (-math.inf, -1, -1)
            for i, p in self.arcs_in[j]:
                s = best[i][0] + logp[p]
                if s > cand[0]:
                    cand = (s, i, p)
            best[j] = cand
        score = best[self.n][0]
        if score == -math.inf:
            return score, []
        pieces = []
        j = self.n
        while j:
            _, i, p = best[j]
            pieces.append(p)
            j = i
        return score, pieces[::-1]

    def nbest(self, logp: Sequence[float], n: int) -> list[tuple[float, list[int]]]:
        # k-best lists per boundary, boundaries visited left to right
        lists: dict[int, list[tuple[float, tuple[int, ...]]]] = {0: [(0.0, ())]}
        for j in sorted(self.arcs_in):
            if j == 0:
                continue
            cands = []
            for i, p in self.arcs_in[j]:
                for s, seq in lists[i]:
                    cands.append((s + logp[p], seq + (p,)))
            lists[j] = heapq.nlargest(n, cands, key=lambda c: (c[0], [-x for x in c[1]]))
        return [(s, list(seq)) for s, seq in lists[self.n] if s > -math.inf]


@dataclass
class WordpieceModel:
    """Piece strings with log-probabilities; piece i has acoustic unit id i+1."""

    pieces: list[str]
    logprobs: list[float]
    marker: str = MARKER
    _index: dict[str, int] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if len(self.pieces) != len(self.logprobs):
            raise ConfigError("pieces and logprobs differ in length")
        self._index = {p: i for i, p in enumerate(self.pieces)}
        if len(self._index) != len(self.pieces):
            raise ConfigError("duplicate piece in model")
        self._lattices: dict[str, _Lattice] = {}
        self._chars = {c for p in self.pieces for c in p} - {self.marker}

    def __len__(self):
        return len(self.pieces)

    @property
    def alphabet(self) -> set[str]:
        return {p[-1] for p in self.pieces if _piece_chars(p) == 1}

    def unit_id(self, piece: str) -> int:
        return self._index[piece] + 1

    def unit_symbols(self) -> list[str]:
        """Acoustic unit inventory: blank first, then pieces in id order."""
        return ["<blk>"] + list(self.pieces)

    def _lattice(self, word: str) -> _Lattice:
        lat = self._lattices.get(word)
        if lat is None:
            if not word:
                raise DataError("cannot segment an empty word")
            for ch in word:
                if ch not in self._chars:
                    raise OOVError(ch, word)
            lat = self._lattices[word] = _Lattice(MARKER + word, self._index)
            if not lat.viterbi(self.logprobs)[1]:
                raise DataError(f"word {word!r} has no segmentation with this vocabulary")
        return lat

    def segment(self, word: str, mode: str = "viterbi", nbest: int = 64, alpha: float = 0.1,
                rng: np.random.Generator | None = None) -> Segmentation:
        """Split ``word`` into pieces.

        ``mode="viterbi"`` returns the most probable segmentation.
        ``mode="sample"`` draws one of the ``nbest`` best segmentations with
        probability proportional to exp(alpha * score), for subword
        regularisation.
        """
        lat = self._lattice(word)
        if mode == "viterbi":
            score, ids = lat.viterbi(self.logprobs)
        elif mode == "sample":
            if rng is None:
                rng = np.random.default_rng()
            cands = lat.nbest(self.logprobs, nbest)
            scores = np.array([alpha * s for s, _ in cands])
            probs = np.exp(scores - scores.max())
            score, ids = cands[int(rng.choice(len(cands), p=probs / probs.sum()))]
        else:
            raise ConfigError(f"unknown segmentation mode {mode!r}")
        return Segmentation(word, [i + 1 for i in ids], [self.pieces[i] for i in ids], score)

    def encode(self, sentence: str, **kwargs) -> list[str]:
        tokens = []
        for word in sentence.split():
            tokens.extend(self.segment(word, **kwargs).tokens)
        return tokens

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for piece, lp in zip(self.pieces, self.logprobs):
                f.write(f"{piece}\t{lp!r}\n")

    @classmethod
    def load(cls, path) -> WordpieceModel:
        pieces, logprobs = [], []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                if not line.strip():
                    continue
                fields = line.rstrip("\n").split("\t")
                if len(fields) != 2:
                    raise ParseError("expected 'piece<TAB>log_prob'", lineno)
                try:
                    logprobs.append(float(fields[1]))
                except ValueError:
                    raise ParseError(f"bad log-probability {fields[1]!r}", lineno) from None
                pieces.append(fields[0])
        return cls(pieces, logprobs)


def read_corpus(path) -> dict[str, int]:
    """Word counts from ``word<TAB>count`` lines, or from raw text otherwise."""
    with open(path, encoding="utf-8") as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    counts: dict[str, int] = {}
    tabbed = bool(lines) and all(
        len(ln.split("\t")) == 2 and ln.split("\t")[1].strip().isdigit() for ln in lines)
    for line in lines:
        if tabbed:
            word, n = line.split("\t")
            counts[word] = counts.get(word, 0) + int(n)
        else:
            for word in line.split():
                counts[word] = counts.get(word, 0) + 1
    return counts


def corpus_log_likelihood(model: WordpieceModel, corpus: Mapping[str, int], viterbi: bool = False) -> float:
    """Sum over words of count * log p(word), marginal or best-path."""
    total = 0.0
    for word, count in corpus.items():
        lat = model._lattice(word)
        ll = lat.viterbi(model.logprobs)[0] if viterbi else lat.forward(model.logprobs)[lat.n]
        total += count * ll
    return total


def em_step(lattices: Sequence[tuple[_Lattice, int]], logp: Sequence[float], size: int
            ) -> tuple[list[float], float]:
    """One EM iteration; returns re-estimated log-probs and the likelihood under ``logp``."""
    counts = np.zeros(size)
    ll = 0.0
    for lat, count in lattices:
        alpha = lat.forward(logp)
        beta = lat.backward(logp)
        z = alpha[lat.n]
        ll += count * z
        for i, arcs in lat.arcs_out.items():
            if alpha.get(i, -math.inf) == -math.inf:
                continue
            for j, p in arcs:
                counts[p] += count * math.exp(alpha[i] + logp[p] + beta[j] - z)
    total = counts.sum()
    with np.errstate(divide="ignore"):
        new = np.log(counts / total)
    return new.tolist(), ll


def _validate_corpus(corpus: Mapping[str, int]) -> None:
    if not corpus:
        raise ConfigError("training corpus is empty")
    for word, count in corpus.items():
        if not word or any(c.isspace() for c in word):
            raise DataError(f"invalid corpus word {word!r}")
        if MARKER in word:
            raise DataError(f"corpus word {word!r} contains the marker {MARKER!r}")
        if count <= 0:
            raise DataError(f"non-positive count for {word!r}")


def _seed_vocabulary(corpus, vocab_size, seed_multiplier):
    chars = sorted({c for w in corpus for c in w})
    atoms = [MARKER + c for c in chars] + chars
    if vocab_size < len(atoms):
        raise ConfigError(f"vocab_size {vocab_size} is below the alphabet size {len(atoms)}")
    freq: dict[str, int] = {}
    for word, count in corpus.items():
        marked = MARKER + word
        bounds = _boundaries(marked)
        for a, i in enumerate(bounds):
            limit = i + MAX_PIECE_CHARS + (1 if i == 0 else 0)
            for j in bounds[a + 1:]:
                if j > limit:
                    break
                sub = marked[i:j]
                freq[sub] = freq.get(sub, 0) + count
    atom_set = set(atoms)
    multi = sorted((s for s in freq if s not in atom_set),
                   key=lambda s: (-freq[s] * _piece_chars(s), s))
    cap = max(seed_multiplier * vocab_size, len(atoms))
    pieces = atoms + multi[:cap - len(atoms)]
    weights = np.array([(freq.get(p, 0) + 1.0) * _piece_chars(p) for p in pieces])
    return pieces, np.log(weights / weights.sum()).tolist(), len(atoms)


def _pruning_losses(pieces, logp, n_atoms, lattices):
    # how much corpus likelihood is lost if a piece's uses fall back to its own best split
    index = {p: i for i, p in enumerate(pieces)}
    vfreq = np.zeros(len(pieces))
    for (lat, count) in lattices:
        for p in lat.viterbi(logp)[1]:
            vfreq[p] += count
    losses = {}
    for pid in range(n_atoms, len(pieces)):
        if vfreq[pid] == 0:
            losses[pid] = 0.0
            continue
        piece = pieces[pid]
        alt = _Lattice(piece, index, exclude=pid, word_initial=piece.startswith(MARKER))
        alt_score = alt.viterbi(logp)[0]
        losses[pid] = vfreq[pid] * (logp[pid] - alt_score)
    return losses


def train_wordpiece(corpus: Mapping[str, int], vocab_size: int, seed_multiplier: int = 10,
                    prune_fraction: float = 0.2, em_iterations: int = 2,
                    final_em_iterations: int = 200, trace: list | None = None) -> WordpieceModel:
    """Train a unigram wordpiece model on a word-count table.

    Each round runs ``em_iterations`` EM steps, then drops the
    ``prune_fraction`` of multi-character pieces whose removal costs the
    least corpus likelihood, until ``vocab_size`` pieces remain.  The last
    round iterates EM until the likelihood stops improving (at most
    ``final_em_iterations`` steps).  When
    ``trace`` is given, ``(round, iteration, log_likelihood)`` tuples are
    appended to it.
    """
    _validate_corpus(corpus)
    if not 0 < prune_fraction < 1:
        raise ConfigError("prune_fraction must be in (0, 1)")
    if em_iterations < 1:
        raise ConfigError("em_iterations must be >= 1")
    pieces, logp, n_atoms = _seed_vocabulary(corpus, vocab_size, seed_multiplier)
    if len(pieces) < vocab_size:
        log.warning("corpus supports only %d pieces; requested vocab_size %d", len(pieces), vocab_size)

    words = sorted(corpus)
    rnd = 0
    while True:
        index = {p: i for i, p in enumerate(pieces)}
        lattices = [(_Lattice(MARKER + w, index), corpus[w]) for w in words]
        final = len(pieces) <= vocab_size
        prev = -math.inf
        # the last round runs EM to convergence so the result does not depend on the round count
        for it in range(final_em_iterations if final else em_iterations):
            logp, ll = em_step(lattices, logp, len(pieces))
            if trace is not None:
                trace.append((rnd, it, ll))
            if final and ll - prev < 1e-10:
                break
            prev = ll
        if final:
            break
        target = max(vocab_size, min(len(pieces) - 1, int(len(pieces) * (1 - prune_fraction))))
        logp = _floor_unused(logp)
        losses = _pruning_losses(pieces, logp, n_atoms, lattices)
        drop = set(sorted(losses, key=lambda p: (losses[p], pieces[p]))[:len(pieces) - target])
        keep = [i for i in range(len(pieces)) if i not in drop]
        pieces = [pieces[i] for i in keep]
        kept = np.array([logp[i] for i in keep])
        logp = (kept - np.log(np.exp(kept).sum())).tolist()
        rnd += 1

    # multi-character pieces EM gave no mass are dead weight; atoms stay for coverage
    keep = [i for i in range(len(pieces)) if i < n_atoms or logp[i] >= _UNUSED_LOGP]
    return WordpieceModel([pieces[i] for i in keep], _floor_unused([logp[i] for i in keep]))


_UNUSED_LOGP = -30.0


def _floor_unused(logp: Sequence[float]) -> list[float]:
    # pieces EM (nearly) never used get a small floor so every word stays segmentable
    logp = np.array(logp, dtype=np.float64)
    unused = logp < _UNUSED_LOGP
    if unused.any():
        logp[unused] = logp[~unused].min() - 10.0
        logp -= np.log(np.exp(logp).sum())
    return logp.tolist()
