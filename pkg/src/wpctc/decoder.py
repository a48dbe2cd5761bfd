"""Frame-synchronous Viterbi beam search over blank-aware decoding graphs.

Scores are costs: acoustic cost is ``-acoustic_scale * log p`` and graph
cost is the sum of arc and final weights, so lower is better.
Graph input label ``k`` reads posterior column ``k - 1``.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from collections import deque
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .ctc import Posteriorgram
from .errors import ConfigError, DataError
from .fst import EPSILON, TROPICAL, Wfst

log = logging.getLogger(__name__)

INF = math.inf
DEFAULT_BLANK_SKIP = 0.99


@dataclass
class DecodeConfig:
    beam: float = 16.0
    max_active: float = 7000
    blank_skip_threshold: float | None = DEFAULT_BLANK_SKIP
    acoustic_scale: float = 1.0
    nbest: int = 1
    trace: bool = False

    def __post_init__(self):
        if not self.beam > 0:
            raise ConfigError("beam must be positive")
        if not self.max_active >= 1:
            raise ConfigError("max_active must be >= 1")
        if self.blank_skip_threshold is not None and not 0 < self.blank_skip_threshold <= 1:
            raise ConfigError("blank_skip_threshold must be in (0, 1] or None")
        if not self.acoustic_scale > 0:
            raise ConfigError("acoustic_scale must be positive")
        if int(self.nbest) != self.nbest or self.nbest < 1:
            raise ConfigError("nbest must be a positive integer")


@dataclass
class Hypothesis:
    words: list[str]
    acoustic_score: float
    graph_score: float
    alignment: list[int] | None = None
    rescored: float | None = None

    @property
    def score(self) -> float:
        return self.acoustic_score + self.graph_score

    @property
    def text(self) -> str:
        return " ".join(self.words)


@dataclass
class DecodeStats:
    frames_total: int = 0
    frames_skipped: int = 0
    tokens_expanded: int = 0
    wall_time: float = 0.0
    audio_duration: float = 0.0
    hypothesis_found: bool = False

    @property
    def rtf(self) -> float:
        return self.wall_time / self.audio_duration if self.audio_duration > 0 else 0.0

    @property
    def skipped_fraction(self) -> float:
        return self.frames_skipped / self.frames_total if self.frames_total else 0.0

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["rtf"] = self.rtf
        return d


class _GraphTables:
    """Per-graph arc tables, split by emitting / blank / epsilon input."""

    def __init__(self, g: Wfst):
        self.emit = []
        self.blank = []
        self.eps = []
        for s in g.states():
            em, bl, ep = [], [], []
            for arc in g.arcs(s):
                if arc.ilabel == EPSILON:
                    ep.append((arc.weight, arc.nextstate, arc.olabel))
                else:
                    entry = (arc.ilabel - 1, arc.weight, arc.nextstate, arc.olabel)
                    em.append(entry)
                    if arc.ilabel == 1:
                        bl.append(entry)
            self.emit.append(em)
            self.blank.append(bl)
            self.eps.append(ep)
        # states whose only blank arc is a free, silent self-loop: a pure-blank
        # frame leaves tokens there exactly where they are
        self.blank_fixed = [len(bl) == 1 and bl[0][1:] == (0.0, s, EPSILON) for s, bl in enumerate(self.blank)]
        self.finals = dict(g.finals)
        self.max_ilabel = max((a.ilabel for s in g.states() for a in g.arcs(s)), default=0)


def _tables(g: Wfst) -> _GraphTables:
    # graphs are immutable once built, so the tables are cached on the instance
    tab = getattr(g, "_decode_tables", None)
    if tab is None:
        tab = _GraphTables(g)
        g._decode_tables = tab
    return tab


class _Histories:
    """Interned word histories: id 0 is the empty history."""

    def __init__(self):
        self.parent = [-1]
        self.word = [0]
        self.index: dict[tuple[int, int], int] = {}

    def extend(self, hist: int, word: int) -> int:
        key = (hist, word)
        hid = self.index.get(key)
        if hid is None:
            hid = self.index[key] = len(self.parent)
            self.parent.append(hist)
            self.word.append(word)
        return hid

    def words(self, hist: int) -> list[int]:
        out = []
        while hist > 0:
            out.append(self.word[hist])
            hist = self.parent[hist]
        return out[::-1]


# token: (cost, graph_cost, history_id, alignment_node)

def _insert(tokens: dict, state: int, tok: tuple, k: int) -> bool:
    lst = tokens.get(state)
    if lst is None:
        tokens[state] = [tok]
        return True
    if k == 1:
        if tok[0] < lst[0][0]:
            lst[0] = tok
            return True
        return False
    for i, old in enumerate(lst):
        if old[2] == tok[2]:
            if tok[0] < old[0]:
                lst[i] = tok
                lst.sort(key=lambda t: t[0])
                return True
            return False
    if len(lst) < k:
        lst.append(tok)
        lst.sort(key=lambda t: t[0])
        return True
    if tok[0] < lst[-1][0]:
        lst[-1] = tok
        lst.sort(key=lambda t: t[0])
        return True
    return False


def _epsilon_closure(tokens: dict, tab: _GraphTables, hists: _Histories, k: int, cutoff: float) -> int:
    queue = deque(sorted(s for s in tokens if tab.eps[s]))
    expanded = 0
    pending = set(queue)
    while queue:
        s = queue.popleft()
        pending.discard(s)
        for tok in list(tokens.get(s, ())):
            cost, gcost, hist, ali = tok
            for w, nxt, ol in tab.eps[s]:
                expanded += 1
                c = cost + w
                if c > cutoff:
                    continue
                h = hists.extend(hist, ol) if ol else hist
                if _insert(tokens, nxt, (c, gcost + w, h, ali), k) and tab.eps[nxt] and nxt not in pending:
                    pending.add(nxt)
                    queue.append(nxt)
    return expanded


def _prune(tokens: dict, beam: float, max_active: float) -> dict:
    if not tokens:
        return tokens
    best = min(lst[0][0] for lst in tokens.values())
    limit = best + beam
    kept = {s: [t for t in lst if t[0] <= limit] for s, lst in tokens.items() if lst[0][0] <= limit}
    if len(kept) > max_active:
        order = sorted(kept, key=lambda s: (kept[s][0][0], s))[:int(max_active)]
        kept = {s: kept[s] for s in sorted(order)}
    return kept


def decode(post, graph: Wfst, cfg: DecodeConfig | None = None,
           audio_duration: float | None = None) -> tuple[list[Hypothesis], DecodeStats]:
    """Decode one utterance; returns the n-best list (best first) and stats.

    Frames whose blank posterior exceeds ``cfg.blank_skip_threshold`` are
    not scored: tokens only follow blank arcs at zero acoustic cost, which
    is what a pure-blank frame would do, minus a cost offset shared by all
    tokens.  When that step provably leaves the token set unchanged the
    frame costs nothing at all.  ``audio_duration`` (seconds) defaults to the posteriorgram's
    frame count times its frame shift.  An empty list means no token
    reached a final state.
    """
    cfg = cfg or DecodeConfig()
    if graph.semiring != TROPICAL:
        raise ConfigError("decoding requires a tropical-semiring graph")
    if graph.start < 0:
        raise ConfigError("decoding graph is empty")
    if not isinstance(post, Posteriorgram):
        post = Posteriorgram(post)
    logp = post.values
    T, V = logp.shape
    tab = _tables(graph)
    if graph.isymbols is not None and len(graph.isymbols) - 1 != V:
        raise DataError(f"posteriorgram has {V} units but the graph has {len(graph.isymbols) - 1}")
    if tab.max_ilabel > V:
        raise DataError(f"graph input label {tab.max_ilabel} has no posterior column (V={V})")

    started = time.perf_counter()
    stats = DecodeStats(frames_total=T)
    stats.audio_duration = audio_duration if audio_duration is not None else post.duration_ms / 1000.0
    k = int(cfg.nbest)
    hists = _Histories()
    costs = (-cfg.acoustic_scale * logp).tolist()
    skip_mask = np.zeros(T, dtype=bool)
    if cfg.blank_skip_threshold is not None and T:
        skip_mask = np.exp(logp[:, 0]) > cfg.blank_skip_threshold
    stats.frames_skipped = int(skip_mask.sum())

    tokens: dict = {graph.start: [(0.0, 0.0, 0, None)]}
    stats.tokens_expanded += _epsilon_closure(tokens, tab, hists, k, INF)
    tokens = _prune(tokens, cfg.beam, cfg.max_active)

    # a skipped frame maps the token set through a fixed function, so once it
    # leaves the set unchanged the rest of that run of skipped frames are no-ops
    settled = False
    beam = cfg.beam
    for t in range(T):
        skipping = bool(skip_mask[t])
        if skipping and not cfg.trace and (settled or all(tab.blank_fixed[s] for s in tokens)):
            continue
        arcs_of = tab.blank if skipping else tab.emit
        row = costs[t]
        new: dict = {}
        cutoff = INF
        expanded = 0
        for s in sorted(tokens):
            arcs = arcs_of[s]
            if not arcs:
                continue
            for cost, gcost, hist, ali in tokens[s]:
                expanded += len(arcs)
                for col, w, nxt, ol in arcs:
                    c = cost + w if skipping else cost + w + row[col]
                    if c > cutoff or c == INF:
                        continue
                    if c + beam < cutoff:
                        cutoff = c + beam
                    if k == 1:
                        # recombination would reject it; skip building the history
                        old = new.get(nxt)
                        if old is not None and c >= old[0][0]:
                            continue
                    h = hists.extend(hist, ol) if ol else hist
                    a = (ali, col) if cfg.trace else None
                    _insert(new, nxt, (c, gcost + w, h, a), k)
        expanded += _epsilon_closure(new, tab, hists, k, cutoff)
        stats.tokens_expanded += expanded
        new = _prune(new, cfg.beam, cfg.max_active)
        settled = skipping and new == tokens
        tokens = new
        if not tokens:
            break

    finals: dict[int, tuple] = {}
    for s in sorted(tokens):
        fw = tab.finals.get(s)
        if fw is None:
            continue
        for cost, gcost, hist, ali in tokens[s]:
            total = cost + fw
            if hist not in finals or total < finals[hist][0]:
                finals[hist] = (total, gcost + fw, ali)
    results = []
    for hist, (total, gcost, ali) in finals.items():
        ids = hists.words(hist)
        words = [graph.osymbols.find(i) for i in ids] if graph.osymbols is not None else [str(i) for i in ids]
        alignment = None
        if cfg.trace:
            alignment = []
            while ali is not None:
                ali, col = ali
                alignment.append(col)
            alignment.reverse()
        results.append(Hypothesis(words, total - gcost, gcost, alignment))
    results.sort(key=lambda h: (h.score, h.words))
    results = results[:k]
    stats.hypothesis_found = bool(results)
    stats.wall_time = time.perf_counter() - started
    if not results:
        log.warning("no hypothesis survived decoding (%d frames)", T)
    return results, stats


def rescore_nbest(nbest: Sequence[Hypothesis], external_scores: Mapping[str, float],
                  weight: float) -> list[Hypothesis]:
    """Rerank by (1 - weight) * first-pass cost + weight * external cost.

    ``external_scores`` is keyed by the space-joined hypothesis text.  The
    sort is stable, so equal combined scores keep their first-pass order.
    """
    if not 0 <= weight <= 1:
        raise ConfigError("interpolation weight must be in [0, 1]")
    out = []
    for hyp in nbest:
        if hyp.text not in external_scores:
            raise DataError(f"no external score for hypothesis {hyp.text!r}")
        combined = (1 - weight) * hyp.score + weight * float(external_scores[hyp.text])
        out.append(dataclasses.replace(hyp, rescored=combined))
    out.sort(key=lambda h: h.rescored)
    return out


def edit_distance(ref: Sequence, hyp: Sequence) -> int:
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def wer(reference: Sequence[str], hypothesis: Sequence[str]) -> float:
    """(S + D + I) / len(reference); an empty reference divides by 1."""
    return edit_distance(reference, hypothesis) / max(1, len(reference))


def oracle_wer(nbest: Sequence[Hypothesis], reference: Sequence[str]) -> float:
    if not nbest:
        raise DataError("oracle WER of an empty n-best list")
    return min(wer(reference, h.words) for h in nbest)


def write_nbest(f, utt_id: str, nbest: Sequence[Hypothesis]) -> None:
    """``utt_id rank score word1 word2 ...`` lines, rank from 1."""
    for rank, hyp in enumerate(nbest, 1):
        score = hyp.rescored if hyp.rescored is not None else hyp.score
        f.write(" ".join([utt_id, str(rank), f"{score:.6f}", *hyp.words]) + "\n")


def read_nbest(path) -> dict[str, list[tuple[float, list[str]]]]:
    out: dict[str, list] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) < 3:
                raise DataError(f"{path}:{lineno}: expected 'utt_id rank score words...'")
            out.setdefault(fields[0], []).append((float(fields[2]), fields[3:]))
    return out
