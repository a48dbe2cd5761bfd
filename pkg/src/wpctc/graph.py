"""Decoding-graph construction.

Label conventions: acoustic unit ``u`` (0 = blank) is FST input symbol
``u + 1``, so the unit symbol table reads ``<eps>, <blk>, piece_1, ...``.
Word symbols come from the language model vocabulary.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from typing import Mapping, Sequence

from .errors import ConfigError, ParseError
from .fst import EPSILON, TROPICAL, SymbolTable, Wfst, compose, connect
from .lm import NGramLm, lm_to_fst
from .wordpiece import WordpieceModel

log = logging.getLogger(__name__)

BLANK_SYMBOL = "<blk>"
BLANK_ILABEL = 1


class Lexicon(OrderedDict):
    """word -> list of unit-symbol sequences, in insertion order."""

    def add(self, word: str, units: Sequence[str]) -> None:
        if not units:
            raise ConfigError(f"empty pronunciation for {word!r}")
        entries = self.setdefault(word, [])
        if tuple(units) not in entries:
            entries.append(tuple(units))

    @classmethod
    def from_wordpiece(cls, model: WordpieceModel, words) -> Lexicon:
        lex = cls()
        for w in words:
            lex.add(w, model.segment(w).tokens)
        return lex

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for word, entries in self.items():
                for units in entries:
                    f.write(" ".join((word,) + units) + "\n")

    @classmethod
    def read(cls, path) -> Lexicon:
        lex = cls()
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                fields = line.split()
                if not fields:
                    continue
                if len(fields) < 2:
                    raise ParseError(f"word {fields[0]!r} has no units", lineno)
                lex.add(fields[0], fields[1:])
        return lex


def unit_symbols(pieces: Sequence[str]) -> SymbolTable:
    return SymbolTable([BLANK_SYMBOL, *pieces])


def build_L(lexicon: Mapping[str, Sequence[Sequence[str]]], units: SymbolTable,
            words: SymbolTable | None = None) -> Wfst:
    """Unit-sequence to word transducer, closed over word sequences.

    Every entry is its own chain out of and back into state 0; the word is
    emitted on the chain's first arc.
    """
    if not lexicon:
        raise ConfigError("lexicon is empty")
    if words is None:
        words = SymbolTable(lexicon)
    fst = Wfst(TROPICAL, units, words)
    fst.set_start(fst.add_state())
    fst.set_final(0)
    for word, entries in lexicon.items():
        if word not in words:
            log.warning("lexicon word %r is not in the word table; skipped", word)
            continue
        wid = words.find(word)
        for entry in entries:
            try:
                ids = [units.find(u) for u in entry]
            except KeyError as e:
                raise ConfigError(f"unit {e.args[0]!r} of word {word!r} is not a known unit") from None
            if BLANK_ILABEL in ids:
                raise ConfigError(f"word {word!r} uses the blank unit")
            src = 0
            for k, uid in enumerate(ids):
                dst = 0 if k == len(ids) - 1 else fst.add_state()
                fst.add_arc(src, uid, wid if k == 0 else EPSILON, 0.0, dst)
                src = dst
    return fst.arcsort()


def build_H_wordpiece(n_units: int, units: SymbolTable | None = None) -> Wfst:
    """Frame-level CTC topology: maps frame label strings to collapsed unit strings.

    State 0 means "after blank (or at start)"; state j means "inside a run
    of unit j".  A repeated unit is emitted again only after passing
    through state 0, i.e. after at least one blank frame.
    """
    if n_units < 1:
        raise ConfigError("need at least one non-blank unit")
    if units is not None and len(units) != n_units + 2:
        raise ConfigError(f"unit table has {len(units) - 2} units, expected {n_units}")
    fst = Wfst(TROPICAL, units, units)
    fst.add_states(n_units + 1)
    fst.set_start(0)
    fst.add_arc(0, BLANK_ILABEL, EPSILON, 0.0, 0)
    for j in range(1, n_units + 1):
        fst.add_arc(0, j + 1, j + 1, 0.0, j)
    for j in range(1, n_units + 1):
        fst.add_arc(j, BLANK_ILABEL, EPSILON, 0.0, 0)
        for v in range(1, n_units + 1):
            if v == j:
                fst.add_arc(j, j + 1, EPSILON, 0.0, j)
            else:
                fst.add_arc(j, v + 1, v + 1, 0.0, v)
    for s in fst.states():
        fst.set_final(s)
    return fst.arcsort()


def shift_graph_labels(g: Wfst) -> Wfst:
    """Add one to every non-epsilon input label, freeing id 1 for blank."""
    out = Wfst(g.semiring, None, g.osymbols)
    out.add_states(g.num_states)
    if g.start >= 0:
        out.set_start(g.start)
    for s in g.states():
        for arc in g.arcs(s):
            il = arc.ilabel + 1 if arc.ilabel != EPSILON else EPSILON
            out.add_arc(s, il, arc.olabel, arc.weight, arc.nextstate)
    out.finals = dict(g.finals)
    if g.isymbols is not None:
        syms = g.isymbols.symbols()[1:]
        out.isymbols = SymbolTable([BLANK_SYMBOL, *syms])
    return out.arcsort()


def ctc_convert(g: Wfst, blank_id: int = BLANK_ILABEL) -> Wfst:
    """Make a one-state-per-HMM decoding graph accept CTC blank frames.

    Each state s is split into s (id s) and s' (id N + s).  Self-loops and
    incoming arcs stay on s; other outgoing arcs move to s'.  s gets a
    blank:<eps> self-loop and an <eps>:<eps> arc to s', both of weight one.
    s keeps the start status; s' takes the final weight and s keeps it
    too, so trailing blanks are accepted.  Under the log semiring this
    double-counts paths that end in s; decoding uses the tropical semiring.
    """
    if blank_id == EPSILON:
        raise ConfigError("blank must be a non-epsilon symbol")
    n = g.num_states
    for s in g.states():
        for arc in g.arcs(s):
            if arc.ilabel == blank_id:
                raise ConfigError(f"graph already uses blank id {blank_id} (state {s})")
    out = Wfst(g.semiring, g.isymbols, g.osymbols)
    out.add_states(2 * n)
    if g.start >= 0:
        out.set_start(g.start)
    one = g.semiring.one
    for s in g.states():
        out.add_arc(s, blank_id, EPSILON, one, s)
        out.add_arc(s, EPSILON, EPSILON, one, n + s)
        for arc in g.arcs(s):
            src = s if arc.nextstate == s else n + s
            out.add_arc(src, arc.ilabel, arc.olabel, arc.weight, arc.nextstate)
        if s in g.finals:
            out.set_final(s, g.finals[s])
            out.set_final(n + s, g.finals[s])
    return out.arcsort()


def build_decoding_graph(mode: str, *, wordpiece: WordpieceModel | None = None,
                         lexicon: Mapping | None = None, lm: NGramLm | None = None,
                         graph: Wfst | None = None, blank_id: int = BLANK_ILABEL,
                         exact_lm: bool = False) -> Wfst:
    """Build a blank-aware decoding graph.

    ``mode="wordpiece"`` composes H, L and G from a wordpiece model, an
    optional lexicon (derived by segmenting the LM vocabulary when absent)
    and an n-gram LM.  ``mode="chenone"`` converts a supplied
    context-expanded graph with :func:`ctc_convert`.
    """
    if mode == "chenone":
        if graph is None:
            raise ConfigError("chenone mode needs a pre-built graph")
        out = ctc_convert(graph, blank_id)
    elif mode == "wordpiece":
        if wordpiece is None or lm is None:
            raise ConfigError("wordpiece mode needs a wordpiece model and a language model")
        G = lm_to_fst(lm, exact=exact_lm)
        if lexicon is None:
            lexicon = Lexicon.from_wordpiece(wordpiece, lm.vocabulary)
        units = unit_symbols(wordpiece.pieces)
        H = build_H_wordpiece(len(wordpiece), units)
        L = build_L(lexicon, units, G.isymbols)
        out = compose(compose(H, L), G)
    else:
        raise ConfigError(f"unknown graph mode {mode!r}")
    out = connect(out).arcsort()
    if out.num_states == 0:
        raise ConfigError("decoding graph is empty after connect")
    return out
