"""Back-off n-gram language models: ARPA reading/writing, scoring, estimation
and conversion to a word-level acceptor with epsilon back-off arcs.

Probabilities are converted from log10 to natural log once, at parse time.
"""

from __future__ import annotations

import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ConfigError, DataError, ParseError
from .fst import EPSILON, TROPICAL, SymbolTable, Wfst

BOS = "<s>"
EOS = "</s>"
LN10 = math.log(10.0)

_SECTION = re.compile(r"^\\(\d+)-grams:$")
_COUNT = re.compile(r"^ngram\s+(\d+)\s*=\s*(\d+)$")


@dataclass
class NGramLm:
    """n-gram table: tuple of words -> (ln prob, ln backoff)."""

    order: int
    ngrams: dict[tuple[str, ...], tuple[float, float]] = field(default_factory=dict)

    def validate(self) -> None:
        for gram, (prob, _) in self.ngrams.items():
            if len(gram) > self.order:
                raise DataError(f"{' '.join(gram)!r} is longer than the model order {self.order}")
            if prob > 1e-9:
                raise DataError(f"positive log-probability for {' '.join(gram)!r}")
            if len(gram) > 1 and gram[:-1] not in self.ngrams:
                raise DataError(f"n-gram {' '.join(gram)!r} has no back-off context {' '.join(gram[:-1])!r}")

    @property
    def vocabulary(self) -> list[str]:
        """Words that can be emitted (sentence markers excluded), in file order."""
        return [g[0] for g in self.ngrams if len(g) == 1 and g[0] not in (BOS, EOS)]

    def cond_logprob(self, word: str, context: Sequence[str]) -> float:
        """ln p(word | context) with standard back-off."""
        context = tuple(context)[len(context) - self.order + 1:] if self.order > 1 else ()
        penalty = 0.0
        while True:
            entry = self.ngrams.get(context + (word,))
            if entry is not None:
                return penalty + entry[0]
            if not context:
                return -math.inf
            bo = self.ngrams.get(context)
            penalty += bo[1] if bo is not None else 0.0
            context = context[1:]

    def sentence_logprob(self, words: Sequence[str]) -> float:
        history = [BOS]
        total = 0.0
        for w in list(words) + [EOS]:
            total += self.cond_logprob(w, history)
            history.append(w)
        return total

    def to_arpa(self) -> str:
        by_order = defaultdict(list)
        for gram, value in self.ngrams.items():
            by_order[len(gram)].append((gram, value))
        lines = ["", "\\data\\"]
        lines += [f"ngram {n}={len(by_order[n])}" for n in range(1, self.order + 1)]
        for n in range(1, self.order + 1):
            lines += ["", f"\\{n}-grams:"]
            for gram, (prob, bo) in by_order[n]:
                fields = [_log10_str(prob), " ".join(gram)]
                if n < self.order and bo != 0.0:
                    fields.append(_log10_str(bo))
                lines.append("\t".join(fields))
        lines += ["", "\\end\\", ""]
        return "\n".join(lines)


def _log10_str(ln_value: float) -> str:
    if ln_value == -math.inf:
        return "-99"
    return f"{ln_value / LN10:.7f}"


def parse_arpa(text: str) -> NGramLm:
    declared: dict[int, int] = {}
    seen: dict[int, int] = defaultdict(int)
    ngrams: dict[tuple[str, ...], tuple[float, float]] = {}
    section = None  # None before \data\, 0 inside it, n inside \n-grams:
    ended = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if ended:
            raise ParseError("content after \\end\\", lineno)
        if line == "\\data\\":
            section = 0
            continue
        if line == "\\end\\":
            ended = True
            continue
        m = _SECTION.match(line)
        if m:
            if section is None:
                raise ParseError("n-gram section before \\data\\", lineno)
            section = int(m.group(1))
            if section not in declared:
                raise ParseError(f"section {section}-grams not declared in \\data\\", lineno)
            continue
        if section is None:
            continue  # header text before \data\ is allowed
        if section == 0:
            m = _COUNT.match(line)
            if not m:
                raise ParseError(f"expected 'ngram N=count', got {line!r}", lineno)
            declared[int(m.group(1))] = int(m.group(2))
            continue
        fields = line.split()
        if len(fields) not in (section + 1, section + 2):
            raise ParseError(f"expected {section} words plus probability, got {line!r}", lineno)
        try:
            prob = float(fields[0]) * LN10
            bo = float(fields[section + 1]) * LN10 if len(fields) == section + 2 else 0.0
        except ValueError:
            raise ParseError(f"non-numeric probability in {line!r}", lineno) from None
        gram = tuple(fields[1:section + 1])
        if gram in ngrams:
            raise ParseError(f"duplicate n-gram {' '.join(gram)!r}", lineno)
        ngrams[gram] = (prob, bo)
        seen[section] += 1
    if section is None:
        raise ParseError("missing \\data\\ section")
    if not ended:
        raise ParseError("missing \\end\\ marker")
    for n, count in declared.items():
        if seen[n] != count:
            raise ParseError(f"\\data\\ declares {count} {n}-grams but {seen[n]} were listed")
    if not declared:
        raise ParseError("\\data\\ declares no n-grams")
    lm = NGramLm(max(declared), ngrams)
    lm.validate()
    return lm


def read_arpa(path) -> NGramLm:
    with open(path, encoding="utf-8") as f:
        return parse_arpa(f.read())


def estimate(sentences: Iterable[Sequence[str]], order: int = 2, discount: float = 0.5) -> NGramLm:
    """Interpolated absolute-discounting LM, stored in back-off form.

    Unigrams are add-one smoothed over the vocabulary plus ``</s>``.  For
    a context h with total count c(h), a seen word gets
    (c(hw) - discount) / c(h) + bo(h) * p_lower(w), where
    bo(h) = discount * (distinct followers of h) / c(h); unseen words back
    off.  Seen n-grams therefore never score below their back-off route.
    """
    if order < 1:
        raise ConfigError("order must be >= 1")
    if not 0 < discount < 1:
        raise ConfigError("discount must be in (0, 1)")
    counts: list[Counter] = [Counter() for _ in range(order + 1)]
    for sent in sentences:
        toks = [BOS] + list(sent) + [EOS]
        for i in range(1, len(toks)):
            for n in range(1, min(order, i + 1) + 1):
                counts[n][tuple(toks[i - n + 1:i + 1])] += 1
    if not counts[1]:
        raise DataError("no sentences to estimate from")

    vocab = sorted(w for (w,) in counts[1])
    total = sum(counts[1].values()) + len(vocab)
    ngrams: dict[tuple[str, ...], tuple[float, float]] = {(BOS,): (-99 * LN10, 0.0)}
    for w in vocab:
        ngrams[(w,)] = (math.log((counts[1][(w,)] + 1) / total), 0.0)

    for n in range(2, order + 1):
        followers: dict[tuple, list] = defaultdict(list)
        for gram, c in counts[n].items():
            followers[gram[:-1]].append((gram[-1], c))
        for ctx in sorted(followers):
            ctx_total = sum(c for _, c in followers[ctx])
            bo = discount * len(followers[ctx]) / ctx_total
            for w, c in sorted(followers[ctx]):
                lower = math.exp(_lower(ngrams, ctx[1:], w))
                ngrams[ctx + (w,)] = (math.log((c - discount) / ctx_total + bo * lower), 0.0)
            ngrams[ctx] = (ngrams[ctx][0], math.log(bo))
    ordered = dict(sorted(ngrams.items(), key=lambda kv: (len(kv[0]), kv[0])))
    lm = NGramLm(order, ordered)
    lm.validate()
    return lm


def _lower(ngrams, context, word):
    penalty = 0.0
    while True:
        entry = ngrams.get(context + (word,))
        if entry is not None:
            return penalty + entry[0]
        if not context:
            return -math.inf
        penalty += ngrams.get(context, (0.0, 0.0))[1]
        context = context[1:]


def lm_to_fst(lm: NGramLm, words: SymbolTable | None = None, exact: bool = False) -> Wfst:
    """Word acceptor whose path costs are negative ln LM scores.

    One state per history (n-gram of order < n, not ending in ``</s>``).
    By default explicit n-grams become word arcs, back-off weights become
    epsilon arcs to the next-shorter history and ``</s>`` probabilities
    become final weights.  The shortest path then equals the back-off
    score for bigram models whose seen n-grams outscore their back-off
    route; at higher orders a path that backs off twice can land in a
    shorter history and undercut the true score.  ``exact=True`` instead
    gives every history an arc for every word with its back-off score
    (no epsilons), which is exact at any order and costs
    |histories| x |vocabulary| arcs.
    """
    vocab = lm.vocabulary
    if not vocab:
        raise ConfigError("language model has an empty vocabulary")
    if words is None:
        words = SymbolTable(vocab)
    for w in vocab:
        if w not in words:
            raise ConfigError(f"LM word {w!r} missing from the word symbol table")

    histories = [()] + [g for g in lm.ngrams if len(g) < lm.order and g[-1] != EOS]
    state_of = {h: i for i, h in enumerate(histories)}
    fst = Wfst(TROPICAL, words, words)
    fst.add_states(len(histories))
    fst.set_start(state_of.get((BOS,), 0))

    def dest(gram):
        gram = gram[len(gram) - lm.order + 1:] if lm.order > 1 else ()
        while gram not in state_of:
            gram = gram[1:]
        return state_of[gram]

    if exact:
        for h, src in state_of.items():
            for w in vocab:
                lp = lm.cond_logprob(w, h)
                if lp > -math.inf:
                    fst.add_arc(src, words.find(w), words.find(w), -lp, dest(h + (w,)))
            lp = lm.cond_logprob(EOS, h)
            if lp > -math.inf:
                fst.set_final(src, -lp)
        return fst.arcsort()

    for gram, (prob, _) in lm.ngrams.items():
        *ctx, w = gram
        ctx = tuple(ctx)
        if ctx not in state_of or w == BOS or prob == -math.inf:
            continue
        src = state_of[ctx]
        if w == EOS:
            fst.set_final(src, -prob)
        else:
            fst.add_arc(src, words.find(w), words.find(w), -prob, dest(gram))
    for h, src in state_of.items():
        if h:
            fst.add_arc(src, EPSILON, EPSILON, -lm.ngrams[h][1], dest(h[1:]))
    return fst.arcsort()
