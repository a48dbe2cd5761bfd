"""Independent reference implementations used by the tests.

Everything here is deliberately naive: explicit enumeration, no shared
code with the package beyond the data containers.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict

import numpy as np

from wpctc.fst import EPSILON, Wfst


def logsumexp(xs):
    xs = [x for x in xs if x != -math.inf]
    if not xs:
        return -math.inf
    m = max(xs)
    return m + math.log(sum(math.exp(x - m) for x in xs))


# ---- CTC

def ctc_collapse(path, blank=0):
    merged = [k for k, _ in itertools.groupby(path)]
    return [k for k in merged if k != blank]


def brute_ctc_loss(logp, target):
    """-log sum over every frame path whose collapse is ``target``."""
    T, V = logp.shape
    terms = []
    for path in itertools.product(range(V), repeat=T):
        if ctc_collapse(path) == list(target):
            terms.append(sum(logp[t, k] for t, k in enumerate(path)))
    return -logsumexp(terms)


def finite_difference(f, x, h=1e-5):
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        grad[idx] = (f(xp) - f(xm)) / (2 * h)
    return grad


# ---- FST path enumeration

def enumerate_paths(g: Wfst, max_labels: int, max_arcs: int = 40, label_side="input"):
    """All accepting paths with at most ``max_labels`` non-epsilon labels on one side.

    Yields (ilabels, olabels, weight) with epsilons removed and the final
    weight included; weights are plain sums (costs).
    """
    if g.start < 0:
        return
    stack = [(g.start, (), (), 0.0, 0)]
    while stack:
        s, il, ol, w, n = stack.pop()
        if s in g.finals:
            yield il, ol, w + g.finals[s]
        if n >= max_arcs:
            continue
        for arc in g.arcs(s):
            nil = il + ((arc.ilabel,) if arc.ilabel != EPSILON else ())
            nol = ol + ((arc.olabel,) if arc.olabel != EPSILON else ())
            count = len(nil) if label_side == "input" else len(nol)
            if count > max_labels:
                continue
            stack.append((arc.nextstate, nil, nol, w + arc.weight, n + 1))


def relation(g: Wfst, max_labels: int, semiring: str, max_arcs: int = 40, label_side="input"):
    """Map (istring, ostring) -> combined weight over all enumerated paths."""
    groups = defaultdict(list)
    for il, ol, w in enumerate_paths(g, max_labels, max_arcs, label_side):
        groups[(il, ol)].append(w)
    if semiring == "tropical":
        return {k: min(v) for k, v in groups.items()}
    return {k: -logsumexp([-x for x in v]) for k, v in groups.items()}


def compose_relations(ra, rb, semiring: str):
    """Join two relations on the middle string."""
    by_mid = defaultdict(list)
    for (x, y), w in rb.items():
        by_mid[x].append((y, w))
    out = defaultdict(list)
    for (x, y), w in ra.items():
        for z, v in by_mid.get(y, []):
            out[(x, z)].append(w + v)
    if semiring == "tropical":
        return {k: min(v) for k, v in out.items()}
    return {k: -logsumexp([-x for x in v]) for k, v in out.items()}


def random_acyclic_fst(rng, n_states, n_syms, semiring, eps_prob=0.25, arc_prob=0.5,
                       in_eps=True, out_eps=True):
    g = Wfst(semiring)
    g.add_states(n_states)
    g.set_start(0)
    for s in range(n_states):
        for t in range(s + 1, n_states):
            for _ in range(2):
                if rng.random() < arc_prob:
                    il = 0 if in_eps and rng.random() < eps_prob else int(rng.integers(1, n_syms + 1))
                    ol = 0 if out_eps and rng.random() < eps_prob else int(rng.integers(1, n_syms + 1))
                    g.add_arc(s, il, ol, round(float(rng.uniform(0, 2)), 3), t)
    g.set_final(n_states - 1, round(float(rng.uniform(0, 1)), 3))
    if n_states > 2 and rng.random() < 0.5:
        g.set_final(int(rng.integers(1, n_states - 1)), round(float(rng.uniform(0, 1)), 3))
    return g.arcsort()


def random_cyclic_fst(rng, n_states, n_syms, semiring, n_arcs, first_label=1, eps_prob=0.2):
    """Random graph whose cycles all carry a non-epsilon input label.

    Epsilon input arcs only go from lower to higher state ids.
    """
    g = Wfst(semiring)
    g.add_states(n_states)
    g.set_start(0)
    for _ in range(n_arcs):
        s = int(rng.integers(n_states))
        t = int(rng.integers(n_states))
        il = int(rng.integers(first_label, first_label + n_syms))
        if s < t and rng.random() < eps_prob:
            il = EPSILON
        ol = 0 if rng.random() < 0.3 else int(rng.integers(1, n_syms + 1))
        g.add_arc(s, il, ol, round(float(rng.uniform(0, 2)), 3), t)
    for s in range(n_states):
        if rng.random() < 0.4 or s == n_states - 1:
            g.set_final(s, round(float(rng.uniform(0, 1)), 3))
    return g.arcsort()


# ---- decoding

def exhaustive_decode(logp, g: Wfst, acoustic_scale=1.0):
    """Best (cost, words) over every path consuming exactly T emitting arcs.

    Input label k reads posterior column k - 1.  Graphs must not have
    epsilon-input cycles.
    """
    T = len(logp)
    best = (math.inf, None)
    stack = [(g.start, 0, 0.0, ())]
    while stack:
        s, t, cost, words = stack.pop()
        if t == T and s in g.finals:
            total = cost + g.finals[s]
            if total < best[0]:
                best = (total, list(words))
        for arc in g.arcs(s):
            w = words + ((arc.olabel,) if arc.olabel != EPSILON else ())
            if arc.ilabel == EPSILON:
                stack.append((arc.nextstate, t, cost + arc.weight, w))
            elif t < T:
                c = cost + arc.weight - acoustic_scale * logp[t, arc.ilabel - 1]
                stack.append((arc.nextstate, t + 1, c, w))
    return best


def optimal_word_sequences(logp, g: Wfst, acoustic_scale=1.0, tol=1e-9):
    """(best cost, set of every word tuple whose best path is within tol of it)."""
    T = len(logp)
    per_words: dict = {}
    stack = [(g.start, 0, 0.0, ())]
    while stack:
        s, t, cost, words = stack.pop()
        if t == T and s in g.finals:
            total = cost + g.finals[s]
            per_words[words] = min(per_words.get(words, math.inf), total)
        for arc in g.arcs(s):
            w = words + ((arc.olabel,) if arc.olabel != EPSILON else ())
            if arc.ilabel == EPSILON:
                stack.append((arc.nextstate, t, cost + arc.weight, w))
            elif t < T:
                stack.append((arc.nextstate, t + 1, cost + arc.weight - acoustic_scale * logp[t, arc.ilabel - 1], w))
    if not per_words:
        return math.inf, set()
    best = min(per_words.values())
    return best, {w for w, c in per_words.items() if c <= best + tol}


def edit_distance(a, b):
    """Plain recursive-table Levenshtein distance."""
    d = {(i, 0): i for i in range(len(a) + 1)}
    d.update({(0, j): j for j in range(len(b) + 1)})
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            d[i, j] = min(d[i - 1, j] + 1, d[i, j - 1] + 1, d[i - 1, j - 1] + (a[i - 1] != b[j - 1]))
    return d[len(a), len(b)]


# ---- language model

class ArpaInterpreter:
    """Back-off scorer working straight from ARPA text, in log10."""

    def __init__(self, text: str):
        self.prob = {}
        self.bo = {}
        order = 0
        for line in text.splitlines():
            line = line.strip()
            if line.startswith("\\") and line.endswith("-grams:"):
                order = int(line[1:line.index("-")])
                continue
            if not line or line.startswith("\\") or line.startswith("ngram") or order == 0:
                continue
            parts = line.split()
            words = tuple(parts[1:1 + order])
            self.prob[words] = float(parts[0])
            if len(parts) > order + 1:
                self.bo[words] = float(parts[order + 1])
        self.order = max(len(k) for k in self.prob)

    def score(self, word, history):
        history = tuple(history)[-(self.order - 1):] if self.order > 1 else ()
        if history + (word,) in self.prob:
            return self.prob[history + (word,)]
        if not history:
            return -math.inf
        return self.bo.get(history, 0.0) + self.score(word, history[1:])

    def sentence(self, words):
        hist = ["<s>"]
        total = 0.0
        for w in list(words) + ["</s>"]:
            total += self.score(w, hist)
            hist.append(w)
        return total * math.log(10.0)


def random_arpa(rng, vocab, order):
    """A random but well-formed back-off LM in ARPA text."""
    grams = {1: [(w,) for w in vocab + ["</s>", "<s>"]]}
    for n in range(2, order + 1):
        grams[n] = []
        for ctx in grams[n - 1]:
            if ctx[-1] == "</s>":
                continue
            for w in vocab + ["</s>"]:
                if rng.random() < 0.4:
                    grams[n].append(ctx + (w,))
    lines = ["\\data\\"] + [f"ngram {n}={len(grams[n])}" for n in range(1, order + 1)]
    for n in range(1, order + 1):
        lines += ["", f"\\{n}-grams:"]
        for g in grams[n]:
            p = -99.0 if g == ("<s>",) else round(float(rng.uniform(-2.5, -0.1)), 4)
            fields = [repr(p), " ".join(g)]
            if n < order and g[-1] != "</s>":
                fields.append(repr(round(float(rng.uniform(-1.0, 0.0)), 4)))
            lines.append("\t".join(fields))
    lines += ["", "\\end\\", ""]
    return "\n".join(lines)


# ---- wordpiece

def exhaustive_segmentation(word, pieces, logprobs, marker="_"):
    """Best (score, tokens) over all 2^(n-1) ways of cutting ``word``."""
    table = dict(zip(pieces, logprobs))
    best = (-math.inf, None)
    n = len(word)
    for cuts in itertools.product([False, True], repeat=n - 1):
        tokens = []
        start = 0
        for i, c in enumerate(cuts, 1):
            if c:
                tokens.append(word[start:i])
                start = i
        tokens.append(word[start:])
        tokens[0] = marker + tokens[0]
        if all(t in table for t in tokens):
            score = sum(table[t] for t in tokens)
            if score > best[0]:
                best = (score, tokens)
    return best


# ---- streaming

def moving_average_full(x, left, right):
    T = len(x)
    return np.stack([x[max(0, t - left):min(T, t + right + 1)].mean(axis=0) for t in range(T)])


def leaky_lookahead_full(x, decay, right):
    h = np.zeros_like(x, dtype=np.float64)
    acc = np.zeros(x.shape[1:])
    for t in range(len(x)):
        acc = decay * acc + x[t]
        h[t] = acc
    T = len(x)
    return np.stack([h[t:min(T, t + right + 1)].mean(axis=0) for t in range(T)])
