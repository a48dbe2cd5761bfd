"""Weighted finite-state transducers over the tropical and log semirings.

Weights are stored as costs (negative log probabilities), so ``one`` is 0.0
and ``zero`` is +inf in both semirings.  Symbol id 0 is epsilon everywhere.
"""

from __future__ import annotations

import heapq
import io
import math
from collections import deque
from typing import Iterable, NamedTuple

from .errors import ConfigError, ParseError

EPSILON = 0
INF = math.inf


class Semiring:
    """A (plus, times) pair over costs; times is always addition."""

    one = 0.0
    zero = INF

    def __init__(self, name: str):
        if name not in ("tropical", "log"):
            raise ConfigError(f"unknown semiring {name!r}")
        self.name = name

    def plus(self, a: float, b: float) -> float:
        if self.name == "tropical":
            return a if a <= b else b
        if a == INF:
            return b
        if b == INF:
            return a
        return min(a, b) - math.log1p(math.exp(-abs(a - b)))

    @staticmethod
    def times(a: float, b: float) -> float:
        return a + b

    def sum(self, weights: Iterable[float]) -> float:
        total = self.zero
        for w in weights:
            total = self.plus(total, w)
        return total

    def __eq__(self, other):
        return isinstance(other, Semiring) and other.name == self.name

    def __hash__(self):
        return hash(self.name)

    def __repr__(self):
        return f"Semiring({self.name!r})"


TROPICAL = Semiring("tropical")
LOG = Semiring("log")


class SymbolTable:
    """Bidirectional string <-> id map with id 0 fixed to ``<eps>``."""

    def __init__(self, symbols: Iterable[str] = ()):
        self._id2sym = ["<eps>"]
        self._sym2id = {"<eps>": 0}
        for sym in symbols:
            self.add(sym)

    def add(self, symbol: str) -> int:
        if symbol in self._sym2id:
            return self._sym2id[symbol]
        if any(c.isspace() for c in symbol) or not symbol:
            raise ConfigError(f"symbol {symbol!r} is empty or contains whitespace")
        self._sym2id[symbol] = len(self._id2sym)
        self._id2sym.append(symbol)
        return self._sym2id[symbol]

    def find(self, key):
        """Id for a string key, or string for an int key; KeyError if absent."""
        if isinstance(key, str):
            return self._sym2id[key]
        return self._id2sym[key]

    def __contains__(self, symbol):
        return symbol in self._sym2id

    def __len__(self):
        return len(self._id2sym)

    def __iter__(self):
        return iter(enumerate(self._id2sym))

    def __eq__(self, other):
        return isinstance(other, SymbolTable) and self._id2sym == other._id2sym

    def symbols(self) -> list[str]:
        return list(self._id2sym)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for i, sym in enumerate(self._id2sym):
                f.write(f"{sym}\t{i}\n")

    @classmethod
    def read(cls, path) -> SymbolTable:
        pairs = []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                if not line.strip():
                    continue
                fields = line.split()
                if len(fields) != 2:
                    raise ParseError(f"expected 'symbol<TAB>id', got {line.rstrip()!r}", lineno)
                try:
                    pairs.append((fields[0], int(fields[1])))
                except ValueError:
                    raise ParseError(f"bad symbol id {fields[1]!r}", lineno) from None
        pairs.sort(key=lambda p: p[1])
        if not pairs or pairs[0] != ("<eps>", 0):
            raise ParseError("symbol table must map <eps> to 0")
        if [i for _, i in pairs] != list(range(len(pairs))):
            raise ParseError("symbol ids must be dense 0..N-1")
        return cls(sym for sym, _ in pairs[1:])


class Arc(NamedTuple):
    ilabel: int
    olabel: int
    weight: float
    nextstate: int


class Wfst:
    """Mutable during construction; treat as immutable once built."""

    def __init__(self, semiring: Semiring = TROPICAL, isymbols: SymbolTable | None = None,
                 osymbols: SymbolTable | None = None):
        self.semiring = semiring
        self.isymbols = isymbols
        self.osymbols = osymbols
        self.start = -1
        self.finals: dict[int, float] = {}
        self._arcs: list[list[Arc]] = []

    # construction
    def add_state(self) -> int:
        self._arcs.append([])
        return len(self._arcs) - 1

    def add_states(self, n: int) -> None:
        self._arcs.extend([] for _ in range(n))

    def set_start(self, state: int) -> None:
        self._check_state(state)
        self.start = state

    def set_final(self, state: int, weight: float = 0.0) -> None:
        self._check_state(state)
        if weight == INF:
            self.finals.pop(state, None)
        else:
            self.finals[state] = float(weight)

    def add_arc(self, state: int, ilabel: int, olabel: int, weight: float, nextstate: int) -> None:
        self._check_state(state)
        self._check_state(nextstate)
        self._arcs[state].append(Arc(ilabel, olabel, float(weight), nextstate))

    def arcsort(self) -> Wfst:
        """Sort each state's arcs by input label (stable)."""
        for arcs in self._arcs:
            arcs.sort(key=lambda a: a.ilabel)
        return self

    def _check_state(self, state):
        if not 0 <= state < len(self._arcs):
            raise ConfigError(f"state {state} out of range (have {len(self._arcs)})")

    # access
    @property
    def num_states(self) -> int:
        return len(self._arcs)

    def num_arcs(self, state: int | None = None) -> int:
        if state is not None:
            return len(self._arcs[state])
        return sum(len(a) for a in self._arcs)

    def states(self) -> range:
        return range(len(self._arcs))

    def arcs(self, state: int) -> list[Arc]:
        return self._arcs[state]

    def final(self, state: int) -> float:
        return self.finals.get(state, INF)

    def is_final(self, state: int) -> bool:
        return state in self.finals

    def copy(self) -> Wfst:
        out = Wfst(self.semiring, self.isymbols, self.osymbols)
        out._arcs = [list(a) for a in self._arcs]
        out.start = self.start
        out.finals = dict(self.finals)
        return out

    def __repr__(self):
        return f"<Wfst {self.semiring.name} states={self.num_states} arcs={self.num_arcs()}>"


def linear_fst(ilabels, olabels=None, semiring=TROPICAL, weight=0.0,
               isymbols=None, osymbols=None) -> Wfst:
    """Single-path transducer; an acceptor when ``olabels`` is None."""
    if olabels is None:
        olabels = ilabels
    n = max(len(ilabels), len(olabels))
    ilabels = list(ilabels) + [EPSILON] * (n - len(ilabels))
    olabels = list(olabels) + [EPSILON] * (n - len(olabels))
    fst = Wfst(semiring, isymbols, osymbols)
    fst.add_states(n + 1)
    fst.set_start(0)
    for i, (il, ol) in enumerate(zip(ilabels, olabels)):
        fst.add_arc(i, il, ol, 0.0, i + 1)
    fst.set_final(n, weight)
    return fst


def _check_no_epsilon_cycles(fst: Wfst, name: str) -> None:
    # ε:ε cycles make the weighted relation ill-defined under the log semiring
    color = [0] * fst.num_states
    for root in fst.states():
        if color[root]:
            continue
        stack = [(root, iter(fst.arcs(root)))]
        color[root] = 1
        while stack:
            state, it = stack[-1]
            for arc in it:
                if arc.ilabel != EPSILON or arc.olabel != EPSILON:
                    continue
                if color[arc.nextstate] == 1:
                    raise ConfigError(f"{name} has an epsilon:epsilon cycle through state {arc.nextstate}")
                if color[arc.nextstate] == 0:
                    color[arc.nextstate] = 1
                    stack.append((arc.nextstate, iter(fst.arcs(arc.nextstate))))
                    break
            else:
                color[state] = 2
                stack.pop()


def compose(a: Wfst, b: Wfst) -> Wfst:
    """Relational composition a∘b with the 3-state epsilon filter.

    Filter states: 0 = free, 1 = only ``b`` has been moving on input
    epsilons, 2 = only ``a`` has been moving on output epsilons.  Paired
    epsilon moves are allowed only from state 0, which makes every
    composed path correspond to exactly one pair of component paths.
    Only states reachable from the start are created.
    """
    if a.semiring != b.semiring:
        raise ConfigError(f"semiring mismatch: {a.semiring.name} vs {b.semiring.name}")
    if a.osymbols is not None and b.isymbols is not None and a.osymbols != b.isymbols:
        raise ConfigError("symbol table mismatch: a.osymbols differs from b.isymbols")
    _check_no_epsilon_cycles(a, "left operand")
    _check_no_epsilon_cycles(b, "right operand")

    out = Wfst(a.semiring, a.isymbols, b.osymbols)
    if a.start < 0 or b.start < 0:
        return out

    b_index: dict[int, dict[int, list[Arc]]] = {}

    def arcs_by_ilabel(sb):
        idx = b_index.get(sb)
        if idx is None:
            idx = {}
            for arc in b.arcs(sb):
                idx.setdefault(arc.ilabel, []).append(arc)
            b_index[sb] = idx
        return idx

    ids: dict[tuple[int, int, int], int] = {}
    queue: deque[tuple[int, int, int]] = deque()

    def state_id(triple):
        sid = ids.get(triple)
        if sid is None:
            sid = ids[triple] = out.add_state()
            queue.append(triple)
        return sid

    out.set_start(state_id((a.start, b.start, 0)))
    while queue:
        triple = queue.popleft()
        sa, sb, filt = triple
        src = ids[triple]
        if sa in a.finals and sb in b.finals:
            out.set_final(src, a.finals[sa] + b.finals[sb])
        bidx = arcs_by_ilabel(sb)
        for arc_a in a.arcs(sa):
            if arc_a.olabel != EPSILON:
                for arc_b in bidx.get(arc_a.olabel, ()):
                    dst = state_id((arc_a.nextstate, arc_b.nextstate, 0))
                    out.add_arc(src, arc_a.ilabel, arc_b.olabel, arc_a.weight + arc_b.weight, dst)
                continue
            if filt != 1:
                dst = state_id((arc_a.nextstate, sb, 2))
                out.add_arc(src, arc_a.ilabel, EPSILON, arc_a.weight, dst)
            if filt == 0:
                for arc_b in bidx.get(EPSILON, ()):
                    dst = state_id((arc_a.nextstate, arc_b.nextstate, 0))
                    out.add_arc(src, arc_a.ilabel, arc_b.olabel, arc_a.weight + arc_b.weight, dst)
        if filt != 2:
            for arc_b in bidx.get(EPSILON, ()):
                dst = state_id((sa, arc_b.nextstate, 1))
                out.add_arc(src, EPSILON, arc_b.olabel, arc_b.weight, dst)
    return out.arcsort()


def _reachable(fst: Wfst, roots: Iterable[int], reverse: bool = False) -> set[int]:
    if reverse:
        adj: list[list[int]] = [[] for _ in fst.states()]
        for s in fst.states():
            for arc in fst.arcs(s):
                adj[arc.nextstate].append(s)
    seen = set(roots)
    stack = list(seen)
    while stack:
        s = stack.pop()
        nexts = adj[s] if reverse else (arc.nextstate for arc in fst.arcs(s))
        for n in nexts:
            if n not in seen:
                seen.add(n)
                stack.append(n)
    return seen


def connect(g: Wfst) -> Wfst:
    """Trim states that are not on some start-to-final path."""
    out = Wfst(g.semiring, g.isymbols, g.osymbols)
    if g.start < 0:
        return out
    keep = _reachable(g, [g.start]) & _reachable(g, g.finals, reverse=True)
    if g.start not in keep:
        return out
    order = sorted(keep)
    remap = {old: new for new, old in enumerate(order)}
    out.add_states(len(order))
    out.set_start(remap[g.start])
    for old in order:
        for arc in g.arcs(old):
            if arc.nextstate in remap:
                out.add_arc(remap[old], arc.ilabel, arc.olabel, arc.weight, remap[arc.nextstate])
        if old in g.finals:
            out.set_final(remap[old], g.finals[old])
    return out


class Path(NamedTuple):
    weight: float
    states: tuple[int, ...]
    ilabels: tuple[int, ...]
    olabels: tuple[int, ...]


def _distance_to_final(g: Wfst) -> list[float]:
    dist = [g.final(s) for s in g.states()]
    for _ in range(g.num_states + 1):
        changed = False
        for s in g.states():
            best = dist[s]
            for arc in g.arcs(s):
                d = arc.weight + dist[arc.nextstate]
                if d < best:
                    best = d
            if best < dist[s]:
                dist[s] = best
                changed = True
        if not changed:
            return dist
    raise ConfigError("graph has a negative-weight cycle")


def shortest_path(g: Wfst, n: int = 1) -> list[Path]:
    """Up to ``n`` lowest-cost accepting paths, cost ascending.

    Best-first search guided by the exact cost-to-final, so paths come out
    in order even with negative arc weights.  Ties are broken by the state
    sequence, then by arc positions.  Intended for acyclic graphs; on
    cyclic ones it still terminates once ``n`` paths are found.
    """
    if g.semiring != TROPICAL:
        raise ConfigError("shortest_path requires the tropical semiring")
    if n <= 0 or g.start < 0:
        return []
    h = _distance_to_final(g)
    if h[g.start] == INF:
        return []
    # entries: (estimate, states, arc_positions, done, cost, ilabels, olabels)
    heap = [(h[g.start], (g.start,), (), False, 0.0, (), ())]
    found: list[Path] = []
    while heap and len(found) < n:
        est, states, positions, done, cost, il, ol = heapq.heappop(heap)
        if done:
            found.append(Path(cost, states, il, ol))
            continue
        s = states[-1]
        if s in g.finals:
            total = cost + g.finals[s]
            heapq.heappush(heap, (total, states, positions, True, total, il, ol))
        for pos, arc in enumerate(g.arcs(s)):
            hn = h[arc.nextstate]
            if hn == INF:
                continue
            c = cost + arc.weight
            heapq.heappush(heap, (c + hn, states + (arc.nextstate,), positions + (pos,), False, c,
                                  il + ((arc.ilabel,) if arc.ilabel else ()),
                                  ol + ((arc.olabel,) if arc.olabel else ())))
    return found


# text format
def _fmt_weight(w: float) -> str:
    return repr(float(w))


def _final_line(state: int, weight: float) -> str:
    return f"{state}\n" if weight == 0.0 else f"{state}\t{_fmt_weight(weight)}\n"


def _label_str(label: int, table: SymbolTable | None) -> str:
    return table.find(label) if table is not None else str(label)


def write_text(fst: Wfst, f=None) -> str | None:
    """AT&T text format; the start state's lines come first.

    Returns the text when ``f`` is None, otherwise writes to the path or
    file object ``f``.
    """
    buf = io.StringIO()
    if fst.start >= 0:
        order = [fst.start] + [s for s in fst.states() if s != fst.start]
        head_final = fst.num_arcs(fst.start) == 0
        if head_final:
            # the first line names the start state, so it must not be another state's arc
            buf.write(_final_line(fst.start, fst.final(fst.start)))
        for s in order:
            for arc in fst.arcs(s):
                fields = [str(s), str(arc.nextstate), _label_str(arc.ilabel, fst.isymbols),
                          _label_str(arc.olabel, fst.osymbols)]
                if arc.weight != 0.0:
                    fields.append(_fmt_weight(arc.weight))
                buf.write("\t".join(fields) + "\n")
        for s in order:
            if s in fst.finals and not (head_final and s == fst.start):
                buf.write(_final_line(s, fst.finals[s]))
    text = buf.getvalue()
    if f is None:
        return text
    if hasattr(f, "write"):
        f.write(text)
    else:
        with open(f, "w", encoding="utf-8") as fh:
            fh.write(text)
    return None


def _parse_label(tok: str, table: SymbolTable | None, lineno: int) -> int:
    if table is not None:
        try:
            return table.find(tok)
        except KeyError:
            raise ParseError(f"unknown symbol {tok!r}", lineno) from None
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"non-integer label {tok!r} and no symbol table", lineno) from None


def read_text(text: str, isymbols: SymbolTable | None = None, osymbols: SymbolTable | None = None,
              semiring: Semiring = TROPICAL) -> Wfst:
    fst = Wfst(semiring, isymbols, osymbols)
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = line.split()
        if not fields:
            continue
        try:
            if len(fields) in (4, 5):
                src, dst = int(fields[0]), int(fields[1])
                weight = float(fields[4]) if len(fields) == 5 else 0.0
            elif len(fields) in (1, 2):
                src = int(fields[0])
                weight = float(fields[1]) if len(fields) == 2 else 0.0
                dst = src
            else:
                raise ParseError(f"expected 1, 2, 4 or 5 fields, got {len(fields)}", lineno)
        except ValueError:
            raise ParseError(f"malformed line {line!r}", lineno) from None
        if min(src, dst) < 0:
            raise ParseError("negative state id", lineno)
        while fst.num_states <= max(src, dst):
            fst.add_state()
        if fst.start < 0:
            fst.set_start(src)
        if len(fields) <= 2:
            fst.set_final(src, weight)
        else:
            fst.add_arc(src, _parse_label(fields[2], isymbols, lineno),
                        _parse_label(fields[3], osymbols, lineno), weight, dst)
    return fst.arcsort()


def read_text_file(path, isymbols=None, osymbols=None, semiring=TROPICAL) -> Wfst:
    with open(path, encoding="utf-8") as f:
        return read_text(f.read(), isymbols, osymbols, semiring)
