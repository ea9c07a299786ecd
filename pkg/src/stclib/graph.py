"""Weighted finite-state transducers over the log semiring.

A :class:`Graph` holds states, arcs ``(src, dst, ilabel, olabel, weight)``
and start/final state sets.  There are no state weights: a path's score is
the sum of its arc weights.  The two lattice algorithms needed by the loss
functions live here: :func:`compose` and :func:`forward_score`.
"""

from __future__ import annotations

import math
from collections import deque
from typing import Callable, Iterator, NamedTuple

import numpy as np

from . import semiring

EPSILON = -1


class AlphabetError(ValueError):
    """Symbol spaces of two graphs (or a label and an alphabet) disagree."""


class UnsupportedGraphError(ValueError):
    """Graph has a cycle of finite weight, so its forward score diverges."""


class GraphParseError(ValueError):
    pass


class Arc(NamedTuple):
    src: int
    dst: int
    ilabel: int
    olabel: int
    weight: float


class Graph:
    """Mutable while being built, treated as immutable once handed to an algorithm.

    Arcs are numbered in insertion order and per-state arc lists keep that
    order, so every traversal (and every floating-point sum) is deterministic.
    ``isymbols``/``osymbols`` optionally tag the symbol space of the input and
    output side; :func:`compose` refuses to join tagged sides that differ.
    """

    def __init__(self, grad_enabled: bool = False, isymbols=None, osymbols=None):
        self.grad_enabled = grad_enabled
        self.isymbols = isymbols
        self.osymbols = osymbols if osymbols is not None else isymbols
        self.src: list[int] = []
        self.dst: list[int] = []
        self.ilabel: list[int] = []
        self.olabel: list[int] = []
        self._weight: list[float] = []
        self._out: list[list[int]] = []
        self._in: list[list[int]] = []
        self._is_start: list[bool] = []
        self._is_final: list[bool] = []
        self.provenance: tuple[np.ndarray, np.ndarray] | None = None
        self._cache: dict = {}

    # construction

    def add_state(self, start: bool = False, final: bool = False) -> int:
        self._out.append([])
        self._in.append([])
        self._is_start.append(start)
        self._is_final.append(final)
        self._cache.clear()
        return len(self._out) - 1

    def add_arc(self, src: int, dst: int, ilabel: int, olabel: int | None = None,
                weight: float = 0.0) -> int:
        n = len(self._out)
        if not (0 <= src < n and 0 <= dst < n):
            raise IndexError(f"arc {src}->{dst} references a missing state (have {n})")
        weight = float(weight)
        if math.isnan(weight) or weight == math.inf:
            raise ValueError(f"arc weight must be finite or -inf, got {weight}")
        idx = len(self.src)
        self.src.append(src)
        self.dst.append(dst)
        self.ilabel.append(ilabel)
        self.olabel.append(ilabel if olabel is None else olabel)
        self._weight.append(weight)
        self._out[src].append(idx)
        self._in[dst].append(idx)
        self._cache.clear()
        return idx

    def set_start(self, state: int, value: bool = True) -> None:
        self._is_start[state] = value
        self._cache.clear()

    def set_final(self, state: int, value: bool = True) -> None:
        self._is_final[state] = value
        self._cache.clear()

    # inspection

    @property
    def num_states(self) -> int:
        return len(self._out)

    @property
    def num_arcs(self) -> int:
        return len(self.src)

    @property
    def start_states(self) -> list[int]:
        return [s for s, v in enumerate(self._is_start) if v]

    @property
    def final_states(self) -> list[int]:
        return [s for s, v in enumerate(self._is_final) if v]

    def is_start(self, state: int) -> bool:
        return self._is_start[state]

    def is_final(self, state: int) -> bool:
        return self._is_final[state]

    def out_arcs(self, state: int) -> list[int]:
        return self._out[state]

    def in_arcs(self, state: int) -> list[int]:
        return self._in[state]

    def weight(self, arc: int) -> float:
        return self._weight[arc]

    def arc(self, idx: int) -> Arc:
        return Arc(self.src[idx], self.dst[idx], self.ilabel[idx], self.olabel[idx],
                   self._weight[idx])

    def arcs(self) -> Iterator[Arc]:
        for i in range(len(self.src)):
            yield self.arc(i)

    @property
    def weights(self) -> np.ndarray:
        """Arc weights as a float64 array (read-only view, cached)."""
        w = self._cache.get("weights")
        if w is None:
            w = np.array(self._weight, dtype=np.float64)
            w.setflags(write=False)
            self._cache["weights"] = w
        return w

    def with_weights(self, weights) -> "Graph":
        """Copy of this graph with identical topology and new arc weights."""
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (self.num_arcs,):
            raise ValueError(f"expected {self.num_arcs} weights, got shape {weights.shape}")
        g = Graph(self.grad_enabled, self.isymbols, self.osymbols)
        for s in range(self.num_states):
            g.add_state(self._is_start[s], self._is_final[s])
        for i in range(self.num_arcs):
            g.add_arc(self.src[i], self.dst[i], self.ilabel[i], self.olabel[i], weights[i])
        return g

    def input_index(self, state: int) -> dict[int, list[int]]:
        """Outgoing arcs of ``state`` grouped by input label (built lazily)."""
        index = self._cache.get("iindex")
        if index is None:
            index = [None] * self.num_states
            self._cache["iindex"] = index
        by_label = index[state]
        if by_label is None:
            by_label = {}
            ilabel = self.ilabel
            for a in self._out[state]:
                by_label.setdefault(ilabel[a], []).append(a)
            index[state] = by_label
        return by_label

    def topological_order(self) -> list[int]:
        """States in topological order, ignoring arcs of weight -inf.

        Raises UnsupportedGraphError if a cycle of finite-weight arcs exists.
        """
        order = self._cache.get("topo")
        if order is not None:
            return order
        n = self.num_states
        w = self._weight
        indeg = [0] * n
        for a, d in enumerate(self.dst):
            if w[a] != semiring.ZERO:
                indeg[d] += 1
        queue = deque(s for s in range(n) if indeg[s] == 0)
        order = []
        while queue:
            s = queue.popleft()
            order.append(s)
            for a in self._out[s]:
                if w[a] == semiring.ZERO:
                    continue
                d = self.dst[a]
                indeg[d] -= 1
                if indeg[d] == 0:
                    queue.append(d)
        if len(order) != n:
            raise UnsupportedGraphError(
                "graph contains a cycle with finite weight; forward score would diverge")
        self._cache["topo"] = order
        return order

    def __repr__(self) -> str:
        return (f"Graph(states={self.num_states}, arcs={self.num_arcs}, "
                f"start={self.start_states}, final={self.final_states})")


def structurally_equal(g1: Graph, g2: Graph) -> bool:
    """Same states, start/final sets and arc list (order and exact weights)."""
    return (g1.num_states == g2.num_states
            and g1.start_states == g2.start_states
            and g1.final_states == g2.final_states
            and list(g1.arcs()) == list(g2.arcs()))


def linear_graph(labels, weights=None, grad_enabled: bool = False) -> Graph:
    """Single-path acceptor over ``labels``."""
    g = Graph(grad_enabled)
    g.add_state(start=True, final=not labels)
    for i, lab in enumerate(labels):
        g.add_state(final=i == len(labels) - 1)
        g.add_arc(i, i + 1, lab, lab, 0.0 if weights is None else weights[i])
    return g


# composition

def compose(g1: Graph, g2: Graph) -> Graph:
    """Compose ``g1`` (a -> b) with ``g2`` (b -> c).

    Matching arcs produce one arc whose weight is the sum of both.  Epsilon
    is handled with a sequencing filter: between two matched (non-epsilon)
    moves, all of ``g1``'s output-epsilon moves come before ``g2``'s
    input-epsilon moves, so each pair of paths yields exactly one composed
    path.  Only states reachable from the start pairs are created.

    The result's ``provenance`` holds two int arrays mapping every output arc
    to its source arc in ``g1`` and ``g2`` (-1 where that side did not move).
    """
    if g1.osymbols is not None and g2.isymbols is not None and g1.osymbols != g2.isymbols:
        raise AlphabetError(
            f"cannot compose: output symbols {g1.osymbols!r} differ from input symbols {g2.isymbols!r}")
    out = Graph(g1.grad_enabled or g2.grad_enabled, g1.isymbols, g2.osymbols)
    prov1: list[int] = []
    prov2: list[int] = []
    states: dict[tuple[int, int, int], int] = {}
    queue: deque = deque()

    g1_final = g1._is_final
    g2_final = g2._is_final

    def state_of(s1, s2, f, start=False):
        key = (s1, s2, f)
        sid = states.get(key)
        if sid is None:
            sid = out.add_state(start, g1_final[s1] and g2_final[s2])
            states[key] = sid
            queue.append(key)
        return sid

    for s1 in g1.start_states:
        for s2 in g2.start_states:
            state_of(s1, s2, 0, start=True)

    w1, w2 = g1._weight, g2._weight
    ol1, il1, d1 = g1.olabel, g1.ilabel, g1.dst
    ol2, d2 = g2.olabel, g2.dst
    add_arc = out.add_arc
    while queue:
        key = queue.popleft()
        s1, s2, f = key
        sid = states[key]
        index2 = g2.input_index(s2)
        for a1 in g1._out[s1]:
            lab = ol1[a1]
            if lab == EPSILON:
                if f == 0:
                    t = state_of(d1[a1], s2, 0)
                    add_arc(sid, t, il1[a1], EPSILON, w1[a1])
                    prov1.append(a1)
                    prov2.append(-1)
                continue
            matches = index2.get(lab)
            if not matches:
                continue
            for a2 in matches:
                t = state_of(d1[a1], d2[a2], 0)
                add_arc(sid, t, il1[a1], ol2[a2], w1[a1] + w2[a2])
                prov1.append(a1)
                prov2.append(a2)
        for a2 in index2.get(EPSILON, ()):
            t = state_of(s1, d2[a2], 1)
            add_arc(sid, t, EPSILON, ol2[a2], w2[a2])
            prov1.append(-1)
            prov2.append(a2)

    out.provenance = (np.array(prov1, dtype=np.int64), np.array(prov2, dtype=np.int64))
    return out


# forward score

def forward_scores(g: Graph) -> tuple[float, list[float]]:
    """Forward score plus the per-state forward (alpha) scores."""
    order = g.topological_order()
    w = g._weight
    src = g.src
    alpha = [semiring.ZERO] * g.num_states
    is_start = g._is_start
    in_arcs = g._in
    exp, log = math.exp, math.log
    NEG = semiring.ZERO
    for s in order:
        vals = [alpha[src[a]] + w[a] for a in in_arcs[s]]
        if is_start[s]:
            vals.append(0.0)
        if not vals:
            continue
        m = max(vals)
        if m == NEG:
            continue
        if len(vals) == 1:
            alpha[s] = m
        else:
            alpha[s] = m + log(sum([exp(v - m) for v in vals]))
    finals = [alpha[s] for s in g.final_states]
    return semiring.lse(finals), alpha


def backward_scores(g: Graph) -> list[float]:
    """Per-state backward (beta) scores: log-sum of path weights to any final state."""
    order = g.topological_order()
    w = g._weight
    dst = g.dst
    beta = [semiring.ZERO] * g.num_states
    is_final = g._is_final
    out_arcs = g._out
    exp, log = math.exp, math.log
    NEG = semiring.ZERO
    for s in reversed(order):
        vals = [w[a] + beta[dst[a]] for a in out_arcs[s]]
        if is_final[s]:
            vals.append(0.0)
        if not vals:
            continue
        m = max(vals)
        if m == NEG:
            continue
        if len(vals) == 1:
            beta[s] = m
        else:
            beta[s] = m + log(sum([exp(v - m) for v in vals]))
    return beta


def forward_score(g: Graph) -> float:
    """Log-sum-exp over all start-to-final path weights (-inf for the empty language)."""
    return forward_scores(g)[0]


def negate(score: float) -> float:
    return -score


# text and DOT export

def export_text(g: Graph) -> str:
    """Line-oriented dump: header lines, then ``src dst ilabel olabel weight`` per arc."""
    lines = [
        f"states {g.num_states}",
        "start" + "".join(f" {s}" for s in g.start_states),
        "final" + "".join(f" {s}" for s in g.final_states),
    ]
    for a in g.arcs():
        lines.append(f"{a.src} {a.dst} {a.ilabel} {a.olabel} {a.weight!r}")
    return "\n".join(lines) + "\n"


def parse_text(text: str, grad_enabled: bool = False) -> Graph:
    lines = text.splitlines()
    if len(lines) < 3:
        raise GraphParseError("expected 'states', 'start' and 'final' header lines")
    head = [ln.split() for ln in lines[:3]]
    if [h[0] if h else "" for h in head] != ["states", "start", "final"]:
        raise GraphParseError("malformed header")
    try:
        n = int(head[0][1])
        starts = {int(x) for x in head[1][1:]}
        finals = {int(x) for x in head[2][1:]}
    except (IndexError, ValueError) as exc:
        raise GraphParseError(f"malformed header: {exc}") from None
    g = Graph(grad_enabled)
    for s in range(n):
        g.add_state(s in starts, s in finals)
    for lineno, line in enumerate(lines[3:], start=4):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 5:
            raise GraphParseError(f"line {lineno}: expected 5 fields, got {len(parts)}")
        try:
            g.add_arc(int(parts[0]), int(parts[1]), int(parts[2]), int(parts[3]), float(parts[4]))
        except (ValueError, IndexError) as exc:
            raise GraphParseError(f"line {lineno}: {exc}") from None
    return g


def _fmt_weight(w: float) -> str:
    if w == semiring.ZERO:
        return "-inf"
    return f"{w:.4g}"


def export_dot(g: Graph, symbol_name: Callable[[int], str] | None = None) -> str:
    """Graphviz rendering: start states bold, final states double circles.

    Acceptor arcs are drawn as ``p/w``, transducer arcs as ``p:r/w``.
    """
    name = symbol_name or (lambda lab: "ε" if lab == EPSILON else str(lab))
    out = ["digraph G {", "  rankdir=LR;"]
    for s in range(g.num_states):
        attrs = ["shape=doublecircle" if g.is_final(s) else "shape=circle"]
        if g.is_start(s):
            attrs.append("penwidth=2.5")
        out.append(f"  {s} [{', '.join(attrs)}];")
    for a in g.arcs():
        if a.ilabel == a.olabel:
            lab = name(a.ilabel)
        else:
            lab = f"{name(a.ilabel)}:{name(a.olabel)}"
        text = f"{lab}/{_fmt_weight(a.weight)}".replace('"', r'\"')
        out.append(f'  {a.src} -> {a.dst} [label="{text}"];')
    out.append("}")
    return "\n".join(out) + "\n"
