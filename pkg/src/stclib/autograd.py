"""Reverse-mode differentiation through graph operations.

A :class:`Tape` runs ``compose``/``forward_score``/``negate`` and records
each call.  :meth:`Tape.backward` replays the records in reverse and returns
a :class:`GradStore` with d(output)/d(arc weight) for every grad-enabled
graph on the tape.

    tape = Tape()
    lattice = tape.compose(label_graph, emissions)
    loss = tape.negate(tape.forward_score(lattice))
    grads = tape.backward(loss)
    grads[emissions]          # one entry per arc of ``emissions``
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import graph as G
from .graph import Graph


@dataclass(frozen=True)
class Scalar:
    """A real value produced on a tape; ``node`` indexes the tape record."""

    value: float
    node: int


@dataclass
class _Record:
    kind: str
    inputs: tuple
    output: object
    alpha: list | None = None


class GradStore:
    """Accumulated arc gradients, keyed by graph identity."""

    def __init__(self):
        self._grads: dict[int, np.ndarray] = {}
        self._graphs: dict[int, Graph] = {}

    def _slot(self, g: Graph) -> np.ndarray:
        buf = self._grads.get(id(g))
        if buf is None:
            buf = np.zeros(g.num_arcs)
            self._grads[id(g)] = buf
            self._graphs[id(g)] = g
        return buf

    def accumulate(self, g: Graph, grad: np.ndarray) -> None:
        self._slot(g)[...] += grad

    def __contains__(self, g: Graph) -> bool:
        return id(g) in self._grads

    def __getitem__(self, g: Graph) -> np.ndarray:
        if id(g) not in self._grads:
            if not g.grad_enabled:
                raise KeyError("graph does not have gradients enabled")
            return np.zeros(g.num_arcs)
        return self._grads[id(g)]

    def graphs(self) -> list[Graph]:
        return list(self._graphs.values())


class Tape:
    """Op records for one loss computation.  Not shared between threads."""

    def __init__(self):
        self.records: list[_Record] = []

    def compose(self, g1: Graph, g2: Graph) -> Graph:
        out = G.compose(g1, g2)
        self.records.append(_Record("compose", (g1, g2), out))
        return out

    def forward_score(self, g: Graph) -> Scalar:
        value, alpha = G.forward_scores(g)
        self.records.append(_Record("forward_score", (g,), None, alpha))
        s = Scalar(value, len(self.records) - 1)
        self.records[-1].output = s
        return s

    def negate(self, s: Scalar) -> Scalar:
        self.records.append(_Record("negate", (s,), None))
        out = Scalar(-s.value, len(self.records) - 1)
        self.records[-1].output = out
        return out

    def backward(self, output: Scalar, upstream: float = 1.0) -> GradStore:
        store = GradStore()
        scalar_grads = {output.node: float(upstream)}
        for node in range(output.node, -1, -1):
            rec = self.records[node]
            if rec.kind == "negate":
                up = scalar_grads.pop(node, 0.0)
                src = rec.inputs[0].node
                scalar_grads[src] = scalar_grads.get(src, 0.0) - up
            elif rec.kind == "forward_score":
                up = scalar_grads.pop(node, 0.0)
                g = rec.inputs[0]
                if g.grad_enabled and up != 0.0:
                    store.accumulate(g, forward_score_grad(g, rec.output.value, rec.alpha) * up)
            elif rec.kind == "compose":
                out = rec.output
                if id(out) not in store._grads:
                    continue
                grad_out = store._grads.pop(id(out))
                store._graphs.pop(id(out))
                g1, g2 = rec.inputs
                prov1, prov2 = out.provenance
                for g, prov in ((g1, prov1), (g2, prov2)):
                    if not g.grad_enabled:
                        continue
                    mask = prov >= 0
                    buf = store._slot(g)
                    np.add.at(buf, prov[mask], grad_out[mask])
        return store


def forward_score_grad(g: Graph, score: float | None = None, alpha=None) -> np.ndarray:
    """Arc posteriors exp(alpha[src] + w + beta[dst] - score).

    All zeros when the graph accepts nothing.
    """
    if score is None or alpha is None:
        score, alpha = G.forward_scores(g)
    if score == -np.inf or g.num_arcs == 0:
        return np.zeros(g.num_arcs)
    beta = G.backward_scores(g)
    a = np.asarray(alpha)[np.asarray(g.src, dtype=np.int64)]
    b = np.asarray(beta)[np.asarray(g.dst, dtype=np.int64)]
    with np.errstate(invalid="ignore"):
        post = np.exp(a + g.weights + b - score)
    return np.nan_to_num(post, nan=0.0)


# gradient checking

@dataclass
class GradCheckReport:
    max_rel_error: float
    analytic: np.ndarray
    numeric: np.ndarray
    tol: float
    checked: np.ndarray = field(repr=False, default=None)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """|a - b| / max(1, |a|, |b|): relative above unit scale, absolute below."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))


def numeric_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5,
                     mask: np.ndarray | None = None) -> np.ndarray:
    """Central differences of scalar ``fn`` at ``x`` (entries outside ``mask`` left at 0)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    sel = np.ones(flat.shape, bool) if mask is None else np.asarray(mask).reshape(-1)
    for i in np.flatnonzero(sel):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def grad_check(f: Callable[[Graph, Tape], Scalar], g: Graph, h: float = 1e-5,
               tol: float = 1e-4) -> GradCheckReport:
    """Compare tape gradients of ``f(g, tape)`` against central differences.

    Only finite-weight arcs are perturbed.
    """
    if not g.grad_enabled:
        raise ValueError("grad_check needs a graph with grad_enabled=True")
    tape = Tape()
    out = f(g, tape)
    analytic = tape.backward(out)[g].copy()
    w = g.weights.copy()
    finite = np.isfinite(w)

    def value(weights):
        return f(g.with_weights(weights), Tape()).value

    numeric = numeric_gradient(value, w, h, finite)
    err = relative_error(analytic[finite], numeric[finite])
    return GradCheckReport(float(err.max()) if err.size else 0.0, analytic, numeric, tol, finite)
