"""Emission and label graphs, and the CTC / selfless-CTC / STC losses built from them.

Every loss follows the same recipe: build a label graph for the target,
build an emission graph from the frame log-probabilities, compose them into
an alignment lattice, and take the negated forward score.  Gradients with
respect to the ``T x K`` log-probability matrix come from the tape and are
scattered back through the star/complement log-sum-exps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import semiring
from .autograd import Tape
from .graph import AlphabetError, Graph
from .symbols import Alphabet


class EmissionContractError(ValueError):
    """Frame scores are not a valid log-distribution over tokens and blank."""


# emission graphs

def symbol_weights(log_probs: np.ndarray, symbols, alphabet: Alphabet) -> np.ndarray:
    """Per-frame weights for each symbol: a column of ``log_probs`` for tokens
    and blank, log-sum-exp over tokens for star, and over all tokens but one
    for a complement.  Blank never contributes to a star."""
    V = alphabet.size
    tokens = log_probs[:, :V]
    cols = []
    star = None
    for s in symbols:
        if 0 <= s <= V:
            cols.append(log_probs[:, s])
        elif s == alphabet.star:
            if star is None:
                star = semiring.logsumexp(tokens, axis=1)
            cols.append(star)
        elif alphabet.is_complement(s):
            masked = tokens.copy()
            masked[:, alphabet.complemented_token(s)] = -np.inf
            cols.append(semiring.logsumexp(masked, axis=1))
        else:
            raise AlphabetError(f"symbol {s} cannot appear in an emission graph")
    return np.stack(cols, axis=1) if cols else np.zeros((log_probs.shape[0], 0))


@dataclass
class EmissionGraph:
    """Linear chain with ``T + 1`` states and one arc per symbol per frame.

    Arcs are laid out frame-major: arc ``t * len(symbols) + j`` leaves state
    ``t`` with label ``symbols[j]`` and weight ``weights[t, j]``.
    """

    graph: Graph
    log_probs: np.ndarray
    alphabet: Alphabet
    symbols: tuple[int, ...]
    weights: np.ndarray

    @property
    def num_frames(self) -> int:
        return self.log_probs.shape[0]

    def column(self, symbol: int) -> int:
        return self.symbols.index(symbol)

    def scatter(self, arc_grads: np.ndarray) -> np.ndarray:
        """Map arc gradients to a gradient over the ``T x K`` log-probability matrix.

        Star and complement arcs pass their gradient to the underlying token
        scores in proportion to each token's share of the summed probability.
        """
        T, n = self.weights.shape
        V = self.alphabet.size
        G = np.asarray(arc_grads, dtype=np.float64).reshape(T, n)
        grad = np.zeros_like(self.log_probs)
        tokens = self.log_probs[:, :V]
        for j, s in enumerate(self.symbols):
            gj = G[:, j]
            if not gj.any():
                continue
            if s <= V:
                grad[:, s] += gj
                continue
            w = self.weights[:, j:j + 1]
            finite = np.isfinite(w)
            with np.errstate(invalid="ignore"):
                resp = np.where(finite, np.exp(tokens - np.where(finite, w, 0.0)), 0.0)
            if s != self.alphabet.star:
                resp[:, self.alphabet.complemented_token(s)] = 0.0
            grad[:, :V] += gj[:, None] * resp
        return grad


def check_emissions(log_probs: np.ndarray, alphabet: Alphabet | None = None,
                    tol: float = 1e-6) -> np.ndarray:
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if log_probs.ndim != 2:
        raise EmissionContractError(f"expected a T x K matrix, got shape {log_probs.shape}")
    if log_probs.shape[0] == 0:
        raise EmissionContractError("emissions have no frames (T = 0)")
    if alphabet is not None and log_probs.shape[1] != alphabet.num_classes:
        raise EmissionContractError(
            f"expected {alphabet.num_classes} columns (tokens + blank), got {log_probs.shape[1]}")
    mass = np.exp(semiring.logsumexp(log_probs, axis=1))
    bad = np.flatnonzero(np.abs(mass - 1.0) > tol)
    if bad.size:
        t = int(bad[0])
        raise EmissionContractError(f"frame {t} has total probability {mass[t]!r}, not 1")
    return log_probs


def build_emission(log_probs: np.ndarray, alphabet: Alphabet | None = None,
                   symbols=None, check: bool = True) -> EmissionGraph:
    """Emission graph over ``symbols`` (default: every token, then blank)."""
    if check:
        log_probs = check_emissions(log_probs, alphabet)
    else:
        log_probs = np.asarray(log_probs, dtype=np.float64)
    if alphabet is None:
        alphabet = Alphabet(log_probs.shape[1] - 1)
    if symbols is None:
        symbols = range(alphabet.num_classes)
    symbols = tuple(int(s) for s in symbols)
    weights = symbol_weights(log_probs, symbols, alphabet)
    return EmissionGraph(_chain(weights, symbols, alphabet), log_probs, alphabet, symbols, weights)


def _chain(weights: np.ndarray, symbols: tuple[int, ...], alphabet: Alphabet) -> Graph:
    T = weights.shape[0]
    g = Graph(grad_enabled=True, isymbols=alphabet)
    for t in range(T + 1):
        g.add_state(start=t == 0, final=t == T)
    add_arc = g.add_arc
    rows = weights.tolist()
    for t in range(T):
        row = rows[t]
        for j, s in enumerate(symbols):
            add_arc(t, t + 1, s, s, row[j])
    return g


def augment_stars(e: EmissionGraph, complements=()) -> EmissionGraph:
    """Add a star arc and one complement arc per requested token to every frame."""
    alphabet = e.alphabet
    extra = []
    if alphabet.star not in e.symbols:
        extra.append(alphabet.star)
    for t in complements:
        c = alphabet.complement(t)
        if c not in e.symbols and c not in extra:
            extra.append(c)
    symbols = e.symbols + tuple(extra)
    weights = np.concatenate([e.weights, symbol_weights(e.log_probs, extra, alphabet)], axis=1)
    return EmissionGraph(_chain(weights, symbols, alphabet), e.log_probs, alphabet, symbols, weights)


# label graphs

def _label_states(g: Graph, num: int) -> None:
    for s in range(num):
        g.add_state(start=s == 0, final=s >= num - 2)


def build_ctc_label(y, alphabet: Alphabet) -> Graph:
    """Acceptor for every frame sequence that collapses to ``y`` under CTC rules.

    States alternate blank (even) and token (odd); token states self-loop,
    and a token state may be entered directly from the previous token state
    only when the two tokens differ.  Empty ``y`` gives a blank-only acceptor.
    """
    y = list(y)
    alphabet.check_sequence(y)
    blank = alphabet.blank
    S = 2 * len(y) + 1
    g = Graph(isymbols=alphabet)
    _label_states(g, S)
    for l in range(S):
        label = y[(l - 1) // 2] if l % 2 else blank
        g.add_arc(l, l, label)
        if l > 0:
            g.add_arc(l - 1, l, label)
        if l % 2 and l > 1 and label != y[(l - 1) // 2 - 1]:
            g.add_arc(l - 2, l, label)
    return g


def build_selfless_ctc_label(y, alphabet: Alphabet) -> Graph:
    """CTC label graph without token self-loops: each token takes exactly one frame."""
    y = list(y)
    alphabet.check_sequence(y)
    blank = alphabet.blank
    S = 2 * len(y) + 1
    g = Graph(isymbols=alphabet)
    _label_states(g, S)
    for l in range(S):
        label = y[(l - 1) // 2] if l % 2 else blank
        if l % 2 == 0:
            g.add_arc(l, l, label)
        if l > 0:
            g.add_arc(l - 1, l, label)
        if l % 2 and l > 1:
            g.add_arc(l - 2, l, label)
    return g


def build_stc_label(partial, alphabet: Alphabet, penalty: float) -> Graph:
    """Selfless-CTC graph for ``partial`` plus weighted star arcs.

    Blank state ``2i`` (the gap before token ``i``) gets a self-loop on the
    complement of token ``i``; the gap after the last token uses the plain
    star.  The same star symbol also links token state ``2i - 1`` into that
    gap.  Every star arc costs ``penalty``; with ``penalty = -inf`` the star
    arcs are left out and the graph is the selfless-CTC graph.
    """
    partial = list(partial)
    if penalty > 0 or math.isnan(penalty):
        raise ValueError(f"token insertion penalty must be <= 0, got {penalty}")
    g = build_selfless_ctc_label(partial, alphabet)
    if penalty == -math.inf:
        return g
    U = len(partial)
    for i in range(U + 1):
        star = alphabet.complement(partial[i]) if i < U else alphabet.star
        gap = 2 * i
        g.add_arc(gap, gap, star, star, penalty)
        if i > 0:
            g.add_arc(gap - 1, gap, star, star, penalty)
    return g


# losses

def lattice_loss(label: Graph, emission: EmissionGraph) -> tuple[float, np.ndarray]:
    """Negated forward score of ``label o emission`` and its gradient w.r.t. log-probs."""
    tape = Tape()
    lattice = tape.compose(label, emission.graph)
    loss = tape.negate(tape.forward_score(lattice))
    if loss.value == math.inf:
        return math.inf, np.zeros_like(emission.log_probs)
    arc_grads = tape.backward(loss)[emission.graph]
    return loss.value, emission.scatter(arc_grads)


def _prepare(log_probs, check: bool) -> np.ndarray:
    if check:
        return check_emissions(log_probs)
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if log_probs.ndim != 2 or log_probs.shape[0] == 0:
        raise EmissionContractError(f"expected a non-empty T x K matrix, got shape {log_probs.shape}")
    return log_probs


def _alphabet_for(log_probs: np.ndarray, alphabet: Alphabet | None) -> Alphabet:
    return alphabet if alphabet is not None else Alphabet(log_probs.shape[1] - 1)


def ctc_loss(log_probs, y, alphabet: Alphabet | None = None,
             reduced_alphabet: bool = True, check: bool = True) -> tuple[float, np.ndarray]:
    """CTC loss ``-log P(y | x)`` and its gradient over the ``T x K`` log-probs.

    With ``reduced_alphabet`` the emission graph only carries the tokens of
    ``y`` and blank; other tokens get zero gradient either way.  ``check=False``
    skips the row-normalization contract (used by finite-difference checks).
    """
    log_probs = _prepare(log_probs, check)
    alphabet = _alphabet_for(log_probs, alphabet)
    label = build_ctc_label(y, alphabet)
    symbols = sorted(set(y)) + [alphabet.blank] if reduced_alphabet else None
    return lattice_loss(label, build_emission(log_probs, alphabet, symbols, check=False))


def selfless_ctc_loss(log_probs, y, alphabet: Alphabet | None = None,
                      reduced_alphabet: bool = True, check: bool = True) -> tuple[float, np.ndarray]:
    log_probs = _prepare(log_probs, check)
    alphabet = _alphabet_for(log_probs, alphabet)
    label = build_selfless_ctc_label(y, alphabet)
    symbols = sorted(set(y)) + [alphabet.blank] if reduced_alphabet else None
    return lattice_loss(label, build_emission(log_probs, alphabet, symbols, check=False))


def stc_emission(log_probs: np.ndarray, partial, alphabet: Alphabet,
                 reduced_alphabet: bool = True) -> EmissionGraph:
    """Emission graph with the star and the complements that ``partial`` needs.

    The reduced form keeps only the partial label's tokens, blank, star and
    complements; star weights still sum over the whole vocabulary.
    """
    needed = sorted(set(partial))
    if reduced_alphabet:
        base = build_emission(log_probs, alphabet, needed + [alphabet.blank], check=False)
    else:
        base = build_emission(log_probs, alphabet, check=False)
    return augment_stars(base, needed)


def stc_loss(log_probs, partial, penalty: float, reduced_alphabet: bool = True,
             alphabet: Alphabet | None = None, check: bool = True) -> tuple[float, np.ndarray]:
    """STC loss for a partial label and its gradient over the ``T x K`` log-probs.

    ``penalty`` is the (non-positive) log-weight paid for every token that
    the alignment inserts beyond the partial label.  Returns ``inf`` with a
    zero gradient when no alignment exists (more label tokens than frames).
    """
    log_probs = _prepare(log_probs, check)
    alphabet = _alphabet_for(log_probs, alphabet)
    alphabet.check_sequence(partial)
    label = build_stc_label(partial, alphabet, penalty)
    return lattice_loss(label, stc_emission(log_probs, partial, alphabet, reduced_alphabet))


# token insertion penalty schedule

@dataclass(frozen=True)
class PenaltySchedule:
    """``p_t = p_max + (p0 - p_max) * exp(-t / tau)`` and penalty ``ln p_t``."""

    p0: float
    p_max: float
    tau: float

    def __post_init__(self):
        for name in ("p0", "p_max"):
            p = getattr(self, name)
            if not (0.0 < p <= 1.0):
                raise ValueError(f"{name} must be in (0, 1], got {p}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")

    @classmethod
    def from_half_life(cls, p0: float, p_max: float, t_half: float) -> "PenaltySchedule":
        if not t_half > 0:
            raise ValueError(f"half-life must be positive, got {t_half}")
        return cls(p0, p_max, t_half / math.log(2.0))

    @property
    def half_life(self) -> float:
        return self.tau * math.log(2.0)

    def probability(self, step: float) -> float:
        p = self.p_max + (self.p0 - self.p_max) * math.exp(-step / self.tau)
        # rounding can overshoot the band by an ulp (e.g. 0.3 + (0.9 - 0.3))
        return min(max(p, min(self.p0, self.p_max)), max(self.p0, self.p_max))

    def penalty(self, step: float) -> float:
        return math.log(self.probability(step))
