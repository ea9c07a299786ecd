"""Symbol ids for a token vocabulary plus the reserved blank/star/complement ids.

Vocabulary tokens are ``0 .. size-1``.  Reserved ids sit above them::

    blank            = size
    star             = size + 1
    complement of t  = size + 2 + t

Epsilon is ``-1`` (see :data:`stclib.graph.EPSILON`).  In a ``T x K`` matrix
of frame scores, column ``t`` is token ``t`` and column ``size`` is blank,
so ``K = size + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

from .graph import EPSILON, AlphabetError


@dataclass(frozen=True)
class Alphabet:
    size: int
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("alphabet needs at least one token")
        if self.names is not None and len(self.names) != self.size:
            raise ValueError(f"{len(self.names)} names for {self.size} tokens")

    @classmethod
    def from_names(cls, names) -> "Alphabet":
        return cls(len(names), tuple(names))

    @property
    def blank(self) -> int:
        return self.size

    @property
    def star(self) -> int:
        return self.size + 1

    @property
    def num_classes(self) -> int:
        """Columns in a frame-score matrix: tokens plus blank."""
        return self.size + 1

    def complement(self, token: int) -> int:
        self.check_token(token)
        return self.size + 2 + token

    def is_token(self, label: int) -> bool:
        return 0 <= label < self.size

    def is_complement(self, label: int) -> bool:
        return self.size + 2 <= label < 2 * self.size + 2

    def complemented_token(self, label: int) -> int:
        if not self.is_complement(label):
            raise AlphabetError(f"{label} is not a complement symbol")
        return label - self.size - 2

    def check_token(self, token: int) -> None:
        if not (0 <= token < self.size):
            raise AlphabetError(f"token {token} is outside the alphabet of size {self.size}")

    def check_sequence(self, tokens) -> None:
        for t in tokens:
            self.check_token(t)

    def name(self, label: int) -> str:
        if label == EPSILON:
            return "ε"
        if label == self.blank:
            return "<b>"
        if label == self.star:
            return "<s>"
        if self.is_complement(label):
            return "<s>\\" + self.name(self.complemented_token(label))
        if self.is_token(label):
            return self.names[label] if self.names else str(label)
        raise AlphabetError(f"unknown label {label}")

    def encode(self, names) -> list[int]:
        if self.names is None:
            return [int(n) for n in names]
        lookup = {n: i for i, n in enumerate(self.names)}
        try:
            return [lookup[n] for n in names]
        except KeyError as exc:
            raise AlphabetError(f"unknown token {exc.args[0]!r}") from None
