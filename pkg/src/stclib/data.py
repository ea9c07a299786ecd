"""Synthetic unsegmented sequences and weak-label corruption.

Each synthetic token spans a random number of frames whose features are a
one-hot vector for the token plus Gaussian noise.  Weak labels are made by
deleting tokens from the full label (order is preserved); samples whose
partial label ends up empty are pruned.

Randomness is keyed, not sequential: a sample's frames depend on
``(seed, sample index)`` and its drop decisions on ``(seed, sample id)``, so
results do not depend on iteration order or on which other samples exist.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

STRATEGIES = ("uniform", "per-sample-split", "per-token-split")


class CorpusFormatError(ValueError):
    pass


@dataclass
class Sample:
    id: str
    frames: np.ndarray
    full_label: list[int]
    partial_label: list[int]

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (self.id == other.id and self.full_label == other.full_label
                and self.partial_label == other.partial_label
                and self.frames.shape == other.frames.shape
                and bool(np.array_equal(self.frames, other.frames)))


def generate_synthetic(vocab_size: int, num_samples: int, len_range=(2, 6),
                       frames_per_token=(1, 3), noise: float = 0.3, seed: int = 0,
                       id_prefix: str = "s", allow_repeats: bool = False) -> list[Sample]:
    """Samples with ``partial_label == full_label``.

    Label lengths and per-token frame counts are uniform over the inclusive
    ranges.  Unless ``allow_repeats``, a token never directly follows itself:
    with frame-level one-hot features two adjacent equal tokens would be
    indistinguishable from one long token.
    """
    lo, hi = len_range
    flo, fhi = frames_per_token
    if vocab_size < 2:
        raise ValueError("vocab_size must be at least 2")
    if not (1 <= lo <= hi):
        raise ValueError(f"bad label length range {len_range}")
    if not (1 <= flo <= fhi):
        raise ValueError(f"bad frames-per-token range {frames_per_token}")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    eye = np.eye(vocab_size)
    samples = []
    for i in range(num_samples):
        rng = np.random.default_rng([seed, i])
        U = int(rng.integers(lo, hi + 1))
        label: list[int] = []
        for _ in range(U):
            if allow_repeats or not label:
                tok = int(rng.integers(vocab_size))
            else:
                tok = int(rng.integers(vocab_size - 1))
                tok += tok >= label[-1]
            label.append(tok)
        counts = rng.integers(flo, fhi + 1, size=U)
        frames = eye[np.repeat(label, counts)]
        if noise > 0:
            frames = frames + rng.normal(0.0, noise, size=frames.shape)
        samples.append(Sample(f"{id_prefix}{i:06d}", frames, label, list(label)))
    return samples


@dataclass(frozen=True)
class DropConfig:
    strategy: str = "uniform"
    p_drop: float | tuple[float, ...] = 0.0
    num_splits: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        ps = self.probabilities
        if any(not (0.0 <= p <= 1.0) for p in ps):
            raise ValueError(f"pDrop values must lie in [0, 1], got {ps}")
        if self.strategy == "uniform" and len(ps) != 1:
            raise ValueError("uniform dropping takes a single pDrop")
        if self.strategy != "uniform" and len(ps) != self.num_splits:
            raise ValueError(f"{self.num_splits} splits need {self.num_splits} pDrop values, got {len(ps)}")

    @property
    def probabilities(self) -> tuple[float, ...]:
        if isinstance(self.p_drop, (int, float)):
            return (float(self.p_drop),)
        return tuple(float(p) for p in self.p_drop)


def _key(sample_id: str) -> int:
    return zlib.crc32(sample_id.encode("utf-8"))


def apply_drop(samples: Sequence[Sample], cfg: DropConfig, prune: bool = True) -> list[Sample]:
    """Partial labels by independent per-token deletion.

    ``uniform``: every token dropped with ``p_drop``.  ``per-sample-split``:
    each sample falls in one of ``num_splits`` random splits and uses that
    split's probability.  ``per-token-split``: the vocabulary is randomly
    partitioned and each token uses its part's probability.
    """
    ps = cfg.probabilities
    token_split: dict[int, int] = {}
    out = []
    for s in samples:
        key = _key(s.id)
        if cfg.strategy == "per-sample-split":
            split = int(np.random.default_rng([cfg.seed, 1, key]).integers(cfg.num_splits))
            probs = [ps[split]] * len(s.full_label)
        elif cfg.strategy == "per-token-split":
            probs = []
            for t in s.full_label:
                if t not in token_split:
                    token_split[t] = int(np.random.default_rng([cfg.seed, 2, t]).integers(cfg.num_splits))
                probs.append(ps[token_split[t]])
        else:
            probs = [ps[0]] * len(s.full_label)
        u = np.random.default_rng([cfg.seed, 0, key]).random(len(s.full_label))
        partial = [t for t, ui, p in zip(s.full_label, u, probs) if ui >= p]
        if prune and not partial:
            continue
        out.append(replace(s, partial_label=partial))
    return out


def retention_histogram(samples: Sequence[Sample], bins: int = 40) -> list[tuple[float, float, int]]:
    """Counts of per-sample retained fraction (partial/full length) in equal bins
    over [0, 1]; a fraction of exactly 1 lands in the last bin."""
    counts = [0] * bins
    for s in samples:
        if not s.full_label:
            continue
        frac = len(s.partial_label) / len(s.full_label)
        counts[min(int(frac * bins), bins - 1)] += 1
    return [(i / bins, (i + 1) / bins, c) for i, c in enumerate(counts)]


def histogram_csv(hist) -> str:
    lines = ["bin_start,bin_end,count"]
    lines += [f"{lo:.4f},{hi:.4f},{c}" for lo, hi, c in hist]
    return "\n".join(lines) + "\n"


# corpus files: one JSON object per line

def sample_to_json(s: Sample) -> str:
    return json.dumps({"id": s.id, "frames": s.frames.tolist(), "full_label": s.full_label,
                       "partial_label": s.partial_label}, separators=(",", ":"))


def write_corpus(samples: Sequence[Sample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(sample_to_json(s))
            fh.write("\n")


def read_corpus(path) -> list[Sample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                frames = np.array(rec["frames"], dtype=np.float64)
                if frames.ndim != 2:
                    if frames.size == 0:
                        frames = frames.reshape(0, 0)
                    else:
                        raise ValueError("frames must be a 2-D list")
                full = [int(t) for t in rec["full_label"]]
                partial = [int(t) for t in rec["partial_label"]]
                samples.append(Sample(str(rec["id"]), frames, full, partial))
            except (ValueError, KeyError, TypeError) as exc:
                raise CorpusFormatError(f"{Path(path).name}, line {lineno}: {exc}") from None
    return samples
