"""Mini-batch training with CTC, selfless CTC or STC, plus evaluation.

One run directory holds ``config.json`` (the resolved configuration),
``metrics.csv`` and ``checkpoint.npz``.  Shuffling is keyed by
``(seed, epoch)`` so a run resumed from its checkpoint replays exactly the
epochs an uninterrupted run would have.
"""

from __future__ import annotations

import csv
import json
import math
import multiprocessing
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Sample
from .losses import PenaltySchedule, ctc_loss, selfless_ctc_loss, stc_loss
from .model import (Adagrad, FrameClassifier, ModelConfig, edit_distance, greedy_decode,
                    load_checkpoint, save_checkpoint, spell)
from .symbols import Alphabet

LOSSES = ("ctc", "selfless", "stc")
METRIC_FIELDS = ("epoch", "split", "loss", "ter", "lambda", "seconds")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    loss: str = "stc"
    label: str = "partial"  # which label field supervises training: partial | full
    epochs: int = 10
    batch_size: int = 16
    lr: float = 0.1
    p0: float = 0.5
    p_max: float = 0.9
    t_half: float = 10000.0
    reduced_alphabet: bool = True
    hidden: int = 0
    context: int = 1
    right_context: int = 0
    channel_filters: int = 0
    shared_filters: bool = False
    channel_head: bool = False
    init_scale: float = 0.1
    words: bool = False
    l_max: int = 20
    vocab_size: int | None = None
    seed: int = 0
    workers: int = 1

    def validate(self) -> "TrainConfig":
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}; choose from {LOSSES}")
        if self.label not in ("partial", "full"):
            raise ConfigError(f"label must be 'partial' or 'full', got {self.label!r}")
        if self.batch_size < 1 or self.epochs < 0 or self.workers < 1:
            raise ConfigError("batch_size and workers must be >= 1 and epochs >= 0")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        try:
            self.schedule()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def schedule(self) -> PenaltySchedule:
        return PenaltySchedule.from_half_life(self.p0, self.p_max, self.t_half)

    @property
    def decode_mode(self) -> str:
        return "ctc" if self.loss == "ctc" else "stc"

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def sample_loss(kind: str, log_probs: np.ndarray, label, penalty: float, alphabet: Alphabet,
                reduced_alphabet: bool = True):
    if kind == "ctc":
        return ctc_loss(log_probs, label, alphabet, reduced_alphabet, check=False)
    if kind == "selfless":
        return selfless_ctc_loss(log_probs, label, alphabet, reduced_alphabet, check=False)
    return stc_loss(log_probs, label, penalty, reduced_alphabet, alphabet, check=False)


def _loss_job(args):
    return sample_loss(*args)


class LossPool:
    """Maps per-sample loss jobs in order; serial when ``workers == 1``."""

    def __init__(self, workers: int = 1):
        self.workers = workers
        self._pool = None
        if workers > 1:
            self._pool = multiprocessing.get_context("fork").Pool(workers)

    def map(self, jobs):
        if self._pool is None:
            return [_loss_job(j) for j in jobs]
        return self._pool.map(_loss_job, jobs, chunksize=max(1, len(jobs) // (4 * self.workers)))

    def close(self):
        if self._pool is not None:
            self._pool.close()
            self._pool.join()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def corpus_ter(model: FrameClassifier, samples: Sequence[Sample], mode: str) -> float:
    """Corpus-level token error rate: total edits over total reference length."""
    edits = 0
    ref_len = 0
    for s in samples:
        hyp = greedy_decode(model.forward(s.frames), mode)
        edits += edit_distance(hyp, s.full_label)
        ref_len += len(s.full_label)
    return edits / max(1, ref_len)


def build_model(cfg: TrainConfig, input_dim: int, vocab_size: int) -> FrameClassifier:
    words = [spell(i) for i in range(vocab_size)] if cfg.words else None
    return FrameClassifier(ModelConfig(input_dim=input_dim, num_classes=vocab_size + 1,
                                       hidden=cfg.hidden, context=cfg.context,
                                       right_context=cfg.right_context,
                                       channel_filters=cfg.channel_filters,
                                       shared_filters=cfg.shared_filters,
                                       channel_head=cfg.channel_head,
                                       encoder_words=words, encoder_l_max=cfg.l_max,
                                       init_scale=cfg.init_scale, seed=cfg.seed))


class Trainer:
    def __init__(self, cfg: TrainConfig, train: Sequence[Sample], valid: Sequence[Sample] = (),
                 run_dir=None):
        self.cfg = cfg.validate()
        if not train:
            raise ConfigError("training corpus is empty")
        self.train = list(train)
        self.valid = list(valid)
        input_dim = self.train[0].frames.shape[1]
        if cfg.vocab_size is None:
            cfg.vocab_size = max(input_dim, 1 + max(t for s in self.train for t in s.full_label))
        self.alphabet = Alphabet(cfg.vocab_size)
        self.schedule = cfg.schedule()
        self.model = build_model(cfg, input_dim, cfg.vocab_size)
        self.optimizer = Adagrad(lr=cfg.lr)
        self.epoch = 0
        self.step = 0
        self.run_dir = Path(run_dir) if run_dir is not None else None

    # persistence

    def _state(self) -> dict:
        return {"epoch": self.epoch, "step": self.step, "train_config": asdict(self.cfg)}

    def save(self) -> None:
        save_checkpoint(self.run_dir / "checkpoint.npz", self.model, self.optimizer, self._state())

    @classmethod
    def resume(cls, run_dir, train, valid=(), epochs: int | None = None) -> "Trainer":
        run_dir = Path(run_dir)
        model, opt, state = load_checkpoint(run_dir / "checkpoint.npz")
        cfg = TrainConfig.from_dict(state["train_config"])
        if epochs is not None:
            cfg.epochs = epochs
        trainer = cls(cfg, train, valid, run_dir)
        trainer.model, trainer.optimizer = model, opt
        trainer.epoch, trainer.step = state["epoch"], state["step"]
        return trainer

    # training

    def penalty(self) -> float:
        return self.schedule.penalty(self.step)

    def labels(self, s: Sample):
        return s.partial_label if self.cfg.label == "partial" else s.full_label

    def train_epoch(self, pool: LossPool) -> dict:
        cfg = self.cfg
        self.epoch += 1
        lam = self.penalty()
        start = time.perf_counter()
        order = np.random.default_rng([cfg.seed, self.epoch]).permutation(len(self.train))
        total, count, skipped = 0.0, 0, 0
        for lo in range(0, len(order), cfg.batch_size):
            batch = [self.train[i] for i in order[lo:lo + cfg.batch_size]]
            penalty = self.penalty()
            outs = [self.model.forward_with_cache(s.frames) for s in batch]
            results = pool.map([(cfg.loss, lp, self.labels(s), penalty, self.alphabet,
                                 cfg.reduced_alphabet) for s, (lp, _) in zip(batch, outs)])
            grads = None
            n = 0
            for (_, cache), (loss, g) in zip(outs, results):
                if not math.isfinite(loss):
                    skipped += 1
                    continue
                total += loss
                n += 1
                sample_grads = self.model.backward(cache, g)
                if grads is None:
                    grads = sample_grads
                else:
                    for k in grads:
                        grads[k] += sample_grads[k]
            count += n
            if grads is not None:
                self.optimizer.step(self.model.params, {k: v / n for k, v in grads.items()})
            self.step += 1
        seconds = time.perf_counter() - start
        return {"epoch": self.epoch, "split": "train", "loss": total / max(1, count),
                "ter": float("nan"), "lambda": lam if cfg.loss == "stc" else float("nan"),
                "seconds": seconds, "skipped": skipped}

    def evaluate(self, samples: Sequence[Sample], split: str = "valid") -> dict:
        start = time.perf_counter()
        lam = self.penalty()
        total, count = 0.0, 0
        for s in samples:
            loss, _ = sample_loss(self.cfg.loss, self.model.forward(s.frames), self.labels(s), lam,
                                  self.alphabet, self.cfg.reduced_alphabet)
            if math.isfinite(loss):
                total += loss
                count += 1
        ter = corpus_ter(self.model, samples, self.cfg.decode_mode)
        return {"epoch": self.epoch, "split": split, "loss": total / max(1, count), "ter": ter,
                "lambda": lam if self.cfg.loss == "stc" else float("nan"),
                "seconds": time.perf_counter() - start}

    def run(self, log=None) -> list[dict]:
        """Train up to ``cfg.epochs`` total epochs; returns the metric rows written."""
        rows = []
        if self.run_dir is not None:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            (self.run_dir / "config.json").write_text(json.dumps(asdict(self.cfg), indent=2, sort_keys=True))
        with LossPool(self.cfg.workers) as pool:
            while self.epoch < self.cfg.epochs:
                epoch_rows = [self.train_epoch(pool)]
                if self.valid:
                    epoch_rows.append(self.evaluate(self.valid))
                if self.run_dir is not None:
                    append_metrics(self.run_dir / "metrics.csv", epoch_rows)
                    self.save()
                if log is not None:
                    for r in epoch_rows:
                        log(format_row(r))
                rows.extend(epoch_rows)
        return rows


def format_row(r: dict) -> str:
    return (f"epoch {r['epoch']:3d} {r['split']:5s} loss {r['loss']:.4f} ter {r['ter']:.4f} "
            f"lambda {r['lambda']:.4f} {r['seconds']:.2f}s")


def append_metrics(path, rows) -> None:
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(METRIC_FIELDS)
        for r in rows:
            w.writerow([r["epoch"], r["split"], repr(float(r["loss"])), repr(float(r["ter"])),
                        repr(float(r["lambda"])), f"{r['seconds']:.6f}"])


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["epoch"] = int(r["epoch"])
        for k in ("loss", "ter", "lambda", "seconds"):
            r[k] = float(r[k])
    return rows
