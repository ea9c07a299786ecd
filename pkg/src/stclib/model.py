"""A small frame classifier, the letter-to-word encoder, Adagrad and greedy decoding.

The classifier maps each input frame (optionally stacked with its left
neighbours) through an optional tanh hidden layer and an affine layer,
optionally through a fixed letter-to-word matrix, and finally through a
per-frame log-softmax.  Gradients are derived by hand.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .semiring import log_softmax

CHECKPOINT_VERSION = 1
BLANK_LETTER = "<blank>"
PAD_LETTER = "<pad>"


class LetterToWordEncoder:
    """Fixed 0/1 matrix turning per-position letter scores into word scores.

    The letter alphabet is ``letters`` followed by a blank letter and a pad
    letter.  Each frame carries ``l_max`` blocks of letter scores; word ``w``
    scores the sum of its letters' scores at their positions, padded with the
    pad letter.  The last output row is blank: the blank letter then pads.
    """

    def __init__(self, letters, words, l_max: int = 20):
        self.letters = tuple(letters)
        if BLANK_LETTER in self.letters or PAD_LETTER in self.letters:
            raise ValueError("letter list must not contain the reserved blank/pad letters")
        self.letter_set = self.letters + (BLANK_LETTER, PAD_LETTER)
        self.words = tuple(words)
        self.l_max = l_max
        index = {c: i for i, c in enumerate(self.letter_set)}
        n = len(self.letter_set)
        E = np.zeros((len(self.words) + 1, n * l_max))
        for row, word in enumerate(self.words):
            if len(word) > l_max:
                raise ValueError(f"word {word!r} is longer than l_max={l_max}")
            for pos in range(l_max):
                letter = word[pos] if pos < len(word) else PAD_LETTER
                if letter not in index:
                    raise ValueError(f"word {word!r} uses unknown letter {letter!r}")
                E[row, pos * n + index[letter]] = 1.0
        E[-1, index[BLANK_LETTER]] = 1.0
        for pos in range(1, l_max):
            E[-1, pos * n + index[PAD_LETTER]] = 1.0
        self.E = E

    @property
    def in_dim(self) -> int:
        return self.E.shape[1]

    @property
    def out_dim(self) -> int:
        return self.E.shape[0]

    def encode(self, letter_scores: np.ndarray) -> np.ndarray:
        letter_scores = np.asarray(letter_scores, dtype=np.float64)
        if letter_scores.shape[-1] != self.in_dim:
            raise ValueError(
                f"letter scores have {letter_scores.shape[-1]} columns, encoder expects {self.in_dim}")
        return letter_scores @ self.E.T

    def backward(self, grad_words: np.ndarray) -> np.ndarray:
        return np.asarray(grad_words) @ self.E


def spell(index: int, letters: str = "abcdefghijklmnopqrstuvwxyz") -> str:
    """Bijective base-26 spelling: 0 -> 'a', 25 -> 'z', 26 -> 'aa', ..."""
    out = []
    index += 1
    while index > 0:
        index, r = divmod(index - 1, len(letters))
        out.append(letters[r])
    return "".join(reversed(out))


def stack_context(x: np.ndarray, left: int, right: int = 0) -> np.ndarray:
    """Concatenate each frame with its ``left`` predecessors, then its
    ``right`` successors (zero padded at the edges)."""
    if left == 0 and right == 0:
        return x
    T, d = x.shape
    out = np.zeros((T, d * (left + right + 1)))
    out[:, :d] = x
    for k in range(1, left + 1):
        out[k:, k * d:(k + 1) * d] = x[:T - k]
    for k in range(1, right + 1):
        j = left + k
        out[:T - k, j * d:(j + 1) * d] = x[k:]
    return out


@dataclass
class ModelConfig:
    input_dim: int
    num_classes: int
    hidden: int = 0
    context: int = 1
    right_context: int = 0
    channel_filters: int = 0
    shared_filters: bool = False
    channel_head: bool = False
    encoder_words: list[str] | None = None
    encoder_l_max: int = 20
    init_scale: float = 0.1
    seed: int = 0


class FrameClassifier:
    """Context window -> optional per-channel filters -> optional tanh layer
    -> affine -> optional word encoder -> log-softmax.

    With ``channel_filters = M`` every input channel gets ``M`` tanh units,
    each looking only at that channel across the context window (a depthwise
    temporal convolution).  Parameters: ``K`` (d x M x window), ``B``
    (d x M).  ``shared_filters`` uses one bank ``K`` (M x window), ``B``
    (M,) for every channel.

    ``channel_head`` replaces the affine output when channel ``k`` carries the
    evidence for token ``k``: token ``k`` scores ``f[t, k] @ v``, blank scores
    ``f[t].sum(0) @ u``, plus a per-class bias ``b``.  The head is shared by
    all tokens, so it is cheap to learn from little data.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        self.encoder = None
        if config.encoder_words is not None:
            letters = sorted({c for w in config.encoder_words for c in w})
            self.encoder = LetterToWordEncoder(letters, config.encoder_words, config.encoder_l_max)
            if self.encoder.out_dim != config.num_classes:
                raise ValueError("encoder output size must equal num_classes (words + blank)")
        rng = np.random.default_rng(config.seed)
        d = config.input_dim
        window = config.context + config.right_context + 1
        feat = d * window
        out = self.encoder.in_dim if self.encoder else config.num_classes
        self.params: dict[str, np.ndarray] = {}
        if config.channel_head and (not config.channel_filters or config.hidden or self.encoder
                                    or config.num_classes != d + 1):
            raise ValueError("channel_head needs channel_filters, no hidden layer or encoder, "
                             "and one input channel per token")
        if config.channel_filters:
            M = config.channel_filters
            bank = (M,) if config.shared_filters else (d, M)
            self.params["K"] = rng.normal(scale=config.init_scale, size=bank + (window,))
            self.params["B"] = np.zeros(bank)
            feat = d * M
        if config.channel_head:
            M = config.channel_filters
            self.params["v"] = rng.normal(scale=config.init_scale, size=M)
            self.params["u"] = rng.normal(scale=config.init_scale, size=M)
            self.params["b"] = np.zeros(config.num_classes)
            return
        if config.hidden:
            self.params["W_h"] = rng.normal(scale=config.init_scale, size=(config.hidden, feat))
            self.params["b_h"] = np.zeros(config.hidden)
            feat = config.hidden
        self.params["W"] = rng.normal(scale=config.init_scale, size=(out, feat))
        self.params["b"] = np.zeros(out)

    @property
    def window(self) -> int:
        return self.config.context + self.config.right_context + 1

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_with_cache(x)[0]

    def forward_with_cache(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ValueError(f"expected frames of shape (T, {self.config.input_dim}), got {x.shape}")
        p = self.params
        T, d = x.shape
        h = stack_context(x, self.config.context, self.config.right_context)
        cache = {}
        if "K" in p:
            u = h.reshape(T, self.window, d).transpose(0, 2, 1)      # T x d x window
            spec = "tdw,mw->tdm" if self.config.shared_filters else "tdw,dmw->tdm"
            f = np.tanh(np.einsum(spec, u, p["K"]) + p["B"])
            cache["u"], cache["f"] = u, f
            if self.config.channel_head:
                z = np.empty((T, d + 1))
                z[:, :d] = f @ p["v"]
                z[:, d] = f.sum(axis=1) @ p["u"]
                out = log_softmax(z + p["b"], axis=1)
                cache["out"] = out
                return out, cache
            h = f.reshape(T, -1)
        cache["hidden_in"] = h
        if "W_h" in p:
            h = np.tanh(h @ p["W_h"].T + p["b_h"])
            cache["hidden"] = h
        cache["h"] = h
        z = h @ p["W"].T + p["b"]
        if self.encoder is not None:
            z = self.encoder.encode(z)
        out = log_softmax(z, axis=1)
        cache["out"] = out
        return out, cache

    def backward(self, cache, grad_log_probs: np.ndarray) -> dict[str, np.ndarray]:
        out = cache["out"]
        g = np.asarray(grad_log_probs, dtype=np.float64)
        gz = g - np.exp(out) * g.sum(axis=1, keepdims=True)
        if self.encoder is not None:
            gz = self.encoder.backward(gz)
        p = self.params
        if self.config.channel_head:
            f = cache["f"]
            d = f.shape[1]
            grads = {"b": gz.sum(axis=0), "v": np.einsum("tk,tkm->m", gz[:, :d], f),
                     "u": gz[:, d] @ f.sum(axis=1)}
            return self._filter_grads(grads, cache, gz[:, :d, None] * p["v"] + gz[:, d, None, None] * p["u"])
        grads = {"W": gz.T @ cache["h"], "b": gz.sum(axis=0)}
        gh = gz @ p["W"]
        if "W_h" in p:
            hidden = cache["hidden"]
            gh = gh * (1.0 - hidden ** 2)
            grads["W_h"] = gh.T @ cache["hidden_in"]
            grads["b_h"] = gh.sum(axis=0)
            gh = gh @ p["W_h"]
        if "K" in p:
            self._filter_grads(grads, cache, gh.reshape(cache["f"].shape))
        return grads

    def _filter_grads(self, grads, cache, grad_f):
        gf = grad_f * (1.0 - cache["f"] ** 2)
        if self.config.shared_filters:
            grads["K"] = np.einsum("tdm,tdw->mw", gf, cache["u"])
            grads["B"] = gf.sum(axis=(0, 1))
        else:
            grads["K"] = np.einsum("tdm,tdw->dmw", gf, cache["u"])
            grads["B"] = gf.sum(axis=0)
        return grads


@dataclass
class Adagrad:
    """``acc += g**2; theta -= lr * g / sqrt(acc + eps)``."""

    lr: float = 0.1
    eps: float = 1e-10
    accumulators: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        for name, g in grads.items():
            acc = self.accumulators.get(name)
            if acc is None:
                acc = np.zeros_like(params[name])
                self.accumulators[name] = acc
            acc += g * g
            params[name] -= self.lr * g / np.sqrt(acc + self.eps)
        return params


def greedy_decode(log_probs: np.ndarray, mode: str = "ctc", blank: int | None = None) -> list[int]:
    """Per-frame argmax (lowest id wins ties), then collapse.

    ``ctc`` merges runs of equal symbols and drops blanks; ``stc`` only drops
    blanks.
    """
    if mode not in ("ctc", "stc"):
        raise ValueError(f"unknown decode mode {mode!r}")
    log_probs = np.asarray(log_probs)
    if blank is None:
        blank = log_probs.shape[1] - 1
    best = np.argmax(log_probs, axis=1).tolist()
    return collapse(best, blank, mode)


def collapse(path, blank: int, mode: str = "ctc") -> list[int]:
    out = []
    prev = None
    for p in path:
        if p != blank and (mode == "stc" or p != prev):
            out.append(p)
        prev = p
    return out


def edit_distance(a, b) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def token_error_rate(hyp, ref) -> float:
    return edit_distance(hyp, ref) / max(1, len(ref))


# checkpoints

def save_checkpoint(path, model: FrameClassifier, optimizer: Adagrad | None = None,
                    state: dict | None = None) -> None:
    """Write an ``.npz`` with ``format_version``, a JSON ``meta`` string,
    ``param/<name>`` and ``adagrad/<name>`` arrays."""
    meta = {"model": asdict(model.config), "state": state or {},
            "optimizer": {"lr": optimizer.lr, "eps": optimizer.eps} if optimizer else None}
    arrays = {"format_version": np.array(CHECKPOINT_VERSION),
              "meta": np.array(json.dumps(meta, sort_keys=True))}
    for name in sorted(model.params):
        arrays[f"param/{name}"] = model.params[name]
    if optimizer is not None:
        for name in sorted(optimizer.accumulators):
            arrays[f"adagrad/{name}"] = optimizer.accumulators[name]
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Returns ``(model, optimizer or None, state dict)``."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        meta = json.loads(str(data["meta"]))
        model = FrameClassifier(ModelConfig(**meta["model"]))
        for key in data.files:
            if key.startswith("param/"):
                model.params[key[6:]] = data[key].copy()
        optimizer = None
        if meta["optimizer"] is not None:
            optimizer = Adagrad(**meta["optimizer"])
            for key in data.files:
                if key.startswith("adagrad/"):
                    optimizer.accumulators[key[8:]] = data[key].copy()
    return model, optimizer, meta["state"]
