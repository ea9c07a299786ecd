"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` or ``python tests/test_acceptance.py``.
The verdict lines are repeated in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from stclib.autograd import grad_check, numeric_gradient, relative_error
from stclib.data import DropConfig, apply_drop, generate_synthetic
from stclib.graph import Graph, compose, forward_score
from stclib.losses import (PenaltySchedule, build_emission, build_stc_label, ctc_loss, lattice_loss,
                           selfless_ctc_loss, stc_emission, stc_loss)
from stclib.model import FrameClassifier, LetterToWordEncoder, ModelConfig
from stclib.semiring import log_softmax
from stclib.symbols import Alphabet
from stclib.train import TrainConfig, Trainer

import oracles
from acceptance_log import record
from lattice_helpers import expand_stars, lattice_alignments


# 1

def test_criterion_01_wfst_ctc_matches_dp():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst_loss = worst_grad = 0.0
    n = 0
    while n < 200:
        T, V = int(rng.integers(1, 11)), int(rng.integers(1, 6))
        y = rng.integers(0, V, size=int(rng.integers(0, 6))).tolist()
        lp = oracles.random_log_probs(rng, T, V + 1)
        loss, grad = ctc_loss(lp, y)
        ref_loss, ref_grad = oracles.ctc_dp(lp, y)
        if ref_loss == math.inf:
            assert loss == math.inf
            continue
        worst_loss = max(worst_loss, abs(loss - ref_loss))
        worst_grad = max(worst_grad, float(np.abs(grad - ref_grad).max()))
        n += 1
    elapsed = time.perf_counter() - start
    ok = worst_loss <= 1e-6 and worst_grad <= 1e-6 and elapsed < 10
    record(1, "WFST CTC equals DP CTC on 200 instances", ok,
           f"max loss diff {worst_loss:.1e}, max grad diff {worst_grad:.1e}, {elapsed:.1f}s")
    assert ok


# 2

def test_criterion_02_stc_matches_brute_force():
    rng = np.random.default_rng(202)
    start = time.perf_counter()
    worst = 0.0
    duplicates = 0
    for i in range(100):
        T, V = int(rng.integers(1, 7)), int(rng.integers(1, 4))
        partial = rng.integers(0, V, size=int(rng.integers(0, 4))).tolist()
        lam = (0.0, -0.5, -2.0)[i % 3]
        lp = oracles.random_log_probs(rng, T, V + 1)
        got = stc_loss(lp, partial, lam)[0]
        expected = oracles.brute_stc(lp, partial, lam)
        if expected == math.inf:
            assert got == math.inf
        else:
            worst = max(worst, abs(got - expected) / max(1.0, abs(expected)))
        if T <= 4:
            found = lattice_alignments(partial, lp, lam)
            duplicates += len(found) - len(set(found))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and duplicates == 0 and elapsed < 30
    record(2, "STC equals brute-force enumeration, no duplicate alignments", ok,
           f"max rel diff {worst:.1e}, {duplicates} duplicates, {elapsed:.1f}s")
    assert ok


# 3

def neg_forward(g, tape):
    return tape.negate(tape.forward_score(g))


def test_criterion_03_gradient_checks():
    rng = np.random.default_rng(303)
    errors = {}

    worst = 0.0
    for _ in range(30):
        g = oracles.random_dag(rng, max_states=6, grad_enabled=True)
        if forward_score(g) == -math.inf:
            continue
        worst = max(worst, grad_check(neg_forward, g, h=1e-5).max_rel_error)
    errors["forwardScore"] = worst

    worst = 0.0
    checked = 0
    while checked < 20:
        g1 = oracles.random_dag(rng, max_states=5, labels=(0, 1), eps_prob=0.2, grad_enabled=True)
        g2 = oracles.random_dag(rng, max_states=5, labels=(0, 1), eps_prob=0.2)
        if forward_score(compose(g1, g2)) == -math.inf:
            continue
        worst = max(worst, grad_check(lambda g, tape: neg_forward(tape.compose(g, g2), tape), g1).max_rel_error)
        checked += 1
    errors["compose"] = worst

    def loss_check(fn, lp):
        _, grad = fn(lp)
        num = numeric_gradient(lambda x: fn(x)[0], lp, h=1e-5)
        return float(relative_error(grad, num).max())

    for reduced in (True, False):
        lp = oracles.random_log_probs(rng, 6, 5)
        errors[f"ctcLoss reduced={reduced}"] = loss_check(
            lambda x: ctc_loss(x, [0, 2, 2], reduced_alphabet=reduced, check=False), lp)
        errors[f"stcLoss reduced={reduced}"] = max(
            loss_check(lambda x: stc_loss(x, [1, 3], lam, reduced, check=False), lp) for lam in (0.0, -0.7))

    words = ["ab", "ba", "b", "aab"]
    m = FrameClassifier(ModelConfig(input_dim=3, num_classes=5, hidden=4, encoder_words=words,
                                    encoder_l_max=3, init_scale=0.5, seed=5))
    x = rng.normal(size=(4, 3))
    out, cache = m.forward_with_cache(x)
    _, g = stc_loss(out, [2], -0.5)
    grads = m.backward(cache, g)
    worst = 0.0
    for name, p in m.params.items():
        def f(v, name=name):
            saved = m.params[name]
            m.params[name] = v
            try:
                return stc_loss(m.forward(x), [2], -0.5, check=False)[0]
            finally:
                m.params[name] = saved
        worst = max(worst, float(relative_error(grads[name], numeric_gradient(f, p, h=1e-5)).max()))
    errors["end-to-end via word encoder"] = worst

    ok = all(e <= 1e-4 for e in errors.values())
    record(3, "autograd matches central differences (h=1e-5)", ok,
           ", ".join(f"{k} {v:.1e}" for k, v in errors.items()))
    assert ok


# 4

def test_criterion_04_star_collapse():
    rng = np.random.default_rng(404)
    worst_score = worst_grad = 0.0
    for _ in range(60):
        T, V = int(rng.integers(1, 7)), int(rng.integers(1, 6))
        alphabet = Alphabet(V)
        partial = rng.integers(0, V, size=int(rng.integers(0, 4))).tolist()
        lam = float(rng.choice([0.0, -0.5, -2.0]))
        lp = oracles.random_log_probs(rng, T, V + 1)
        label = build_stc_label(partial, alphabet, lam)
        collapsed = lattice_loss(label, stc_emission(lp, partial, alphabet, reduced_alphabet=False))
        expanded = lattice_loss(expand_stars(label, alphabet), build_emission(lp, alphabet))
        if expanded[0] == math.inf:
            assert collapsed[0] == math.inf
            continue
        worst_score = max(worst_score, abs(collapsed[0] - expanded[0]))
        worst_grad = max(worst_grad, float(np.abs(collapsed[1] - expanded[1]).max()))
    # the single-arc identity: star weight is the log-sum-exp of the token weights
    lp = oracles.random_log_probs(rng, 1, 5)
    alphabet = Alphabet(4)
    star = Graph(isymbols=alphabet)
    star.add_state(start=True)
    star.add_state(final=True)
    star.add_arc(0, 1, alphabet.star)
    w5 = -lattice_loss(star, stc_emission(lp, [], alphabet, reduced_alphabet=False))[0]
    identity = abs(w5 - oracles.log_sum(lp[0, :4]))
    ok = worst_score <= 1e-9 and identity <= 1e-9 and worst_grad <= 1e-6
    record(4, "star-collapsed graphs equal their expansions", ok,
           f"score diff {worst_score:.1e}, grad diff {worst_grad:.1e}, w5 identity {identity:.1e}")
    assert ok


# 5

def test_criterion_05_reduction_identities():
    rng = np.random.default_rng(505)
    worst_selfless = worst_empty = 0.0
    for _ in range(60):
        T, V = int(rng.integers(1, 9)), int(rng.integers(1, 6))
        y = rng.integers(0, V, size=int(rng.integers(1, 5))).tolist()
        lp = oracles.random_log_probs(rng, T, V + 1)
        a, b = stc_loss(lp, y, -math.inf)[0], selfless_ctc_loss(lp, y)[0]
        if b == math.inf:
            assert a == math.inf
        else:
            worst_selfless = max(worst_selfless, abs(a - b))
        worst_empty = max(worst_empty, abs(stc_loss(lp, [], 0.0)[0]))
    ok = worst_selfless <= 1e-9 and worst_empty <= 1e-9
    record(5, "STC(lambda=-inf) is selfless CTC; empty label at lambda=0 costs 0", ok,
           f"selfless diff {worst_selfless:.1e}, empty-label loss {worst_empty:.1e}")
    assert ok


# 6

def test_criterion_06_reduced_alphabet():
    rng = np.random.default_rng(606)
    worst_loss = worst_grad = 0.0
    for V in (2, 10, 100, 1000, 5000):
        for _ in range(3 if V < 1000 else 1):
            T = int(rng.integers(3, 12))
            partial = rng.choice(V, size=min(int(rng.integers(1, 6)), V), replace=V < 5).tolist()
            lp = oracles.random_log_probs(rng, T, V + 1)
            full = stc_loss(lp, partial, -0.5, reduced_alphabet=False)
            red = stc_loss(lp, partial, -0.5, reduced_alphabet=True)
            if full[0] == math.inf:
                assert red[0] == math.inf
                continue
            worst_loss = max(worst_loss, abs(full[0] - red[0]))
            worst_grad = max(worst_grad, float(np.abs(full[1] - red[1]).max()))

    V, T = 5000, 30
    lp = log_softmax(rng.normal(size=(T, V + 1)), axis=1)
    partial = rng.choice(V, size=5, replace=False).tolist()

    def best_time(reduced, repeats):
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            stc_loss(lp, partial, -0.5, reduced_alphabet=reduced)
            times.append(time.perf_counter() - t0)
        return min(times)

    ratio = best_time(True, 5) / best_time(False, 3)
    ok = worst_loss <= 1e-6 and worst_grad <= 1e-6 and ratio < 0.5
    record(6, "reduced alphabet is exact and faster at vocab 5000", ok,
           f"loss diff {worst_loss:.1e}, grad diff {worst_grad:.1e}, time ratio {ratio:.3f}")
    assert ok


# 7

def test_criterion_07_penalty_schedule():
    cases = [(0.5, 0.9, 10000.0), (0.1, 0.6, 250.0), (0.9, 0.3, 37.5)]
    worst = 0.0
    monotone = True
    for p0, p_max, t_half in cases:
        s = PenaltySchedule.from_half_life(p0, p_max, t_half)
        worst = max(worst, abs(s.probability(0) - p0), abs(s.probability(t_half) - (p0 + p_max) / 2),
                    abs(s.penalty(0) - math.log(p0)))
        ts = np.linspace(0, 20 * t_half, 400)
        ps = np.array([s.probability(t) for t in ts])
        direction = np.sign(p_max - p0)
        monotone &= bool(np.all(direction * np.diff(ps) >= 0))
        monotone &= abs(ps[-1] - p_max) < abs(ps[0] - p_max)
    ok = worst <= 1e-12 and monotone
    record(7, "penalty schedule endpoints, half-life and monotonicity", ok,
           f"max formula error {worst:.1e}, monotone {monotone}")
    assert ok


# 8 and 9: synthetic trend reproduction and timing

VOCAB = 30
NUM_TRAIN = 2000
NUM_VALID = 300
P_DROP = 0.5
TREND_MODEL = dict(channel_filters=8, shared_filters=True, channel_head=True, context=2, right_context=2,
                   init_scale=0.5, lr=0.1, batch_size=16)
TREND_EPOCHS = 60
# 125 steps per epoch: the penalty probability is halfway to p_max at epoch 30
STC_SCHEDULE = dict(p0=0.5, p_max=0.6, t_half=3750.0)


@pytest.fixture(scope="module")
def trend_data():
    gen = dict(len_range=(2, 6), frames_per_token=(1, 3), noise=0.3)
    train = generate_synthetic(VOCAB, NUM_TRAIN, seed=11, id_prefix="train", **gen)
    train = apply_drop(train, DropConfig(p_drop=P_DROP, seed=12))
    valid = generate_synthetic(VOCAB, NUM_VALID, seed=13, id_prefix="valid", **gen)
    return train, valid


def train_ter(train, valid, **kw):
    cfg = TrainConfig(epochs=TREND_EPOCHS, vocab_size=VOCAB, seed=0, **TREND_MODEL, **kw)
    rows = Trainer(cfg, train, valid).run()
    return rows[-1]["ter"]


def test_criterion_08_trend_reproduction(trend_data):
    train, valid = trend_data
    start = time.perf_counter()
    supervised = train_ter(train, valid, loss="ctc", label="full")
    stc = train_ter(train, valid, loss="stc", label="partial", **STC_SCHEDULE)
    ctc_partial = train_ter(train, valid, loss="ctc", label="partial")
    elapsed = time.perf_counter() - start
    a = stc <= 2 * supervised
    b = ctc_partial >= 3 * stc
    ok = a and b and elapsed < 1800
    record(8, "STC at pDrop=0.5 tracks supervised CTC and beats CTC on partial labels", ok,
           f"TER supervised CTC {supervised:.3f}, STC {stc:.3f}, partial CTC {ctc_partial:.3f}; "
           f"(a) {stc:.3f} <= {2 * supervised:.3f}: {a}; (b) {ctc_partial:.3f} >= {3 * stc:.3f}: {b}; "
           f"{elapsed:.0f}s")
    assert ok


def test_criterion_09_stc_epoch_overhead(trend_data):
    train, _ = trend_data
    subset = train[:600]

    def epoch_seconds(loss):
        cfg = TrainConfig(loss=loss, epochs=3, vocab_size=VOCAB, reduced_alphabet=True, **TREND_MODEL)
        return float(np.mean([r["seconds"] for r in Trainer(cfg, subset).run()]))

    ctc, stc = epoch_seconds("ctc"), epoch_seconds("stc")
    ratio = stc / ctc
    ok = ratio <= 2.0
    record(9, "STC epoch time at most twice CTC", ok, f"CTC {ctc:.2f}s, STC {stc:.2f}s, ratio {ratio:.2f}")
    assert ok


# 10

def test_criterion_10_letter_to_word_encoder():
    enc = LetterToWordEncoder("abc", ["a", "cab", "ca"], l_max=3)
    scores = np.array([0.9, -0.4, 0.2, 1.8, -0.1,
                       -0.4, 1.2, -1.3, 0.1, 1.2,
                       2.1, -0.8, -1.4, 0.0, 0.1])
    a, cab, ca, blank = enc.encode(scores)
    exact = abs(cab - (-1.0)) <= 1e-12 and abs(blank - 3.1) <= 1e-12

    rng = np.random.default_rng(1010)
    s1, s2 = rng.integers(-50, 50, size=(2, 4, 15)).astype(float) / 8
    linear = np.array_equal(enc.encode(3 * s1 + s2), 3 * enc.encode(s1) + enc.encode(s2))

    g = rng.normal(size=(4, 4))
    num = numeric_gradient(lambda x: float((enc.encode(x) * g).sum()), s1, h=1e-5)
    grad_err = float(relative_error(enc.backward(g), num).max())
    ok = exact and linear and grad_err <= 1e-4
    record(10, "letter-to-word encoder values, linearity and gradient", ok,
           f"cab {cab:.12g}, blank {blank:.12g}, linear {linear}, grad error {grad_err:.1e}")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
