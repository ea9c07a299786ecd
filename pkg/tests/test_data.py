import numpy as np
import pytest

from stclib.data import (CorpusFormatError, DropConfig, apply_drop, generate_synthetic,
                         histogram_csv, read_corpus, retention_histogram, write_corpus)

import oracles


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic(10, 300, len_range=(3, 8), frames_per_token=(1, 3), noise=0.3, seed=7)


def test_noise_free_frames_are_one_hot_and_separable():
    samples = generate_synthetic(6, 50, frames_per_token=(1, 1), noise=0.0, seed=1)
    for s in samples:
        assert s.num_frames == len(s.full_label)
        # a linear classifier (identity weights) recovers every frame's token
        assert np.argmax(s.frames, axis=1).tolist() == s.full_label
        assert set(np.unique(s.frames)) <= {0.0, 1.0}


def test_generation_is_deterministic(tmp_path):
    a = generate_synthetic(5, 20, seed=3)
    b = generate_synthetic(5, 20, seed=3)
    write_corpus(a, tmp_path / "a.jsonl")
    write_corpus(b, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert generate_synthetic(5, 20, seed=4)[0] != a[0]


def test_label_lengths_cover_range():
    samples = generate_synthetic(4, 10_000, len_range=(2, 5), frames_per_token=(1, 1), noise=0.0, seed=2)
    lengths = np.array([len(s.full_label) for s in samples])
    assert lengths.min() == 2 and lengths.max() == 5
    counts = np.bincount(lengths, minlength=6)[2:]
    # each of 4 lengths has probability 1/4; 4 sigma binomial band
    sigma = np.sqrt(10_000 * 0.25 * 0.75)
    assert np.all(np.abs(counts - 2500) < 4 * sigma)


def test_frames_per_token_range():
    samples = generate_synthetic(5, 200, len_range=(1, 4), frames_per_token=(2, 3), noise=0.0, seed=5)
    for s in samples:
        assert 2 * len(s.full_label) <= s.num_frames <= 3 * len(s.full_label)


def test_no_adjacent_repeats_by_default(corpus):
    for s in corpus:
        assert all(a != b for a, b in zip(s.full_label, s.full_label[1:]))


@pytest.mark.parametrize("kwargs", [dict(vocab_size=1), dict(noise=-1.0), dict(len_range=(3, 2)),
                                    dict(frames_per_token=(0, 2))])
def test_generation_rejects_degenerate_ranges(kwargs):
    args = dict(vocab_size=4, num_samples=2)
    args.update(kwargs)
    with pytest.raises(ValueError):
        generate_synthetic(**args)


def test_drop_zero_keeps_everything(corpus):
    out = apply_drop(corpus, DropConfig(p_drop=0.0, seed=1))
    assert len(out) == len(corpus)
    assert all(s.partial_label == s.full_label for s in out)


def test_drop_one_prunes_everything(corpus):
    assert apply_drop(corpus, DropConfig(p_drop=1.0, seed=1)) == []


def test_drop_rate_is_binomial():
    samples = generate_synthetic(20, 20_000, len_range=(5, 5), frames_per_token=(1, 1), noise=0.0, seed=9)
    out = apply_drop(samples, DropConfig(p_drop=0.4, seed=11), prune=False)
    n = sum(len(s.full_label) for s in out)
    kept = sum(len(s.partial_label) for s in out)
    assert n == 100_000
    sigma = np.sqrt(n * 0.6 * 0.4)
    assert abs(kept - 0.6 * n) < 3 * sigma


@pytest.mark.parametrize("cfg", [
    DropConfig(p_drop=0.5, seed=3),
    DropConfig("per-sample-split", (0.1, 0.4, 0.7), 3, seed=3),
    DropConfig("per-token-split", (0.1, 0.4, 0.7), 3, seed=3),
])
def test_drop_invariants(corpus, cfg):
    out = apply_drop(corpus, cfg)
    for s in out:
        assert s.partial_label
        assert oracles.is_subsequence(s.partial_label, s.full_label)
        assert len(s.partial_label) <= len(s.full_label) <= s.num_frames
    # deterministic and independent of sample order
    again = apply_drop(list(reversed(corpus)), cfg)
    assert sorted(out, key=lambda s: s.id) == sorted(again, key=lambda s: s.id)


def test_drop_config_validation():
    with pytest.raises(ValueError):
        DropConfig(p_drop=1.5)
    with pytest.raises(ValueError):
        DropConfig(p_drop=(0.1, 0.2))
    with pytest.raises(ValueError):
        DropConfig("per-sample-split", (0.1, 0.2), 3)
    with pytest.raises(ValueError):
        DropConfig("sometimes", 0.1)


def test_per_token_split_uses_one_rate_per_token():
    samples = generate_synthetic(6, 3000, len_range=(4, 8), noise=0.0, seed=4)
    out = apply_drop(samples, DropConfig("per-token-split", (0.0, 1.0), 2, seed=8), prune=False)
    kept = {t for s in out for t in s.partial_label}
    dropped = {t for s in out for t in s.full_label} - kept
    assert kept and dropped
    for s in out:
        assert s.partial_label == [t for t in s.full_label if t in kept]


def test_histogram_full_retention(corpus):
    hist = retention_histogram(apply_drop(corpus, DropConfig(p_drop=0.0)), bins=40)
    assert hist[-1][2] == len(corpus)
    assert sum(c for _, _, c in hist[:-1]) == 0


def histogram_modes(hist, min_share=0.03):
    counts = np.array([c for _, _, c in hist], dtype=float)
    smooth = np.convolve(counts, np.ones(3) / 3, mode="same")
    peaks = [i for i in range(len(smooth))
             if smooth[i] >= min_share * counts.sum()
             and smooth[i] >= smooth[max(i - 1, 0)] and smooth[i] > smooth[min(i + 1, len(smooth) - 1)]]
    return peaks


def test_histogram_single_rate_is_unimodal_near_retention():
    samples = generate_synthetic(30, 4000, len_range=(30, 40), frames_per_token=(1, 1), noise=0.0, seed=6)
    hist = retention_histogram(apply_drop(samples, DropConfig(p_drop=0.4, seed=2)), bins=20)
    counts = np.array([c for _, _, c in hist])
    peak = hist[int(np.argmax(counts))]
    assert peak[0] <= 0.6 <= peak[1] + 0.05
    assert len(histogram_modes(hist)) == 1


def test_histogram_sample_splits_are_trimodal():
    samples = generate_synthetic(30, 6000, len_range=(30, 40), frames_per_token=(1, 1), noise=0.0, seed=6)
    cfg = DropConfig("per-sample-split", (0.1, 0.4, 0.7), 3, seed=2)
    hist = retention_histogram(apply_drop(samples, cfg), bins=20)
    assert len(histogram_modes(hist)) == 3


def test_histogram_csv():
    text = histogram_csv([(0.0, 0.5, 3), (0.5, 1.0, 4)])
    assert text == "bin_start,bin_end,count\n0.0000,0.5000,3\n0.5000,1.0000,4\n"


def test_corpus_round_trip(tmp_path, corpus):
    dropped = apply_drop(corpus[:20], DropConfig(p_drop=0.5, seed=1))
    write_corpus(dropped, tmp_path / "c.jsonl")
    assert read_corpus(tmp_path / "c.jsonl") == dropped


def test_empty_corpus(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    assert read_corpus(tmp_path / "e.jsonl") == []


def test_corrupt_line_is_reported(tmp_path, corpus):
    write_corpus(corpus[:3], tmp_path / "c.jsonl")
    lines = (tmp_path / "c.jsonl").read_text().splitlines()
    lines[1] = lines[1][:40]
    (tmp_path / "c.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(CorpusFormatError, match="line 2"):
        read_corpus(tmp_path / "c.jsonl")
