import math
import random

import pytest

from ekgen.metrics import (BleuReport, EvalPair, bleu_corpus, rouge_l,
                           rouge_l_pair)


# ---------------------------------------------------------------------------
# independent oracles (different code shape from the implementation)

def _oracle_bleu(pairs, max_n=4):
    matched = [0.0] * max_n
    total = [0.0] * max_n
    hyp_len = 0
    ref_len = 0
    for pair in pairs:
        hyp = pair.hypothesis
        hyp_len += len(hyp)
        best = None
        for r in pair.references:
            key = (abs(len(r) - len(hyp)), len(r))
            if best is None or key < best:
                best = key
        ref_len += best[1]
        for n in range(1, max_n + 1):
            grams = [tuple(hyp[i:i + n]) for i in range(len(hyp) - n + 1)]
            total[n - 1] += len(grams)
            for gram in set(grams):
                hyp_count = grams.count(gram)
                ref_max = 0
                for r in pair.references:
                    rg = [tuple(r[i:i + n]) for i in range(len(r) - n + 1)]
                    ref_max = max(ref_max, rg.count(gram))
                matched[n - 1] += min(hyp_count, ref_max)
    precisions = [m / t if t else 0.0 for m, t in zip(matched, total)]
    if any(p == 0.0 for p in precisions):
        return 0.0
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / max_n)


def _oracle_lcs(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[-1][-1]


def _oracle_rouge(pairs):
    scores = []
    for pair in pairs:
        best = 0.0
        for r in pair.references:
            lcs = _oracle_lcs(pair.hypothesis, r)
            if lcs:
                p = lcs / len(pair.hypothesis)
                rr = lcs / len(r)
                best = max(best, 2 * p * rr / (p + rr))
        scores.append(best)
    return sum(scores) / len(scores)


def _random_corpus(rng, n_pairs):
    vocab = list("abcdefg")
    pairs = []
    for _ in range(n_pairs):
        hyp = [rng.choice(vocab) for _ in range(rng.randint(1, 10))]
        refs = [[rng.choice(vocab) for _ in range(rng.randint(1, 10))]
                for _ in range(rng.randint(1, 5))]
        pairs.append(EvalPair(hypothesis=hyp, references=refs))
    return pairs


# ---------------------------------------------------------------------------
# BLEU

def test_bleu_identical_hypotheses_score_100():
    pairs = [EvalPair("a b c d e".split(), ["a b c d e".split(), list("xy")]),
             EvalPair(list("wxyz"), [list("wxyz")])]
    report = bleu_corpus(pairs)
    assert report.bleu == pytest.approx(100.0, abs=1e-9)
    assert report.brevity_penalty == 1.0


def test_bleu_worked_example():
    pairs = [EvalPair("a b c d".split(), ["a b c d e".split()])]
    report = bleu_corpus(pairs)
    assert report.bleu == pytest.approx(77.88, abs=0.01)
    assert report.precisions == [1.0, 1.0, 1.0, 1.0]
    assert report.brevity_penalty == pytest.approx(math.exp(1 - 5 / 4), abs=1e-9)


def test_bleu_zero_fourgram_overlap_scores_zero():
    pairs = [EvalPair(list("abcd"), [list("abce")])]
    assert bleu_corpus(pairs).bleu == 0.0


def test_bleu_empty_pair_list_rejected():
    with pytest.raises(ValueError):
        bleu_corpus([])


def test_eval_pair_validates_non_empty():
    with pytest.raises(ValueError):
        EvalPair([], [list("ab")])
    with pytest.raises(ValueError):
        EvalPair(list("ab"), [])
    with pytest.raises(ValueError):
        EvalPair(list("ab"), [[]])


def test_bleu_matches_oracle_on_random_corpora():
    rng = random.Random(0)
    for _ in range(100):
        pairs = _random_corpus(rng, rng.randint(1, 6))
        assert bleu_corpus(pairs).bleu == pytest.approx(
            _oracle_bleu(pairs), abs=1e-6)


def test_bleu_is_corpus_level_not_mean_of_sentences():
    # pooled n-gram counts give a different score than averaging the
    # two per-sentence BLEU values
    pairs = [EvalPair(list("abcde"), [list("abcde")]),
             EvalPair(list("vwxyz"), [list("vwxyq")])]
    pooled = bleu_corpus(pairs).bleu
    per_sentence = (bleu_corpus([pairs[0]]).bleu + bleu_corpus([pairs[1]]).bleu) / 2
    assert pooled > 0.0
    assert pooled != pytest.approx(per_sentence, abs=1e-6)


def test_bleu_invariant_to_pair_order():
    rng = random.Random(1)
    pairs = _random_corpus(rng, 5)
    fwd = bleu_corpus(pairs)
    rev = bleu_corpus(list(reversed(pairs)))
    assert fwd.bleu == pytest.approx(rev.bleu, abs=1e-12)


def test_bleu_closest_ref_length_tie_prefers_shorter():
    # hyp len 4; refs len 3 and 5 both distance 1 -> ref_len 3 -> BP = 1
    pairs = [EvalPair(list("abcd"), [list("abc"), list("abcde")])]
    assert bleu_corpus(pairs).brevity_penalty == 1.0


# ---------------------------------------------------------------------------
# ROUGE-L

def test_rouge_identical_is_one():
    assert rouge_l([EvalPair(list("abc"), [list("abc")])]) == pytest.approx(1.0)


def test_rouge_worked_example():
    assert rouge_l_pair(list("abc"), list("acb")) == pytest.approx(2 / 3, abs=1e-4)


def test_rouge_disjoint_is_zero():
    assert rouge_l([EvalPair(list("abc"), [list("xyz")])]) == 0.0


def test_rouge_matches_oracle_on_random_corpora():
    rng = random.Random(2)
    for _ in range(100):
        pairs = _random_corpus(rng, rng.randint(1, 6))
        assert rouge_l(pairs) == pytest.approx(_oracle_rouge(pairs), abs=1e-6)


def test_rouge_invariant_to_pair_order():
    rng = random.Random(3)
    pairs = _random_corpus(rng, 5)
    assert rouge_l(pairs) == pytest.approx(rouge_l(list(reversed(pairs))),
                                           abs=1e-12)


def test_rouge_appending_reference_never_lowers_score():
    rng = random.Random(4)
    for _ in range(50):
        pairs = _random_corpus(rng, 1)
        base = rouge_l(pairs)
        extra = [rng.choice("abcdefg") for _ in range(rng.randint(1, 8))]
        widened = [EvalPair(pairs[0].hypothesis,
                            pairs[0].references + [extra])]
        assert rouge_l(widened) >= base - 1e-12
