import math

import pytest
from numpy.testing import assert_array_equal

from config.settings import ModelConfig, TrainConfig
from core.encoders import build_encoder
from core.errors import ContractError, DegenerateError, DomainError, EmptyInputError
from core.evaluation import (
    BinReport,
    CurveOrder,
    EvalReport,
    curve_sizes,
    data_size_curve,
    evaluate,
    frequency_weights,
    length_bin,
    length_binned,
    mean_pearson,
    nearest_neighbors,
    oov_fraction,
    predict,
    reweight,
    word_importance,
)
from core.optim import train
from core.textdata import PairDataset, ScoredPairDataset
from tests.synthetic import random_phrase, random_table


def _average(table):
    return build_encoder(ModelConfig(), table.dim)


def test_evaluate_ranks_by_cosine(toy_table):
    data = ScoredPairDataset([(["a"], ["a"], 5.0), (["a"], ["c"], 3.0), (["a"], ["b"], 1.0)])
    report = evaluate(_average(toy_table), toy_table, data)
    assert report.n == 3
    assert report.spearman == pytest.approx(1.0)
    assert report.pearson > 0.9
    assert report.predictions[0] == pytest.approx(1.0)


def test_evaluate_empty(toy_table):
    with pytest.raises(EmptyInputError):
        evaluate(_average(toy_table), toy_table, ScoredPairDataset([]))


def test_zero_vector_pair_is_named(toy_table):
    data = ScoredPairDataset([(["a"], ["b"], 1.0), (["zzz"], ["a"], 2.0)])
    with pytest.raises(DegenerateError, match="pair 1"):
        predict(_average(toy_table), toy_table, data)


def test_report_rows():
    report = EvalReport(0.5, 0.25, 3, bins=[BinReport("<=4", None, 1), BinReport("5", 0.75, 2)])
    assert report.rows() == ["pearson\t0.5", "spearman\t0.25", "n\t3", "<=4\tNA\t1", "5\t0.75\t2"]
    assert report.rows(include_spearman=False)[:2] == ["pearson\t0.5", "n\t3"]


def test_length_bins():
    assert length_bin(["a"] * 4, ["b"]) == "<=4"
    assert length_bin(["a"], ["b"] * 7) == "7"
    assert length_bin(["a"] * 12, ["b"]) == ">=10"


def test_length_binned_marks_sparse_bins(toy_table):
    data = ScoredPairDataset([
        (["a"], ["a"], 5.0),
        (["a"], ["b"], 1.0),
        (["a", "c"], ["d"], 2.0),
        (["a"] * 6, ["c"], 3.0),
    ])
    bins = {b.label: b for b in length_binned(_average(toy_table), toy_table, data)}
    assert bins["<=4"].n == 3
    assert bins["<=4"].pearson is not None
    assert bins["6"].n == 1 and bins["6"].pearson is None
    assert bins[">=10"].n == 0


def test_oov_fraction_counts_occurrences():
    data = PairDataset([(["a", "b"], ["a", "z"])])
    assert oov_fraction(data, {"a": 5, "b": 1}, 2) == 0.5
    assert oov_fraction(data, {"a": 5, "b": 1}, 1) == 0.25
    with pytest.raises(DomainError):
        oov_fraction(data, {}, 0)


def test_word_importance_is_l1_norm(toy_table):
    weights = word_importance(toy_table)
    assert weights == {"a": 1.0, "b": 1.0, "c": 2.0, "d": 1.5, "<unk>": 0.0}


def test_reweight_scales_rows(toy_table):
    scaled = reweight(toy_table, {"a": 2.0, "d": 0.0})
    assert_array_equal(scaled.lookup("a"), [2.0, 0.0])
    assert_array_equal(scaled.lookup("b"), [0.0, 1.0])
    assert_array_equal(scaled.lookup("d"), [0.0, 0.0])
    assert_array_equal(scaled.initial, scaled.current)
    assert_array_equal(toy_table.lookup("a"), [1.0, 0.0])


def test_frequency_weights():
    assert frequency_weights({"a": 2, "b": 4}, 8, vocab=["c"]) == {"a": 4.0, "b": 2.0, "c": 8.0}
    with pytest.raises(DomainError):
        frequency_weights({"a": 1}, 0)


def test_nearest_neighbors(toy_table):
    flat = {t: 1 for t in "abcd"}
    result = nearest_neighbors(toy_table, "a", 2, 5, flat)
    assert [t for t, _ in result] == ["c", "b"]
    assert result[0][1] == pytest.approx(1 / math.sqrt(2))
    assert nearest_neighbors(toy_table, "a", 3, 2, {"c": 10, "a": 5}) == [("c", pytest.approx(1 / math.sqrt(2)))]


def test_nearest_neighbors_rejects_bad_queries(toy_table):
    with pytest.raises(DegenerateError):
        nearest_neighbors(toy_table, "never-seen", 1, 5, {})
    with pytest.raises(DomainError):
        nearest_neighbors(toy_table, "a", 0, 5, {})
    with pytest.raises(DomainError):
        nearest_neighbors(toy_table, "a", 1, 99, {})


def test_curve_sizes():
    assert curve_sizes(35) == [35, 17]
    assert curve_sizes(100) == [100, 50, 25, 12]
    assert curve_sizes(5) == [5]
    with pytest.raises(EmptyInputError):
        curve_sizes(0)


def test_mean_pearson_needs_datasets(toy_table):
    with pytest.raises(ContractError):
        mean_pearson(_average(toy_table), toy_table, [])


def test_data_size_curve_is_reproducible(corpus):
    data = PairDataset(corpus.train.pairs[:40])
    config = TrainConfig(epochs=1, batch_size=10, seed=9)

    def run():
        return data_size_curve(data, CurveOrder.RANDOM, corpus.table, ModelConfig(), config, [corpus.heldout])

    first = run()
    assert [size for size, _ in first] == [40, 20, 10]
    assert all(-1.0 <= score <= 1.0 for _, score in first)
    assert run() == first
    assert_array_equal(corpus.table.current, corpus.table.initial)


def _scored(rng, n, vocab=8):
    return ScoredPairDataset([
        (random_phrase(rng, vocab, 4), random_phrase(rng, vocab, 4), float(rng.uniform(0.0, 5.0)))
        for _ in range(n)
    ])


def test_evaluate_ignores_sentence_order(rng):
    table = random_table(rng, 8, 4)
    data = _scored(rng, 30)
    swapped = ScoredPairDataset([(s2, s1, gold) for s1, s2, gold in data.items])
    report, mirrored = evaluate(_average(table), table, data), evaluate(_average(table), table, swapped)
    assert mirrored.predictions == report.predictions
    assert (mirrored.pearson, mirrored.spearman) == (report.pearson, report.spearman)


def test_unit_reweighting_reproduces_the_report(rng):
    table = random_table(rng, 8, 4)
    data = _scored(rng, 30)
    ones = reweight(table, {token: 1.0 for token in table.vocab.tokens})
    assert evaluate(_average(ones), ones, data) == evaluate(_average(table), table, data)


def test_oov_fraction_shrinks_with_the_threshold(corpus):
    counts = {token: i for i, token in enumerate(corpus.topic_tokens)}
    fractions = [oov_fraction(corpus.heldout, counts, t) for t in range(1, len(counts) + 2)]
    assert all(lower <= higher for lower, higher in zip(fractions, fractions[1:]))
    assert fractions[0] < fractions[-1] == 1.0


def _topic_sorted(corpus):
    return PairDataset(sorted(corpus.train.pairs, key=lambda pair: corpus.topic_of[pair[0][0]]))


def test_data_size_curve_trains_on_nested_prefixes(corpus, monkeypatch):
    seen = []

    def recording_train(encoder, table, subset, config):
        seen.append(list(subset.pairs))
        return train(encoder, table, subset, config)

    monkeypatch.setattr("core.evaluation.train", recording_train)
    data = PairDataset(corpus.train.pairs[:80])
    config = TrainConfig(epochs=1, batch_size=10, seed=5)
    for order in CurveOrder:
        seen.clear()
        data_size_curve(data, order, corpus.table, ModelConfig(), config, [corpus.heldout])
        assert [len(pairs) for pairs in seen] == [80, 40, 20, 10]
        for larger, smaller in zip(seen, seen[1:]):
            assert larger[:len(smaller)] == smaller
    assert seen[0] != data.pairs


def test_ordered_and_random_curves_differ(corpus):
    data = _topic_sorted(corpus)
    config = TrainConfig(epochs=1, batch_size=25, seed=5)
    ordered = data_size_curve(data, CurveOrder.ORDERED, corpus.table, ModelConfig(), config, [corpus.heldout])
    shuffled = data_size_curve(data, CurveOrder.RANDOM, corpus.table, ModelConfig(), config, [corpus.heldout])
    assert [size for size, _ in ordered] == [size for size, _ in shuffled] == [200, 100, 50, 25, 12]
    assert ordered[1][1] != pytest.approx(shuffled[1][1], abs=1e-9)
