import numpy as np
import pytest

from config.settings import Arch, ModelConfig, Sampling, TrainConfig
from core.encoders import build_encoder
from core.errors import ContractError, DegenerateError
from core.numerics import cosine, finite_diff_check, make_rng
from core.objective import (
    batch_loss,
    choose_negatives,
    encode_batch,
    fit_diagnostic,
    mean_fit_diagnostic,
    partition,
    select_negative_max,
    select_negatives,
)
from tests.synthetic import dense_word_grad, random_phrase, random_table, table_from_rows

AVERAGE = ModelConfig(arch=Arch.AVERAGE)


def _average(table):
    return build_encoder(AVERAGE, table.dim)


def test_partition_merges_trailing_singleton():
    assert partition(list(range(5)), 2) == [[0, 1], [2, 3, 4]]
    assert partition(list(range(6)), 4) == [[0, 1, 2, 3], [4, 5]]
    assert partition([0, 1], 5) == [[0, 1]]


def test_two_pair_batch_picks_closer_phrase_of_other_pair(toy_table):
    batch = [(["a"], ["b"]), (["d"], ["c"])]
    encoded = encode_batch(_average(toy_table), toy_table, batch)
    # anchor "a" = [1, 0]: cos with d = -0.89, with c = 0.71
    assert select_negative_max(batch, 0, 1, encoded) == ["c"]


def test_identical_candidate_wins(toy_table):
    batch = [(["a"], ["b"]), (["c"], ["a"]), (["d"], ["b"])]
    encoded = encode_batch(_average(toy_table), toy_table, batch)
    assert select_negative_max(batch, 0, 1, encoded) is batch[1][1]


def test_single_pair_batch_rejected(toy_table):
    batch = [(["a"], ["b"])]
    with pytest.raises(ContractError):
        select_negative_max(batch, 0, 1, encode_batch(_average(toy_table), toy_table, batch))


def test_max_selection_matches_brute_force(rng):
    for _ in range(1000):
        size = int(rng.integers(2, 9))
        dim = int(rng.integers(1, 9))
        batch = [([f"p{j}s1"], [f"p{j}s2"]) for j in range(size)]
        encoded = [(rng.normal(size=dim), rng.normal(size=dim)) for _ in range(size)]
        k, side = int(rng.integers(size)), int(rng.integers(1, 3))
        anchor = encoded[k][side - 1]
        best, best_cos = None, -np.inf
        for j in range(size):
            if j == k:
                continue
            for s in (1, 2):
                c = cosine(anchor, encoded[j][s - 1])
                if c > best_cos:
                    best, best_cos = batch[j][s - 1], c
        assert select_negative_max(batch, k, side, encoded) is best


def test_max_strategy_is_select_negative_max(rng):
    table = random_table(rng, 8, 3)
    batch = [(random_phrase(rng, 8, 3), random_phrase(rng, 8, 3)) for _ in range(5)]
    encoded = encode_batch(_average(table), table, batch)
    negatives = select_negatives(batch, Sampling.MAX, make_rng(1), encoded)
    expected = [(select_negative_max(batch, k, 1, encoded), select_negative_max(batch, k, 2, encoded))
                for k in range(len(batch))]
    assert negatives == expected


def test_mix_is_reproducible_and_balanced(rng):
    table = random_table(rng, 8, 3)
    batch = [(random_phrase(rng, 8, 3), random_phrase(rng, 8, 3)) for _ in range(2)]
    encoded = encode_batch(_average(table), table, batch)
    first = choose_negatives(batch, encoded, Sampling.MIX, make_rng(42))
    second = choose_negatives(batch, encoded, Sampling.MIX, make_rng(42))
    assert first == second

    draws = make_rng(7)
    by_max = 0
    for _ in range(2500):
        for c1, c2 in choose_negatives(batch, encoded, Sampling.MIX, draws):
            by_max += c1.by_max + c2.by_max
    assert abs(by_max / 10_000 - 0.5) <= 0.02


def test_mix_random_branch_draws_from_other_pairs(rng):
    table = random_table(rng, 8, 3)
    batch = [(random_phrase(rng, 8, 3), random_phrase(rng, 8, 3)) for _ in range(4)]
    encoded = encode_batch(_average(table), table, batch)
    draws = make_rng(3)
    for _ in range(200):
        for k, pair_choices in enumerate(choose_negatives(batch, encoded, Sampling.MIX, draws)):
            for choice in pair_choices:
                assert choice.pair != k
                assert choice.side in (1, 2)


def test_inactive_hinges_contribute_nothing():
    table = table_from_rows({"x": [1.0, 0.0], "y": [1.0, 0.01], "n": [0.0, 1.0]})
    config = TrainConfig(lambda_c=0.0, lambda_w=0.0)
    batch = [(["x"], ["y"])]
    loss = batch_loss(_average(table), table, batch, [(["n"], ["n"])], config)
    assert loss.value == 0.0
    assert loss.active == [(False, False)]
    assert not loss.grads.words


def test_identical_phrases_cost_twice_the_margin(toy_table):
    config = TrainConfig(delta=0.4, lambda_c=0.0, lambda_w=0.0)
    loss = batch_loss(_average(toy_table), toy_table, [(["c"], ["c"])], [(["c"], ["c"])], config)
    assert loss.unregularized == pytest.approx(0.8)


def test_zero_vector_is_named():
    table = table_from_rows({"a": [1.0, 0.0], "z": [0.0, 0.0]})
    with pytest.raises(DegenerateError, match="'z'"):
        batch_loss(_average(table), table, [(["a"], ["z"])], [(["a"], ["a"])], TrainConfig())


def test_negative_count_must_match(toy_table):
    with pytest.raises(ContractError):
        batch_loss(_average(toy_table), toy_table, [(["a"], ["b"])], [], TrainConfig())


def _margin_gradient_error(encoder, table, batch, config):
    negatives = select_negatives(batch, Sampling.MAX, make_rng(0), encode_batch(encoder, table, batch))
    loss = batch_loss(encoder, table, batch, negatives, config)
    names = list(encoder.params)
    return finite_diff_check(
        lambda: batch_loss(encoder, table, batch, negatives, config).value,
        [encoder.params[n] for n in names] + [table.current],
        [loss.grads.params[n] for n in names] + [dense_word_grad(loss.grads, table)],
    )


def test_average_margin_loss_gradient(rng):
    # a wide margin keeps every hinge active, away from its kink
    config = TrainConfig(delta=3.0, lambda_c=1e-2, lambda_w=1e-2)
    table = random_table(rng, 6, 4)
    table.current[...] += rng.normal(0.0, 0.1, table.current.shape)
    batch = [(random_phrase(rng, 6, 4), random_phrase(rng, 6, 4)) for _ in range(3)]
    assert _margin_gradient_error(_average(table), table, batch, config) < 1e-4


@pytest.mark.parametrize("config", [
    ModelConfig(arch=Arch.PROJ),
    ModelConfig(arch=Arch.DAN),
    ModelConfig(arch=Arch.RNN),
    ModelConfig(arch=Arch.IRNN),
    ModelConfig(arch=Arch.LSTM, output_gate=True),
    ModelConfig(arch=Arch.LSTM, output_gate=False),
], ids=lambda c: f"{c.arch.value}-gate{int(c.output_gate)}")
def test_margin_loss_gradient_per_architecture(config):
    rng = make_rng(5, list(Arch).index(config.arch), int(config.output_gate))
    train_config = TrainConfig(delta=3.0, lambda_c=1e-2, lambda_w=1e-2)
    for _ in range(5):
        dim = int(rng.integers(2, 5))
        table = random_table(rng, 6, dim)
        table.current[...] += rng.normal(0.0, 0.1, table.current.shape)
        encoder = build_encoder(config, dim, rng)
        for p in encoder.params.values():
            p += rng.normal(0.0, 0.1, p.shape)
        batch = [(random_phrase(rng, 6, 4), random_phrase(rng, 6, 4)) for _ in range(3)]
        assert _margin_gradient_error(encoder, table, batch, train_config) < 1e-4


def test_fit_diagnostic_examples():
    table = table_from_rows({"a": [1.0, 0.0], "b": [0.0, 1.0]})
    enc = _average(table)
    assert fit_diagnostic(enc, table, [(["a"], ["a"])], [(["a"], ["a"])]) == pytest.approx(0.0)
    assert fit_diagnostic(enc, table, [(["a"], ["a"])], [(["b"], ["b"])]) == pytest.approx(2.0)


def test_mean_fit_diagnostic_covers_dataset(corpus):
    table = corpus.table.copy()
    value = mean_fit_diagnostic(_average(table), table, corpus.train, 25, Sampling.MAX, make_rng(0))
    assert -4.0 <= value <= 4.0


def test_scaling_a_single_word_phrase_leaves_the_margin_loss_unchanged(rng):
    config = TrainConfig(delta=0.8, lambda_c=0.0, lambda_w=0.0)
    table = random_table(rng, 6, 4)
    batch = [(["w0"], ["w1"]), (["w2"], ["w3"]), (["w4"], ["w0"]), (["w5"], ["w2"])]
    encoder = _average(table)
    negatives = select_negatives(batch, Sampling.MAX, make_rng(0), encode_batch(encoder, table, batch))
    before = batch_loss(encoder, table, batch, negatives, config).unregularized

    table.current[table.vocab.id("w0")] *= 2.0
    assert select_negatives(batch, Sampling.MAX, make_rng(0), encode_batch(encoder, table, batch)) == negatives
    assert batch_loss(encoder, table, batch, negatives, config).unregularized == pytest.approx(before, abs=1e-12)
