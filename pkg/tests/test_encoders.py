import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.special import expit

from config.settings import Activation, Arch, ModelConfig
from core.encoders import (
    ENCODERS,
    IRnnEncoder,
    build_encoder,
    backward,
    encode_average,
    encode_dan,
    encode_irnn,
    encode_lstm,
    encode_projection,
    encode_rnn,
)
from core.errors import ContractError, EmptyInputError
from core.numerics import finite_diff_check, make_rng
from tests.synthetic import dense_word_grad, random_phrase, random_table, table_from_rows

CONFIGS = [
    ModelConfig(arch=Arch.AVERAGE),
    ModelConfig(arch=Arch.PROJ),
    ModelConfig(arch=Arch.DAN, layers=2),
    ModelConfig(arch=Arch.RNN),
    ModelConfig(arch=Arch.IRNN),
    ModelConfig(arch=Arch.LSTM, output_gate=True),
    ModelConfig(arch=Arch.LSTM, output_gate=False),
]


def _encoder(arch, dim, **params):
    return build_encoder(ModelConfig(arch=arch), dim, params=params)


def test_average_examples():
    table = table_from_rows({"a": [1.0, 2.0], "b": [3.0, 4.0]})
    assert_array_equal(encode_average(table, ["a", "b"]), [2.0, 3.0])
    assert_array_equal(encode_average(table, ["a"]), [1.0, 2.0])
    assert_array_equal(encode_average(table, ["a", "a"]), [1.0, 2.0])


def test_unknown_tokens_use_unk_row():
    table = table_from_rows({"a": [1.0, 2.0]})
    assert_array_equal(encode_average(table, ["zzz"]), [0.0, 0.0])


def test_empty_sequence_rejected():
    table = table_from_rows({"a": [1.0, 2.0]})
    with pytest.raises(EmptyInputError):
        encode_average(table, [])


def test_projection_examples():
    table = table_from_rows({"a": [1.0, -3.0], "b": [1.0, 1.0]})
    identity = _encoder(Arch.PROJ, 2, W_p=np.eye(2), b=np.zeros(2))
    assert_array_equal(encode_projection(identity, table, ["a", "b"]), encode_average(table, ["a", "b"]))
    constant = _encoder(Arch.PROJ, 2, W_p=np.zeros((2, 2)), b=np.array([0.5, -0.5]))
    assert_array_equal(encode_projection(constant, table, ["a"]), [0.5, -0.5])
    double = _encoder(Arch.PROJ, 2, W_p=2 * np.eye(2), b=np.zeros(2))
    assert_array_equal(encode_projection(double, table, ["a", "b"]), [2.0, -2.0])


def test_projection_can_change_dimension(rng):
    enc = build_encoder(ModelConfig(arch=Arch.PROJ, out_dim=7), 3, rng)
    assert enc.params["W_p"].shape == (7, 3)
    assert encode_projection(enc, random_table(rng, 4, 3), ["w1", "w2"]).shape == (7,)


def test_dan_examples():
    table = table_from_rows({"a": [2.0, -3.0], "b": [1.0, 2.0]})
    relu = build_encoder(ModelConfig(arch=Arch.DAN, activation=Activation.RELU), 2,
                         params={"W_1": np.eye(2), "b_1": np.zeros(2)})
    assert_array_equal(encode_dan(relu, table, ["a"]), [2.0, 0.0])
    tanh = build_encoder(ModelConfig(arch=Arch.DAN), 2, params={"W_1": np.zeros((2, 2)), "b_1": np.zeros(2)})
    assert_array_equal(encode_dan(tanh, table, ["a", "b"]), [0.0, 0.0])
    two = build_encoder(ModelConfig(arch=Arch.DAN, activation=Activation.RELU, layers=2), 2,
                        params={"W_1": np.eye(2), "b_1": np.zeros(2), "W_2": np.eye(2), "b_2": np.zeros(2)})
    assert_array_equal(encode_dan(two, table, ["b"]), [1.0, 2.0])


def test_rnn_examples():
    table = table_from_rows({"a": [1.0, 0.0], "b": [0.0, 1.0], "c": [0.3, -2.0]})
    no_recurrence = _encoder(Arch.RNN, 2, W_x=np.eye(2), W_h=np.zeros((2, 2)), b=np.zeros(2))
    assert_allclose(encode_rnn(no_recurrence, table, ["a", "b", "c"]), np.tanh([0.3, -2.0]))
    zeros = _encoder(Arch.RNN, 2, W_x=np.zeros((2, 2)), W_h=np.zeros((2, 2)), b=np.zeros(2))
    assert_array_equal(encode_rnn(zeros, table, ["a", "c"]), [0.0, 0.0])
    relu = build_encoder(ModelConfig(arch=Arch.RNN, activation=Activation.RELU), 2,
                         params={"W_x": np.eye(2), "W_h": np.eye(2), "b": np.zeros(2)})
    assert_array_equal(encode_rnn(relu, table, ["a", "b"]), [1.0, 1.0])


def test_irnn_examples():
    table = table_from_rows({"a": [2.0, 0.0], "b": [4.0, 0.0]})
    fresh = build_encoder(ModelConfig(arch=Arch.IRNN), 2)
    assert_array_equal(encode_irnn(fresh, table, ["a"]), [2.0, 0.0])
    no_memory = _encoder(Arch.IRNN, 2, W_x=np.eye(2), W_h=np.zeros((2, 2)), b=np.zeros(2))
    assert_array_equal(encode_irnn(no_memory, table, ["a", "b"]), [2.0, 0.0])


def test_irnn_anchor_is_identity():
    enc = build_encoder(ModelConfig(arch=Arch.IRNN), 3)
    assert_array_equal(enc.anchor()["W_h"], np.eye(3))
    assert_array_equal(enc.anchor()["b"], np.zeros(3))


def test_fresh_irnn_equals_average(rng):
    for _ in range(1000):
        dim = int(rng.integers(1, 9))
        table = random_table(rng, 6, dim)
        tokens = random_phrase(rng, 6, 8)
        enc = build_encoder(ModelConfig(arch=Arch.IRNN), dim)
        assert_allclose(encode_irnn(enc, table, tokens), encode_average(table, tokens), rtol=0, atol=1e-12)


@pytest.mark.parametrize("gate", [True, False])
def test_lstm_zero_weights_give_zero_vector(gate):
    config = ModelConfig(arch=Arch.LSTM, output_gate=gate)
    shapes = ENCODERS[Arch.LSTM].shapes(config, 2)
    enc = build_encoder(config, 2, params={name: np.zeros(shape) for name, shape in shapes.items()})
    table = table_from_rows({"a": [1.0, -1.0]})
    assert_array_equal(encode_lstm(enc, table, ["a", "a"]), [0.0, 0.0])


def test_scalar_lstm_matches_hand_unroll():
    config = ModelConfig(arch=Arch.LSTM)
    w = {
        "W_xi": 0.5, "W_hi": -0.3, "W_ci": 0.2, "b_i": 0.1,
        "W_xf": -0.4, "W_hf": 0.6, "W_cf": 0.1, "b_f": 0.2,
        "W_xc": 0.9, "W_hc": -0.2, "b_c": -0.1,
        "W_xo": 0.3, "W_ho": 0.4, "W_co": -0.5, "b_o": 0.05,
    }
    params = {k: np.array([[v]]) if k.startswith("W") else np.array([v]) for k, v in w.items()}
    enc = build_encoder(config, 1, params=params)
    table = table_from_rows({"a": [0.7], "b": [-1.3]})

    h = c = 0.0
    for x in (0.7, -1.3):
        i = expit(w["W_xi"] * x + w["W_hi"] * h + w["W_ci"] * c + w["b_i"])
        f = expit(w["W_xf"] * x + w["W_hf"] * h + w["W_cf"] * c + w["b_f"])
        c = f * c + i * np.tanh(w["W_xc"] * x + w["W_hc"] * h + w["b_c"])
        o = expit(w["W_xo"] * x + w["W_ho"] * h + w["W_co"] * c + w["b_o"])
        h = o * np.tanh(c)
    assert_allclose(encode_lstm(enc, table, ["a", "b"]), [h], rtol=0, atol=1e-14)


def test_wrong_wrapper_rejected(rng):
    enc = build_encoder(ModelConfig(arch=Arch.RNN), 2, rng)
    with pytest.raises(ContractError):
        encode_lstm(enc, table_from_rows({"a": [1.0, 0.0]}), ["a"])


def test_missing_parameter_named():
    with pytest.raises(ContractError, match="W_co"):
        params = ENCODERS[Arch.LSTM].initialize(ModelConfig(arch=Arch.LSTM), 2, make_rng(0))
        del params["W_co"]
        build_encoder(ModelConfig(arch=Arch.LSTM), 2, params=params)


def test_table_dimension_mismatch(rng):
    enc = build_encoder(ModelConfig(arch=Arch.RNN), 3, rng)
    with pytest.raises(ContractError):
        enc.encode(random_table(rng, 3, 2), ["w0"])


def test_average_backward_splits_gradient():
    table = table_from_rows({"a": [1.0, 2.0], "b": [3.0, 4.0]})
    enc = build_encoder(ModelConfig(arch=Arch.AVERAGE), 2)
    grads = backward(enc, table, ["a", "b", "a"], np.array([3.0, 6.0]))
    assert_allclose(grads.words[table.vocab.id("a")], [2.0, 4.0])
    assert_allclose(grads.words[table.vocab.id("b")], [1.0, 2.0])


def test_projection_backward_outer_product():
    table = table_from_rows({"a": [1.0, 2.0], "b": [3.0, 0.0]})
    enc = _encoder(Arch.PROJ, 2, W_p=np.eye(2), b=np.zeros(2))
    out = np.array([0.5, -1.0])
    grads = backward(enc, table, ["a", "b"], out)
    assert_allclose(grads.params["W_p"], np.outer(out, [2.0, 1.0]))
    assert_allclose(grads.params["b"], out)


def _gradient_error(encoder, table, tokens, rng):
    r = rng.normal(size=encoder.out_dim)
    grads = backward(encoder, table, tokens, r)
    names = list(encoder.params)
    return finite_diff_check(
        lambda: float(r @ encoder.encode(table, tokens)),
        [encoder.params[n] for n in names] + [table.current],
        [grads.params[n] for n in names] + [dense_word_grad(grads, table)],
    )


@pytest.mark.parametrize("config", CONFIGS, ids=lambda c: f"{c.arch.value}-gate{int(c.output_gate)}")
def test_encoder_gradients_match_finite_differences(config):
    rng = make_rng(99, list(Arch).index(config.arch), int(config.output_gate))
    worst = 0.0
    for _ in range(100):
        dim = int(rng.integers(2, 5))
        table = random_table(rng, 5, dim)
        encoder = build_encoder(config, dim, rng)
        if isinstance(encoder, IRnnEncoder):
            # move away from the identity start so recurrence gradients are exercised
            for p in encoder.params.values():
                p += rng.normal(0.0, 0.3, p.shape)
        worst = max(worst, _gradient_error(encoder, table, random_phrase(rng, 5, 6), rng))
    assert worst < 1e-4


def test_average_and_dan_ignore_word_order(rng):
    dan = build_encoder(ModelConfig(arch=Arch.DAN, layers=2), 4, rng)
    for _ in range(200):
        table = random_table(rng, 6, 4)
        tokens = random_phrase(rng, 6, 7)
        shuffled = [tokens[i] for i in rng.permutation(len(tokens))]
        assert_allclose(encode_average(table, shuffled), encode_average(table, tokens), rtol=0, atol=1e-12)
        assert_allclose(encode_dan(dan, table, shuffled), encode_dan(dan, table, tokens), rtol=0, atol=1e-12)


def test_recurrent_encoders_depend_on_word_order():
    table = table_from_rows({"a": [1.0, 0.0], "b": [0.0, 1.0]})
    rnn = _encoder(Arch.RNN, 2, W_x=np.eye(2), W_h=0.5 * np.eye(2), b=np.zeros(2))
    # h("a b") = tanh([0.5 tanh(1), 1]) while h("b a") = tanh([1, 0.5 tanh(1)])
    assert_allclose(encode_rnn(rnn, table, ["a", "b"]), np.tanh([0.5 * np.tanh(1.0), 1.0]))
    assert_allclose(encode_rnn(rnn, table, ["b", "a"]), np.tanh([1.0, 0.5 * np.tanh(1.0)]))

    lstm = build_encoder(ModelConfig(arch=Arch.LSTM), 2, make_rng(4))
    forward, reverse = encode_lstm(lstm, table, ["a", "b"]), encode_lstm(lstm, table, ["b", "a"])
    assert np.max(np.abs(forward - reverse)) > 1e-6
