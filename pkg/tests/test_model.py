import hashlib
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_model
from oracles import bits64, model_layers, mp_softmax, naive_forward
from sniff.errors import FormatError, NumericDomainError, UsageError
from sniff.faults import Bias, FaultSpec, Product, SetValue, SignFlip
from sniff.model import (
    DenseLayer,
    FeatureExtractor,
    StudentLayer,
    StudentModel,
    generate_synthetic,
    load_model,
    save_model,
)

GOLDEN_SEED42_SHA256 = "9ec62c6ec3cebb6be7a04780ec5c380dab92ba51ea507a4c2e2e0fd9a3c062a9"


def test_identity_extractor():
    model = StudentModel(FeatureExtractor.identity(3), StudentLayer(np.zeros((3, 2)), np.zeros(2)))
    assert model.extract_features([1.0, 2.0, 3.0]).tolist() == [1.0, 2.0, 3.0]


def test_relu_kills_negative_preactivations():
    ext = FeatureExtractor((DenseLayer(-np.ones((3, 4)), np.zeros(4), "relu"),))
    model = StudentModel(ext, StudentLayer(np.ones((4, 2)), np.zeros(2)))
    feats = model.extract_features([0.5, 1.0, 2.0])
    assert feats.tolist() == [0.0] * 4
    assert all(math.copysign(1, v) == 1 for v in feats)


def test_three_layer_extractor_matches_straight_line_oracle():
    rng = np.random.default_rng(7)
    ext = FeatureExtractor(tuple(
        DenseLayer(rng.uniform(-1, 1, (a, b)), rng.uniform(-1, 1, b), "relu")
        for a, b in [(8, 6), (6, 5), (5, 4)]))
    model = StudentModel(ext, StudentLayer(rng.uniform(-1, 1, (4, 3)), rng.uniform(-1, 1, 3)))
    x = rng.standard_normal(8)
    expected, _, _ = naive_forward(model_layers(model), model.student.weights.tolist(),
                                   model.student.biases.tolist(), x)
    np.testing.assert_allclose(model.extract_features(x), expected, rtol=0, atol=2**-45)
    h = x
    for layer in ext.layers:  # matrix-product oracle
        h = np.maximum(h @ layer.weights + layer.biases, 0)
    np.testing.assert_allclose(model.extract_features(x), h, rtol=0, atol=1e-13)


def test_extractor_dimension_checks():
    with pytest.raises(UsageError):
        FeatureExtractor((DenseLayer(np.ones((3, 4)), np.zeros(4)), DenseLayer(np.ones((3, 2)), np.zeros(2))))
    model = StudentModel(FeatureExtractor.identity(3), StudentLayer(np.zeros((3, 2)), np.zeros(2)))
    with pytest.raises(UsageError):
        model.extract_features([1.0, 2.0])
    with pytest.raises(NumericDomainError):
        model.extract_features([1.0, math.inf, 2.0])
    with pytest.raises(UsageError):
        StudentModel(FeatureExtractor.identity(2), StudentLayer(np.zeros((3, 2)), np.zeros(2)))


def test_forward_is_deterministic(desk_model):
    x = np.random.default_rng(0).standard_normal(32)
    assert desk_model.forward(x).tobytes() == desk_model.forward(x).tobytes()


def test_zero_weight_product_fault_is_invisible():
    W = np.array([[0.0, 0.3], [0.7, -0.4]])
    model = StudentModel(FeatureExtractor.identity(2), StudentLayer(W, [0.1, 0.2]))
    x = [1.5, -2.0]
    assert model.forward(x, FaultSpec(Product(0, 0), SignFlip())).tolist() == model.forward(x).tolist()


def test_bias_sign_fault_against_hand_evaluation(small_model):
    expected = mp_softmax([-0.1 + 0.5, -0.2 - 0.25])
    got = small_model.forward([1.0], FaultSpec(Bias(0), SignFlip()))
    np.testing.assert_allclose(got, expected, rtol=2**-50, atol=0)
    np.testing.assert_allclose(small_model.forward([1.0]), mp_softmax([0.6, -0.45]), rtol=2**-50)


def test_fault_bounds_checked(small_model):
    with pytest.raises(UsageError):
        small_model.forward([1.0], FaultSpec(Product(1, 0), SignFlip()))
    with pytest.raises(UsageError):
        small_model.forward([1.0], FaultSpec(Bias(2), SignFlip()))


def test_nonfinite_fault_result_is_an_error(small_model):
    with pytest.raises(NumericDomainError):
        small_model.forward([1.0], FaultSpec(Bias(0), SetValue(math.inf)))


def test_forward_equals_softmax_of_features(desk_model):
    from sniff.numeric import softmax

    x = np.random.default_rng(5).standard_normal(32)
    I = desk_model.extract_features(x)
    y = np.zeros(desk_model.m)
    for i in range(desk_model.n):
        y = y + I[i] * desk_model.student.weights[i]
    y = y + desk_model.student.biases
    assert desk_model.forward(x).tobytes() == softmax(y).tobytes()


def test_forward_agrees_with_naive_oracle():
    rng = np.random.default_rng(11)
    for _ in range(40):
        n, m = int(rng.integers(1, 65)), int(rng.integers(1, 65))
        model = random_model(rng, n, m, input_dim=int(rng.integers(1, 12)), depth=int(rng.integers(1, 4)))
        x = rng.standard_normal(model.extractor.input_dim)
        _, _, z = naive_forward(model_layers(model), model.student.weights.tolist(),
                                model.student.biases.tolist(), x)
        assert np.max(np.abs(model.forward(x) - z)) <= 2**-45


def test_batch_predict_matches_single_forward(desk_model):
    X = np.random.default_rng(9).standard_normal((50, 32))
    single = [int(np.argmax(desk_model.forward(x))) for x in X]
    assert desk_model.predict(X).tolist() == single


def test_model_is_immutable(desk_model):
    with pytest.raises(ValueError):
        desk_model.student.weights[0, 0] = 1.0


# -- synthetic generation ----------------------------------------------------

def test_generate_is_deterministic():
    a = generate_synthetic(7, [8, 6], 6, 3)
    b = generate_synthetic(7, [8, 6], 6, 3)
    assert save_model(a) == save_model(b)
    assert save_model(a) != save_model(generate_synthetic(8, [8, 6], 6, 3))


def test_generate_respects_range():
    model = generate_synthetic(3, [10, 7, 5], 5, 4, weight_range=(-1, 1))
    arrays = [model.student.weights, model.student.biases]
    for layer in model.extractor.layers:
        arrays += [layer.weights, layer.biases]
    assert all(np.all((a >= -1) & (a <= 1)) for a in arrays)
    assert [layer.activation for layer in model.extractor.layers] == ["relu", "identity"]


def test_generate_golden_checksum():
    data = save_model(generate_synthetic(42, [8, 6], 6, 3))
    assert hashlib.sha256(data).hexdigest() == GOLDEN_SEED42_SHA256


@pytest.mark.parametrize("args", [
    ([8], 8, 3), ([8, 0], 0, 3), ([8, 6], 6, 0), ([8, 6], 5, 3),
])
def test_generate_rejects_bad_dims(args):
    dims, n, m = args
    with pytest.raises(UsageError):
        generate_synthetic(1, dims, n, m)


def test_generate_rejects_bad_range():
    with pytest.raises(UsageError):
        generate_synthetic(1, [4, 3], 3, 2, weight_range=(1.0, -1.0))


def test_binary32_model():
    model = generate_synthetic(42, [8, 6], 6, 3, precision="binary32")
    assert model.student.weights.dtype == np.float32
    assert model.forward(np.ones(8)).dtype == np.float32
    assert model.forward(np.ones(8), FaultSpec(Bias(1), SignFlip())).dtype == np.float32


# -- serialization -----------------------------------------------------------

def test_roundtrip_bit_exact():
    model = generate_synthetic(42, [32, 16], 16, 10)
    again = load_model(save_model(model))
    assert save_model(again) == save_model(model)
    assert again.student.weights.tobytes() == model.student.weights.tobytes()


def test_negative_zero_bias_survives():
    model = StudentModel(FeatureExtractor.identity(2), StudentLayer(np.ones((2, 2)), [-0.0, 0.0]))
    again = load_model(save_model(model))
    assert [bits64(v) for v in again.student.biases.tolist()] == [0x8000000000000000, 0]


def test_binary32_roundtrip():
    model = generate_synthetic(1, [5, 4], 4, 3, precision="binary32")
    doc = json.loads(save_model(model))
    assert len(doc["student"]["biases"][0]) == 8
    again = load_model(save_model(model))
    assert again.precision == "binary32"
    assert again.student.weights.tobytes() == model.student.weights.tobytes()


def _doc():
    return json.loads(save_model(generate_synthetic(42, [8, 6], 6, 3)))


def test_load_rejects_wrong_weight_count():
    doc = _doc()
    doc["student"]["weights"].pop()
    with pytest.raises(FormatError, match=r"\$\.student\.weights.*6x3 = 18"):
        load_model(json.dumps(doc))


def test_load_rejects_decimal_literal():
    doc = _doc()
    doc["student"]["biases"][1] = 0.25
    with pytest.raises(FormatError) as exc:
        load_model(json.dumps(doc))
    assert exc.value.path == "$.student.biases[1]"


def test_load_rejects_bad_hex():
    doc = _doc()
    doc["extractor"][0]["weights"][2][3] = "zz00000000000000"
    with pytest.raises(FormatError) as exc:
        load_model(json.dumps(doc))
    assert exc.value.path == "$.extractor[0].weights[2][3]"


@pytest.mark.parametrize("mutate, path", [
    (lambda d: d.pop("student"), "$"),
    (lambda d: d.update(precision="binary16"), "$.precision"),
    (lambda d: d["extractor"][0].update(activation="gelu"), "$.extractor[0].activation"),
    (lambda d: d["extractor"][0]["biases"].pop(), "$.extractor[0].biases"),
    (lambda d: d["student"]["weights"][1].pop(), "$.student.weights[1]"),
    (lambda d: d["student"]["biases"].__setitem__(0, "7ff0000000000000"), "$.student.biases[0]"),
])
def test_load_errors_name_path(mutate, path):
    doc = _doc()
    mutate(doc)
    with pytest.raises(FormatError) as exc:
        load_model(json.dumps(doc))
    assert exc.value.path == path


def test_load_rejects_garbage():
    with pytest.raises(FormatError):
        load_model(b"{not json")


special = st.sampled_from([0.0, -0.0, 5e-324, -5e-324, 2.2250738585072009e-308, 1.0, -2.5])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**64 - 1), st.lists(special, min_size=1, max_size=6))
def test_roundtrip_with_special_values(seed, values):
    model = generate_synthetic(seed, [4, 3], 3, 2)
    W = model.student.weights.copy().ravel()
    W[: len(values)] = values
    model = model.with_student(StudentLayer(W.reshape(3, 2), [-0.0, 5e-324]))
    assert save_model(load_model(save_model(model))) == save_model(model)
