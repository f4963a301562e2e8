# Copyright (c) 2024 The dualqa Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#   http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import math
import pickle

import numpy as np
import pytest

from dualqa.dataset.synth import synth_blobs
from dualqa.imagecore.image import Image, ShapeMismatchError
from dualqa.predictor.predictor import (InvalidPredictionError, SoftPrediction, linear_predictor, load_weights,
                                        save_weights)
from dualqa.predictor.train import train
from dualqa.utils.binary import BadMagicError, VersionMismatchError, WeightShapeError
from dualqa.utils.train_utils import TrainingDivergedError


def _random_images(shape, count, seed=0):
    rng = np.random.default_rng(seed)
    return [Image(rng.uniform(0, 255, size=shape)) for _ in range(count)]


def test_zero_weights_uniform():
    p = linear_predictor(np.zeros((4, 12)), np.zeros(4), (2, 2, 3))
    prediction = p.predict(Image.full((2, 2, 3), 77))
    assert prediction.confidences == pytest.approx((0.25, 0.25, 0.25, 0.25))
    assert prediction.label == 0


def test_closed_form_two_classes():
    rng = np.random.default_rng(2)
    w = rng.normal(0, 0.01, size=(2, 12))
    p = linear_predictor(w, np.zeros(2), (2, 2, 3))
    x = Image(rng.uniform(0, 255, size=(2, 2, 3)))
    margin = (w[1] - w[0]) @ x.flat()
    expected = 1.0 / (1.0 + math.exp(-margin))
    assert p.predict(x).confidence(1) == pytest.approx(expected, abs=1e-12)


def test_confidences_sum_to_one(linear_model):
    p = linear_model.predictor
    for x in _random_images((8, 8, 3), 20):
        prediction = p.predict(x)
        assert math.fsum(prediction.confidences) == pytest.approx(1.0, abs=1e-6)


def test_predict_shape_mismatch_and_counter(linear_model):
    p = pickle.loads(pickle.dumps(linear_model.predictor))
    before = p.evaluations
    p.predict(Image.zeros((8, 8, 3)))
    p.predict(Image.zeros((8, 8, 3)))
    assert p.evaluations == before + 2
    with pytest.raises(ShapeMismatchError):
        p.predict(Image.zeros((8, 8, 1)))


def test_soft_prediction_validation():
    assert SoftPrediction.from_confidences([0.5, 0.5]).label == 0
    with pytest.raises(InvalidPredictionError):
        SoftPrediction.from_confidences([0.25, 0.25])
    with pytest.raises(InvalidPredictionError):
        SoftPrediction.from_confidences([1.0])
    with pytest.raises(InvalidPredictionError):
        SoftPrediction.from_confidences([1.5, -0.5])


def test_log_odds_orders_like_confidence():
    values = [SoftPrediction.from_confidences([v, 1 - v]) for v in (0.0, 1e-300, 0.2, 0.5, 0.9, 1.0)]
    odds = [s.log_odds(0) for s in values]
    assert odds == sorted(odds)
    assert odds[0] == -math.inf
    assert odds[-1] == math.inf
    assert values[3].log_odds(0) == 0.0


def test_train_linear_separable(linear_model):
    assert linear_model.test_acc >= 0.95
    assert linear_model.train_acc >= 0.95
    assert linear_model.epochs == 20


@pytest.mark.parametrize('kind', ['linear', 'mlp'])
def test_train_zero_epochs_is_chance(blobs, kind):
    result = train(kind, blobs, 0, 0.1, seed=0)
    assert abs(result.test_acc - 0.5) <= 0.15
    x = blobs[0].image
    assert result.predictor.predict(x).confidences == pytest.approx((0.5, 0.5))


def test_train_deterministic():
    d = synth_blobs(3, 30, (4, 4, 3), 120.0, seed=2)
    a = train('mlp', d, 3, 0.05, seed=11)
    b = train('mlp', d, 3, 0.05, seed=11)
    for wa, wb in zip(a.predictor.parameters_numpy(), b.predictor.parameters_numpy()):
        assert np.array_equal(wa, wb)
    assert a.test_acc == b.test_acc


def test_train_diverges():
    d = synth_blobs(2, 200, (4, 4, 1), 100.0, seed=0)
    with pytest.raises(TrainingDivergedError, match='epoch 0'):
        train('linear', d, 3, float('inf'), seed=0)


def test_train_rejects_bad_arguments(blobs):
    with pytest.raises(ValueError):
        train('linear', blobs, 1, 0.0, seed=0)
    with pytest.raises(ValueError):
        train('resnet', blobs, 1, 0.1, seed=0)


def test_weights_round_trip(tmp_path, linear_model):
    d = synth_blobs(2, 40, (4, 4, 3), 150.0, seed=5)
    p = train('mlp', d, 2, 0.1, seed=3).predictor
    path = str(tmp_path / 'mlp.w')
    save_weights(p, path)
    q = load_weights(path, expected_shape=(4, 4, 3))
    assert q.kind == 'mlp'
    assert q.seed == 3
    for x in _random_images((4, 4, 3), 100, seed=8):
        assert q.predict(x) == p.predict(x)


def test_weights_bad_magic(tmp_path, linear_model):
    path = tmp_path / 'linear.w'
    save_weights(linear_model.predictor, str(path))
    data = bytearray(path.read_bytes())
    data[:4] = b'XXXX'
    path.write_bytes(bytes(data))
    with pytest.raises(BadMagicError):
        load_weights(str(path))


def test_weights_version_mismatch(tmp_path, linear_model):
    path = tmp_path / 'linear.w'
    save_weights(linear_model.predictor, str(path))
    data = bytearray(path.read_bytes())
    data[4:6] = (99).to_bytes(2, 'little')
    path.write_bytes(bytes(data))
    with pytest.raises(VersionMismatchError):
        load_weights(str(path))


def test_weights_shape_mismatch(tmp_path, linear_model):
    path = tmp_path / 'linear.w'
    save_weights(linear_model.predictor, str(path))
    with pytest.raises(WeightShapeError):
        load_weights(str(path), expected_shape=(32, 32, 3))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(WeightShapeError):
        load_weights(str(path))
