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

import pickle

import numpy as np
import pytest

from conftest import echo_command
from dualqa.assess.assess import AssessConfig, assess
from dualqa.attacks.attack import ERRORED, AttackSpec, attack
from dualqa.dataset.dataset import LabeledSample
from dualqa.imagecore.image import Image
from dualqa.predictor.external import (IdMismatchError, MalformedResponseError, PredictorExitedError,
                                      PredictorTimeoutError, decode_pixels, encode_pixels, external_predictor)
from dualqa.utils.file_utils import dump_json

SHAPE = (4, 4, 3)


def test_pixels_codec():
    pixels = np.arange(48, dtype=np.float64).reshape(SHAPE)
    assert np.array_equal(decode_pixels(encode_pixels(pixels), SHAPE), pixels)


def test_uniform_stub():
    with external_predictor(echo_command('uniform'), SHAPE, 4) as p:
        prediction = p.predict(Image.full(SHAPE, 30))
        assert prediction.confidences == (0.25, 0.25, 0.25, 0.25)
        assert prediction.label == 0
        p.predict(Image.zeros(SHAPE))
        assert p.evaluations == 2


def test_brightness_stub():
    with external_predictor(echo_command('brightness'), SHAPE, 2) as p:
        assert p.predict(Image.zeros(SHAPE)).label == 0
        assert p.predict(Image.full(SHAPE, 255)).label == 1


def test_malformed_response():
    with external_predictor(echo_command('half'), SHAPE, 2) as p:
        with pytest.raises(MalformedResponseError):
            p.predict(Image.zeros(SHAPE))


def test_id_mismatch():
    with external_predictor(echo_command('wrong-id'), SHAPE, 2) as p:
        with pytest.raises(IdMismatchError):
            p.predict(Image.zeros(SHAPE))


def test_child_exit():
    with external_predictor(echo_command('crash'), SHAPE, 2) as p:
        with pytest.raises(PredictorExitedError):
            p.predict(Image.zeros(SHAPE))


def test_timeout():
    with external_predictor(echo_command('slow', '--delay', '5'), SHAPE, 2, timeout=0.5) as p:
        with pytest.raises(PredictorTimeoutError):
            p.predict(Image.zeros(SHAPE))


def test_timeout_marks_sample_errored():
    sample = LabeledSample(image=Image.zeros(SHAPE), label=0, id=42)
    with external_predictor(echo_command('slow', '--delay', '5'), SHAPE, 2, timeout=0.5) as p:
        outcome = attack(p, sample, AttackSpec('linf', 1, max_evaluations=10))
    assert outcome.status == ERRORED
    assert not outcome.attacked
    assert 'sample 42' in outcome.error
    assert 'PredictorTimeoutError' in outcome.error


def test_pickled_predictor_starts_own_child():
    with external_predictor(echo_command('uniform'), SHAPE, 2) as p:
        clone = pickle.loads(pickle.dumps(p))
        try:
            assert clone._proc is None
            assert clone.predict(Image.zeros(SHAPE)).confidences == (0.5, 0.5)
        finally:
            clone.close()


def test_inherited_child_is_left_running():
    with external_predictor(echo_command('uniform'), SHAPE, 2) as p:
        inherited = p._proc
        # what a forked worker sees: a child started by another process
        p._owner_pid = -1
        try:
            assert p.predict(Image.zeros(SHAPE)).confidences == (0.5, 0.5)
            assert p._proc is not inherited
            assert inherited.poll() is None
        finally:
            inherited.terminate()
            inherited.wait()


def test_assess_with_workers_matches_serial():
    rng = np.random.default_rng(0)
    with external_predictor(echo_command('brightness'), SHAPE, 2) as p:
        images = [Image(rng.integers(0, 256, size=SHAPE).astype(np.float64)) for _ in range(4)]
        samples = [LabeledSample(image=x, label=p.predict(x).label, id=i) for i, x in enumerate(images)]
        parallel = assess(p, samples, AssessConfig(levels=(1, 3), max_evaluations=30, workers=2))
        serial = assess(p, samples, AssessConfig(levels=(1, 3), max_evaluations=30, workers=1))
    assert parallel.errored() == []
    assert all(level.attacked == 4 for level in parallel.levels)
    assert dump_json(parallel.to_dict()) == dump_json(serial.to_dict())
