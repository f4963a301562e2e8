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

import os
import sys

import numpy as np
import pytest

from dualqa.dataset.dataset import LabeledSample
from dualqa.dataset.synth import synth_blobs
from dualqa.imagecore.image import Image, norms
from dualqa.predictor.predictor import Predictor, PredictorError, linear_predictor
from dualqa.predictor.train import train

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
ECHO_PREDICTOR = os.path.join(ROOT, 'tools', 'echo_predictor.py')


def echo_command(mode='uniform', *extra):
    return [sys.executable, ECHO_PREDICTOR, '--mode', mode, *extra]


def one_hot(label, num_classes, confidence=0.9):
    rest = (1.0 - confidence) / (num_classes - 1)
    probs = [rest] * num_classes
    probs[label] = confidence
    return probs


class ConstantPredictor(Predictor):
    """Same answer for every input: no perturbation ever changes the label."""

    def __init__(self, shape, num_classes=2, label=0):
        super().__init__(shape, num_classes)
        self.label = label

    def _confidences(self, pixels):
        return one_hot(self.label, self.num_classes)


class RuggedPredictor(Predictor):
    """Always label 0, with a confidence that jumps around between inputs."""

    def _confidences(self, pixels):
        weights = np.arange(1, pixels.size + 1, dtype=np.float64)
        v = np.sin(pixels.reshape(-1) @ weights * 12.9898) * 43758.5453
        v = v - np.floor(v)
        return [0.6 + 0.3 * v, 0.4 - 0.3 * v]


class RegisteredPredictor(Predictor):
    """Labels an input like the registered original closest to it in L1.

    `fooled(sample_id, original, candidate)` decides whether the label flips
    away from the original's label.
    """

    def __init__(self, samples, num_classes=2):
        samples = list(samples)
        super().__init__(samples[0].image.shape, num_classes)
        self.ids = [s.id for s in samples]
        self.labels = [s.label for s in samples]
        self.originals = np.stack([s.image.pixels for s in samples])

    def fooled(self, sample_id, original, candidate):
        return False

    def _confidences(self, pixels):
        distances = np.abs(self.originals - pixels).reshape(len(self.ids), -1).sum(axis=1)
        i = int(np.argmin(distances))
        label = self.labels[i]
        if self.fooled(self.ids[i], self.originals[i], pixels):
            label = (label + 1) % self.num_classes
        return one_hot(label, self.num_classes)


class FragilePredictor(RegisteredPredictor):
    """Flips the label whenever any value differs from the original."""

    def fooled(self, sample_id, original, candidate):
        return not np.array_equal(original, candidate)


class DualFragilePredictor(RegisteredPredictor):
    """Partitions samples by id mod 4.

    0: fooled by a sparse large change or a dense change, 1: sparse only,
    2: dense only, 3: never. A sparse large change moves some value by at
    least 128; a dense change touches more than half the pixels.
    """

    SPARSE = (0, 1)
    DENSE = (0, 2)

    def fooled(self, sample_id, original, candidate):
        diff = np.abs(candidate - original)
        sparse = diff.max() >= 128
        dense = np.count_nonzero(diff.max(axis=2)) > diff.shape[0] * diff.shape[1] / 2
        return (sample_id % 4 in self.SPARSE and sparse) or (sample_id % 4 in self.DENSE and dense)


class FailingPredictor(RegisteredPredictor):
    """Answers like `inner` but raises on perturbed copies of chosen samples."""

    def __init__(self, inner, samples, failing_ids):
        super().__init__(samples, inner.num_classes)
        self.inner = inner
        self.failing_ids = set(failing_ids)

    def _confidences(self, pixels):
        distances = np.abs(self.originals - pixels).reshape(len(self.ids), -1).sum(axis=1)
        i = int(np.argmin(distances))
        if self.ids[i] in self.failing_ids and distances[i] > 0:
            raise PredictorError('model backend unavailable')
        return self.inner._confidences(pixels)


class FlakyPredictor(RegisteredPredictor):
    """Fooled by any change to `fragile_ids`; the first perturbed query of each of `flaky_ids` raises."""

    def __init__(self, samples, fragile_ids, flaky_ids):
        super().__init__(samples)
        self.fragile_ids = set(fragile_ids)
        self.flaky_ids = set(flaky_ids)

    def fooled(self, sample_id, original, candidate):
        changed = not np.array_equal(original, candidate)
        if changed and sample_id in self.flaky_ids:
            self.flaky_ids.discard(sample_id)
            raise PredictorError('connection reset')
        return changed and sample_id in self.fragile_ids


class NormSpy(Predictor):
    """Checks the norm bound of every queried image against one original."""

    def __init__(self, inner, original, norm, th):
        super().__init__(inner.input_shape, inner.num_classes)
        self.inner = inner
        self.original = original
        self.norm = norm
        self.th = th
        self.violations = []

    def _confidences(self, pixels):
        quad = norms(self.original, Image(pixels))
        bound = quad.l0_pixels if self.norm == 'l0' else quad.linf
        if bound > self.th:
            self.violations.append(quad)
        return self.inner._confidences(pixels)


class BlackBox:
    """Exposes only what an attack may touch."""

    __slots__ = ('_inner', )

    def __init__(self, inner):
        self._inner = inner

    def predict(self, x):
        return self._inner.predict(x)


def constant_samples(shape, count, seed=0, label=0):
    rng = np.random.default_rng(seed)
    return [LabeledSample(image=Image(rng.integers(0, 256, size=shape).astype(np.float64)), label=label, id=i)
            for i in range(count)]


def linear_margins(p, x, c):
    """Oracle for a linear softmax model: can some th-bounded, clipped delta move the label off c."""
    weight = p.model.linear.weight.detach().numpy()
    bias = p.model.linear.bias.detach().numpy()
    flat = x.flat()

    def feasible(th):
        lo = np.maximum(-th, -flat)
        hi = np.minimum(th, 255.0 - flat)
        for o in range(weight.shape[0]):
            if o == c:
                continue
            d = weight[c] - weight[o]
            margin = d @ flat + bias[c] - bias[o]
            worst = margin + np.minimum(d * lo, d * hi).sum()
            if worst < 0:
                return True
        return False

    return feasible


@pytest.fixture(scope='session')
def blobs():
    return synth_blobs(2, 200, (8, 8, 3), 200.0, seed=1)


@pytest.fixture(scope='session')
def linear_model(blobs):
    return train('linear', blobs, 20, 0.1, seed=0)


# distance of the two watched pixels from the decision value 100, per class
MARGINS = ((0, (0.5, 2.5, 4.5, 7.5, 9.5, 11.5, 20.0, 50.0)), (1, (0.5, 2.5, 4.5, 7.5, 10.5, 20.0)))
WATCHED = (0, 5)


@pytest.fixture(scope='session')
def margin_linear():
    """Two classes split by x[0] + x[5] = 200 on 4x4 gray images.

    A sample whose watched pixels both sit m away from 100 crosses the
    boundary under an L-inf perturbation exactly when th > m.
    """
    weight = np.zeros((2, 16))
    weight[0, list(WATCHED)] = 0.1
    return linear_predictor(weight, np.array([-20.0, 0.0]), (4, 4, 1))


@pytest.fixture(scope='session')
def margin_samples():
    rng = np.random.default_rng(3)
    samples = []
    for label, margins in MARGINS:
        for m in margins:
            pixels = rng.integers(0, 256, size=(4, 4, 1)).astype(np.float64)
            pixels.flat[list(WATCHED)] = 100.0 + m if label == 0 else 100.0 - m
            samples.append(LabeledSample(image=Image(pixels), label=label, id=len(samples)))
    return samples
