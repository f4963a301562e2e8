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

import abc
import io
import math
import threading
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import torch

from dualqa.imagecore.image import Image, ShapeMismatchError
from dualqa.predictor.models import (KIND_CODES, KIND_NAMES, MODEL_KINDS, LinearSoftmax, build_model,
                                     load_parameters)
from dualqa.utils.binary import WeightShapeError, read_weights, write_weights
from dualqa.utils.file_utils import atomic_write

CONFIDENCE_TOLERANCE = 1e-6


class PredictorError(RuntimeError):
    """A model failed to produce a prediction."""


class InvalidPredictionError(ValueError):
    pass


@dataclass(frozen=True)
class SoftPrediction:
    confidences: Tuple[float, ...]
    label: int

    @classmethod
    def from_confidences(cls, confidences: Sequence[float]) -> 'SoftPrediction':
        values = np.asarray(confidences, dtype=np.float64).reshape(-1)
        if values.size < 2:
            raise InvalidPredictionError('need at least 2 confidences, got {}'.format(values.size))
        if not np.all(np.isfinite(values)) or values.min() < 0.0 or values.max() > 1.0:
            raise InvalidPredictionError('confidences must lie in [0, 1]: {}'.format(values.tolist()))
        total = float(values.sum())
        if abs(total - 1.0) > CONFIDENCE_TOLERANCE:
            raise InvalidPredictionError('confidences sum to {}, expected 1'.format(total))
        # np.argmax returns the first maximum, so ties go to the lowest index
        return cls(confidences=tuple(float(v) for v in values), label=int(np.argmax(values)))

    @property
    def num_classes(self) -> int:
        return len(self.confidences)

    def confidence(self, c: int) -> float:
        return self.confidences[c]

    def log_odds(self, c: int) -> float:
        """log g_c - log sum_{j != c} g_j, ordered exactly like g_c."""
        rest = math.fsum(v for j, v in enumerate(self.confidences) if j != c)
        own = self.confidences[c]
        if own <= 0.0:
            return -math.inf
        if rest <= 0.0:
            return math.inf
        return math.log(own) - math.log(rest)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    e = np.exp(shifted)
    return e / e.sum()


class Predictor(abc.ABC):
    """Black-box soft-label classifier over images of one shape."""

    def __init__(self, input_shape: Tuple[int, int, int], num_classes: int):
        if num_classes < 2:
            raise ValueError('num_classes must be >= 2, got {}'.format(num_classes))
        self.input_shape = tuple(int(v) for v in input_shape)
        self.num_classes = int(num_classes)
        self._evaluations = 0
        self._counter_lock = threading.Lock()

    @property
    def evaluations(self) -> int:
        return self._evaluations

    def predict(self, x: Image) -> SoftPrediction:
        if x.shape != self.input_shape:
            raise ShapeMismatchError('image shape {} does not match predictor shape {}'.format(x.shape, self.input_shape))
        with self._counter_lock:
            self._evaluations += 1
        confidences = self._confidences(x.pixels)
        if len(confidences) != self.num_classes:
            raise InvalidPredictionError('expected {} confidences, got {}'.format(self.num_classes, len(confidences)))
        return SoftPrediction.from_confidences(confidences)

    @abc.abstractmethod
    def _confidences(self, pixels: np.ndarray) -> Sequence[float]:
        """Per-class confidences for an (h, w, c) array with values in [0, 255]."""

    def __getstate__(self):
        state = self.__dict__.copy()
        state.pop('_counter_lock', None)
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._counter_lock = threading.Lock()


class BuiltinPredictor(Predictor):
    """Wraps a trained built-in torch model; inputs are raw [0, 255] pixels."""

    def __init__(self, model: torch.nn.Module, input_shape: Tuple[int, int, int], seed: int = 0):
        super().__init__(input_shape, model.num_classes)
        if model.input_size != int(np.prod(self.input_shape)):
            raise ValueError('model takes {} inputs, shape {} has {}'.format(
                model.input_size, self.input_shape, int(np.prod(self.input_shape))))
        self.model = model.eval()
        self.kind = model.KIND
        self.seed = seed

    @torch.no_grad()
    def logits(self, pixels: np.ndarray) -> np.ndarray:
        x = torch.from_numpy(np.ascontiguousarray(pixels, dtype=np.float64).reshape(1, -1))
        return self.model(x)[0].numpy()

    def _confidences(self, pixels: np.ndarray) -> Sequence[float]:
        return softmax(self.logits(pixels))

    def parameters_numpy(self):
        return [p.detach().numpy().copy() for p in self.model.parameter_list()]


def linear_predictor(weight: np.ndarray, bias: np.ndarray, input_shape: Tuple[int, int, int]) -> BuiltinPredictor:
    """LinearSoftmax with hand-set weights in pixel units (num_classes x k)."""
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    model = LinearSoftmax(weight.shape[1], weight.shape[0])
    load_parameters(model, [weight, bias])
    return BuiltinPredictor(model, input_shape)


def save_weights(p: BuiltinPredictor, path: str):
    if not 0 <= p.seed < 2**64:
        raise ValueError('seed {} does not fit the weight header'.format(p.seed))
    buf = io.BytesIO()
    write_weights(buf, KIND_CODES[p.kind], p.input_shape, p.num_classes, p.model.hidden, p.seed, p.parameters_numpy())
    atomic_write(path, buf.getvalue())


def _tensor_shapes(header):
    if header.kind not in KIND_NAMES:
        raise WeightShapeError('unknown model kind code {}'.format(header.kind))
    model_cls = MODEL_KINDS[KIND_NAMES[header.kind]]
    return model_cls.tensor_shapes(int(np.prod(header.shape)), header.num_classes, header.hidden)


def load_weights(path: str, expected_shape: Optional[Tuple[int, int, int]] = None) -> BuiltinPredictor:
    with open(path, 'rb') as fin:
        header, tensors = read_weights(fin, _tensor_shapes, expected_shape)
    model = build_model(KIND_NAMES[header.kind], int(np.prod(header.shape)), header.num_classes, header.hidden or 32)
    load_parameters(model, tensors)
    return BuiltinPredictor(model, header.shape, seed=header.seed)
