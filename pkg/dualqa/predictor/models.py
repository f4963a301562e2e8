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
"""Built-in desk-scale classifiers. Both emit logits over flattened images."""

from typing import List, Tuple

import numpy as np
import torch


class LinearSoftmax(torch.nn.Module):
    KIND = 'linear'

    def __init__(self, input_size: int, num_classes: int, hidden: int = 0):
        super().__init__()
        self.input_size = input_size
        self.num_classes = num_classes
        self.hidden = 0
        self.linear = torch.nn.Linear(input_size, num_classes, dtype=torch.float64)
        with torch.no_grad():
            self.linear.weight.zero_()
            self.linear.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.linear(x)

    def input_layer(self) -> torch.nn.Linear:
        return self.linear

    def parameter_list(self) -> List[torch.Tensor]:
        return [self.linear.weight, self.linear.bias]

    @staticmethod
    def tensor_shapes(input_size: int, num_classes: int, hidden: int) -> List[Tuple[int, ...]]:
        return [(num_classes, input_size), (num_classes, )]


class MlpOneHidden(torch.nn.Module):
    KIND = 'mlp'

    def __init__(self, input_size: int, num_classes: int, hidden: int = 32):
        super().__init__()
        if hidden < 1:
            raise ValueError('hidden width must be >= 1, got {}'.format(hidden))
        self.input_size = input_size
        self.num_classes = num_classes
        self.hidden = hidden
        self.fc1 = torch.nn.Linear(input_size, hidden, dtype=torch.float64)
        self.act = torch.nn.ReLU()
        self.fc2 = torch.nn.Linear(hidden, num_classes, dtype=torch.float64)
        # zero output layer: untrained model predicts the uniform distribution
        with torch.no_grad():
            self.fc2.weight.zero_()
            self.fc2.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))

    def input_layer(self) -> torch.nn.Linear:
        return self.fc1

    def parameter_list(self) -> List[torch.Tensor]:
        return [self.fc1.weight, self.fc1.bias, self.fc2.weight, self.fc2.bias]

    @staticmethod
    def tensor_shapes(input_size: int, num_classes: int, hidden: int) -> List[Tuple[int, ...]]:
        return [(hidden, input_size), (hidden, ), (num_classes, hidden), (num_classes, )]


MODEL_KINDS = {
    LinearSoftmax.KIND: LinearSoftmax,
    MlpOneHidden.KIND: MlpOneHidden,
}
KIND_CODES = {LinearSoftmax.KIND: 0, MlpOneHidden.KIND: 1}
KIND_NAMES = {code: name for name, code in KIND_CODES.items()}


def build_model(kind: str, input_size: int, num_classes: int, hidden: int = 32) -> torch.nn.Module:
    if kind not in MODEL_KINDS:
        raise ValueError('unknown model kind: {} (expected one of {})'.format(kind, sorted(MODEL_KINDS)))
    return MODEL_KINDS[kind](input_size, num_classes, hidden)


@torch.no_grad()
def fold_input_scale(model: torch.nn.Module, scale: float):
    """Rescale the input layer so the model accepts inputs multiplied by 1 / scale."""
    model.input_layer().weight.mul_(scale)


@torch.no_grad()
def load_parameters(model: torch.nn.Module, tensors: List[np.ndarray]):
    params = model.parameter_list()
    if len(params) != len(tensors):
        raise ValueError('expected {} tensors, got {}'.format(len(params), len(tensors)))
    for param, value in zip(params, tensors):
        if tuple(param.shape) != tuple(value.shape):
            raise ValueError('tensor shape {} does not match parameter {}'.format(value.shape, tuple(param.shape)))
        param.copy_(torch.from_numpy(np.array(value, dtype=np.float64)))
