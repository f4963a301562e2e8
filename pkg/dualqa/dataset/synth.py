# Copyright (c) 2024 The dualqa Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

from typing import Tuple

import numpy as np

from dualqa.dataset.dataset import Dataset, LabeledSample
from dualqa.imagecore.image import Image


def synth_blobs(num_classes: int, per_class: int, shape: Tuple[int, int, int],
                separation: float, seed: int, noise: float = 32.0) -> Dataset:
    """Gaussian blobs around per-class template images.

    Template values are 127.5 + separation / 2 * u with u uniform in
    [-1, 1] per value; samples add N(0, noise^2) per value and are rounded
    to whole 8-bit levels so they export losslessly.
    """
    if num_classes < 2:
        raise ValueError('num_classes must be >= 2, got {}'.format(num_classes))
    if per_class < 1:
        raise ValueError('per_class must be >= 1, got {}'.format(per_class))
    if separation < 0 or noise < 0:
        raise ValueError('separation and noise must be non-negative')
    shape = tuple(int(v) for v in shape)
    rng = np.random.default_rng(seed)
    directions = rng.uniform(-1.0, 1.0, size=(num_classes, ) + shape)
    templates = np.clip(127.5 + 0.5 * separation * directions, 0.0, 255.0)
    labels = np.repeat(np.arange(num_classes), per_class)[rng.permutation(num_classes * per_class)]
    jitter = rng.normal(0.0, noise, size=(labels.size, ) + shape)
    images = np.clip(np.rint(templates[labels] + jitter), 0.0, 255.0)
    samples = [LabeledSample(image=Image._wrap(np.ascontiguousarray(images[i])), label=int(labels[i]), id=i)
               for i in range(labels.size)]
    return Dataset(samples, num_classes)


def parse_synth_spec(text: str) -> Tuple[int, int, Tuple[int, int, int]]:
    """Parse 'CLASSESxPER_CLASSxHxWxC', e.g. '2x200x8x8x3'."""
    parts = text.lower().split('x')
    if len(parts) != 5 or not all(p.isdigit() for p in parts):
        raise ValueError("synthetic dataset must look like CLASSESxPER_CLASSxHxWxC, got '{}'".format(text))
    num_classes, per_class, height, width, channels = (int(p) for p in parts)
    return num_classes, per_class, (height, width, channels)
