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

import logging
import random
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

from dualqa.imagecore.image import Image


class InsufficientSamplesError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledSample:
    image: Image
    label: int
    id: int


class Dataset:
    """Ordered, immutable collection of labeled images sharing one shape."""

    def __init__(self, samples: Sequence[LabeledSample], num_classes: int,
                 class_names: Optional[Sequence[str]] = None):
        if num_classes < 2:
            raise ValueError('num_classes must be >= 2, got {}'.format(num_classes))
        if class_names is not None and len(class_names) != num_classes:
            raise ValueError('expected {} class names, got {}'.format(num_classes, len(class_names)))
        samples = tuple(samples)
        seen = set()
        for sample in samples:
            if not 0 <= sample.label < num_classes:
                raise ValueError('sample {} has label {} outside [0, {})'.format(sample.id, sample.label, num_classes))
            if sample.id in seen:
                raise ValueError('duplicate sample id {}'.format(sample.id))
            seen.add(sample.id)
            if sample.image.shape != samples[0].image.shape:
                raise ValueError('sample {} has shape {}, expected {}'.format(
                    sample.id, sample.image.shape, samples[0].image.shape))
        self.samples = samples
        self.num_classes = num_classes
        self.class_names = list(class_names) if class_names is not None else None

    @property
    def shape(self) -> Optional[Tuple[int, int, int]]:
        return self.samples[0].image.shape if self.samples else None

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[LabeledSample]:
        return iter(self.samples)

    def __getitem__(self, index: int) -> LabeledSample:
        return self.samples[index]

    def labels(self) -> List[int]:
        return [sample.label for sample in self.samples]

    def subset(self, samples: Sequence[LabeledSample]) -> 'Dataset':
        return Dataset(samples, self.num_classes, self.class_names)

    def split(self, test_fraction: float, seed: int) -> Tuple['Dataset', 'Dataset']:
        """Deterministic shuffled split into (train, test)."""
        if not 0.0 <= test_fraction < 1.0:
            raise ValueError('test_fraction must be in [0, 1), got {}'.format(test_fraction))
        indices = list(range(len(self.samples)))
        random.Random(seed).shuffle(indices)
        num_test = int(round(len(indices) * test_fraction))
        test_idx, train_idx = sorted(indices[:num_test]), sorted(indices[num_test:])
        return (self.subset([self.samples[i] for i in train_idx]),
                self.subset([self.samples[i] for i in test_idx]))


def select_eval_samples(d: Dataset, p, n: int, seed: int,
                        correctly_classified_only: bool = True) -> List[LabeledSample]:
    """Draw `n` samples for assessment, in dataset order.

    With `correctly_classified_only`, only samples the predictor already
    labels correctly are eligible.
    """
    if n < 0:
        raise ValueError('n must be non-negative, got {}'.format(n))
    if correctly_classified_only:
        pool = [sample for sample in d if p.predict(sample.image).label == sample.label]
    else:
        pool = list(d)
    if n > len(pool):
        raise InsufficientSamplesError('requested {} samples but only {} are eligible'.format(n, len(pool)))
    logging.info('selecting {} of {} eligible samples (of {}) with seed {}'.format(n, len(pool), len(d), seed))
    chosen = sorted(random.Random(seed).sample(range(len(pool)), n))
    return [pool[i] for i in chosen]
