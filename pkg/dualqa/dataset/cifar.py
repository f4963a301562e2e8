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
"""CIFAR-10 binary batches.

Each record is one label byte followed by the colour planes (R, then G,
then B), each plane row-major. The CIFAR-10 record is 1 + 32*32*3 = 3073
bytes; other shapes use the same layout with 1 + h*w*c bytes.
"""

import io
import logging
import os
import typing as tp

import numpy as np

from dualqa.dataset.dataset import Dataset, LabeledSample
from dualqa.imagecore.image import Image, quantize

CIFAR10_SHAPE = (32, 32, 3)
CIFAR10_CLASSES = ['airplane', 'automobile', 'bird', 'cat', 'deer',
                   'dog', 'frog', 'horse', 'ship', 'truck']


class TruncatedRecordError(ValueError):
    pass


class InvalidLabelError(ValueError):
    pass


def record_size(shape: tp.Tuple[int, int, int] = CIFAR10_SHAPE) -> int:
    height, width, channels = shape
    return 1 + height * width * channels


def _read_record(fo: tp.IO[bytes], size: int, index: int) -> bytes:
    buf = b""
    while len(buf) < size:
        new_buf = fo.read(size - len(buf))
        if not new_buf:
            if buf:
                raise TruncatedRecordError("record {} has {} bytes, expected {}.".format(index, len(buf), size))
            return buf
        buf += new_buf
    return buf


def parse_cifar10_binary(data: tp.Union[bytes, bytearray, tp.IO[bytes]],
                         shape: tp.Tuple[int, int, int] = CIFAR10_SHAPE,
                         num_classes: int = 10,
                         class_names: tp.Optional[tp.Sequence[str]] = None,
                         first_id: int = 0) -> Dataset:
    """Parse a byte stream of records into a Dataset, one record at a time."""
    fo = io.BytesIO(data) if isinstance(data, (bytes, bytearray, memoryview)) else data
    height, width, channels = shape
    size = record_size(shape)
    if class_names is None and num_classes == len(CIFAR10_CLASSES):
        class_names = CIFAR10_CLASSES
    samples = []
    index = 0
    while True:
        record = _read_record(fo, size, index)
        if not record:
            break
        label = record[0]
        if label >= num_classes:
            raise InvalidLabelError("record {} has label {} > {}.".format(index, label, num_classes - 1))
        planes = np.frombuffer(record, dtype=np.uint8, offset=1).reshape(channels, height, width)
        pixels = np.ascontiguousarray(planes.transpose(1, 2, 0), dtype=np.float64)
        samples.append(LabeledSample(image=Image._wrap(pixels), label=int(label), id=first_id + index))
        index += 1
    return Dataset(samples, num_classes, class_names)


def serialize_cifar10_binary(dataset: Dataset) -> bytes:
    """Inverse of `parse_cifar10_binary`; pixels are quantized to 8 bits."""
    if dataset.num_classes > 256:
        raise ValueError("labels do not fit in one byte.")
    out = io.BytesIO()
    for sample in dataset:
        out.write(bytes([sample.label]))
        out.write(np.ascontiguousarray(quantize(sample.image).transpose(2, 0, 1)).tobytes())
    return out.getvalue()


def read_class_names(meta_file: str) -> tp.List[str]:
    with open(meta_file, 'r', encoding='utf8') as fin:
        return [line.strip() for line in fin if line.strip()]


def load_cifar10(paths: tp.Sequence[str],
                 shape: tp.Tuple[int, int, int] = CIFAR10_SHAPE,
                 num_classes: int = 10) -> Dataset:
    """Stream one or more batch files from disk into a single Dataset."""
    samples = []
    class_names = None
    for path in paths:
        with open(path, 'rb') as fin:
            part = parse_cifar10_binary(fin, shape=shape, num_classes=num_classes, first_id=len(samples))
        logging.info('loaded {} records from {}'.format(len(part), path))
        samples.extend(part.samples)
        meta_file = os.path.join(os.path.dirname(os.path.abspath(path)), 'batches.meta.txt')
        if class_names is None and os.path.exists(meta_file):
            names = read_class_names(meta_file)
            if len(names) == num_classes:
                class_names = names
    return Dataset(samples, num_classes, class_names or (CIFAR10_CLASSES if num_classes == 10 else None))
