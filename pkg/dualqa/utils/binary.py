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
"""Raw binary format for built-in classifier weights."""
import typing as tp

import numpy as np
import struct

# format is `DQAW` magic code, then the protocol version as uint16 and the
# model kind as uint8. The shape header follows: image height, width,
# channels, number of classes and hidden width as uint32, then the training
# seed as uint64. The parameters come last as little-endian float64 values,
# tensor after tensor in the order fixed by the model kind.
_weights_header_struct = struct.Struct('<4sHBIIIIIQ')
_WEIGHTS_MAGIC = b'DQAW'
WEIGHTS_VERSION = 1


class BadMagicError(ValueError):
    pass


class VersionMismatchError(ValueError):
    pass


class WeightShapeError(ValueError):
    pass


class WeightsHeader(tp.NamedTuple):
    version: int
    kind: int
    shape: tp.Tuple[int, int, int]
    num_classes: int
    hidden: int
    seed: int


def write_weights(fo: tp.IO[bytes], kind: int, shape: tp.Tuple[int, int, int], num_classes: int,
                  hidden: int, seed: int, tensors: tp.Sequence[np.ndarray]):
    header = _weights_header_struct.pack(_WEIGHTS_MAGIC, WEIGHTS_VERSION, kind, *shape,
                                         num_classes, hidden, seed)
    fo.write(header)
    for tensor in tensors:
        fo.write(np.ascontiguousarray(tensor, dtype='<f8').tobytes())
    fo.flush()


def _read_exactly(fo: tp.IO[bytes], size: int) -> bytes:
    buf = b""
    while len(buf) < size:
        new_buf = fo.read(size - len(buf))
        if not new_buf:
            raise EOFError("Impossible to read enough data from the stream, "
                           f"{size - len(buf)} bytes remaining.")
        buf += new_buf
    return buf


def read_weights_header(fo: tp.IO[bytes]) -> WeightsHeader:
    header_bytes = _read_exactly(fo, _weights_header_struct.size)
    magic, version, kind, height, width, channels, num_classes, hidden, seed = \
        _weights_header_struct.unpack(header_bytes)
    if magic != _WEIGHTS_MAGIC:
        raise BadMagicError("File is not in DQAW format.")
    if version != WEIGHTS_VERSION:
        raise VersionMismatchError("Weights version {} not supported (expected {}).".format(version, WEIGHTS_VERSION))
    return WeightsHeader(version, kind, (height, width, channels), num_classes, hidden, seed)


def read_weights(fo: tp.IO[bytes], tensor_shapes: tp.Callable[[WeightsHeader], tp.Sequence[tp.Tuple[int, ...]]],
                 expected_shape: tp.Optional[tp.Tuple[int, int, int]] = None
                 ) -> tp.Tuple[WeightsHeader, tp.List[np.ndarray]]:
    """Read a whole weight file; nothing is returned unless every check passes."""
    header = read_weights_header(fo)
    if expected_shape is not None and tuple(expected_shape) != header.shape:
        raise WeightShapeError("Weights are for input shape {}, expected {}.".format(header.shape, tuple(expected_shape)))
    shapes = tensor_shapes(header)
    sizes = [int(np.prod(s)) for s in shapes]
    try:
        payload = _read_exactly(fo, 8 * sum(sizes))
    except EOFError as e:
        raise WeightShapeError("Weight payload shorter than the header declares: {}".format(e))
    if fo.read(1):
        raise WeightShapeError("Weight payload longer than the header declares.")
    values = np.frombuffer(payload, dtype='<f8').astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("Weight file contains non-finite values.")
    tensors, offset = [], 0
    for shape, size in zip(shapes, sizes):
        tensors.append(values[offset:offset + size].reshape(shape))
        offset += size
    return header, tensors
