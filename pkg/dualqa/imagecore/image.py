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
"""Images, perturbations and the four distance norms used by the attacks."""

import math
from dataclasses import dataclass, asdict
from typing import Iterable, Mapping, Tuple, Union

import numpy as np
from PIL import Image as PILImage

PIXEL_MIN = 0.0
PIXEL_MAX = 255.0

Shape = Tuple[int, int, int]
SparseDelta = Union[Mapping[Tuple[int, int, int], float], Iterable[Tuple[int, int, int, float]]]


class ShapeMismatchError(ValueError):
    pass


class PerturbationError(IndexError):
    pass


class BudgetTooSmallError(ValueError):
    pass


class Image:
    """Immutable H x W x C image with real values in [0, 255].

    Storage is channel-interleaved per pixel (numpy C order of an
    (height, width, channels) array).
    """

    __slots__ = ('_pixels', )

    def __init__(self, pixels):
        arr = np.array(pixels, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError('image must be H x W x C, got shape {}'.format(arr.shape))
        if arr.shape[2] not in (1, 3):
            raise ValueError('image must have 1 or 3 channels, got {}'.format(arr.shape[2]))
        if not np.all(np.isfinite(arr)) or arr.min() < PIXEL_MIN or arr.max() > PIXEL_MAX:
            raise ValueError('pixel values must lie in [0, 255]')
        arr.flags.writeable = False
        self._pixels = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> 'Image':
        # caller guarantees float64, (h, w, c) and range
        image = cls.__new__(cls)
        arr.flags.writeable = False
        image._pixels = arr
        return image

    @classmethod
    def full(cls, shape: Shape, value: float) -> 'Image':
        return cls(np.full(shape, value, dtype=np.float64))

    @classmethod
    def zeros(cls, shape: Shape) -> 'Image':
        return cls.full(shape, 0.0)

    @property
    def pixels(self) -> np.ndarray:
        return self._pixels

    @property
    def height(self) -> int:
        return self._pixels.shape[0]

    @property
    def width(self) -> int:
        return self._pixels.shape[1]

    @property
    def channels(self) -> int:
        return self._pixels.shape[2]

    @property
    def shape(self) -> Shape:
        return tuple(self._pixels.shape)

    @property
    def size(self) -> int:
        return self._pixels.size

    def flat(self) -> np.ndarray:
        return self._pixels.reshape(-1)

    def pixel(self, row: int, col: int) -> Tuple[float, ...]:
        return tuple(float(v) for v in self._pixels[row, col])

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._pixels, other._pixels)

    def __hash__(self):
        return hash((self.shape, self._pixels.tobytes()))

    def __repr__(self):
        return 'Image(height={}, width={}, channels={})'.format(*self.shape)


@dataclass(frozen=True)
class NormQuad:
    l0_pixels: int
    l1: float
    l2: float
    linf: float

    def to_dict(self):
        return asdict(self)


def check_same_shape(a: Image, b: Image):
    if a.shape != b.shape:
        raise ShapeMismatchError('shape mismatch: {} vs {}'.format(a.shape, b.shape))


def norms(a: Image, b: Image) -> NormQuad:
    """Pixel-wise L0 plus L1, L2 and Linf over all channel values."""
    check_same_shape(a, b)
    diff = np.abs(b.pixels - a.pixels)
    return NormQuad(l0_pixels=int(np.count_nonzero(diff.max(axis=2))),
                    l1=float(diff.sum()),
                    l2=float(math.sqrt(float(np.square(diff).sum()))),
                    linf=float(diff.max()))


def _sparse_entries(delta) -> Iterable[Tuple[int, int, int, float]]:
    if isinstance(delta, Mapping):
        for (row, col, channel), value in delta.items():
            yield row, col, channel, value
    else:
        for row, col, channel, value in delta:
            yield row, col, channel, value


def apply_perturbation(x: Image, delta: Union[np.ndarray, SparseDelta]) -> Image:
    """Return clip(x + delta, 0, 255).

    `delta` is either a dense array shaped like the image (or flat of
    length h*w*c) or sparse entries (row, col, channel) -> value.
    Sparse entries addressing the same value accumulate.
    """
    if isinstance(delta, np.ndarray):
        if delta.size != x.size:
            raise ShapeMismatchError('dense delta has {} values, image has {}'.format(delta.size, x.size))
        out = x.pixels + delta.reshape(x.shape).astype(np.float64)
    else:
        out = np.array(x.pixels)
        height, width, channels = x.shape
        for row, col, channel, value in _sparse_entries(delta):
            if not (0 <= row < height and 0 <= col < width and 0 <= channel < channels):
                raise PerturbationError('coordinate ({}, {}, {}) outside {}'.format(row, col, channel, x.shape))
            out[row, col, channel] += value
    if not np.all(np.isfinite(out)):
        raise ValueError('perturbation produced non-finite values')
    return Image._wrap(np.clip(out, PIXEL_MIN, PIXEL_MAX))


def _push_block(x: Image, top: int, left: int, side: int, step: int) -> Image:
    out = np.array(x.pixels)
    block = out[top:top + side, left:left + side]
    # one channel per pixel suffices to count it as changed
    channel = np.argmax(np.maximum(PIXEL_MAX - block, block), axis=2)
    rows, cols = np.indices(channel.shape)
    values = block[rows, cols, channel]
    upward = values < 127.5
    change = np.minimum(float(step), np.where(upward, PIXEL_MAX - values, values))
    block[rows, cols, channel] = np.where(upward, values + change, values - change)
    return Image._wrap(out)


def concentrated_counterexample(x: Image, l2_budget: float) -> Image:
    """Spread a perturbation over as many pixels as an L2 budget allows.

    Every pixel of a centred square block has its channel with the most
    headroom pushed toward the farther extreme by a common whole-number
    step. A step of 1 costs 1 per pixel, so the block side is the largest
    one with side <= l2_budget; the step is then the largest that fits.
    """
    if not l2_budget > 0:
        raise ValueError('l2_budget must be positive, got {}'.format(l2_budget))
    if l2_budget < 1.0:
        raise BudgetTooSmallError('l2 budget {} cannot change a single channel by 1'.format(l2_budget))
    height, width, _ = x.shape
    side = min(height, width, int(math.floor(l2_budget)))
    top, left = (height - side) // 2, (width - side) // 2
    lo, hi = 1, int(PIXEL_MAX)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if norms(x, _push_block(x, top, left, side, mid)).l2 <= l2_budget:
            lo = mid
        else:
            hi = mid - 1
    return _push_block(x, top, left, side, lo)


def quantize(x: Image) -> np.ndarray:
    return np.clip(np.rint(x.pixels), PIXEL_MIN, PIXEL_MAX).astype(np.uint8)


def save_png(x: Image, path: str):
    data = quantize(x)
    if x.channels == 1:
        data = data[:, :, 0]
    PILImage.fromarray(data).save(path, format='PNG')


def load_png(path: str) -> Image:
    with PILImage.open(path) as img:
        if img.mode not in ('L', 'RGB'):
            img = img.convert('RGB')
        return Image(np.asarray(img, dtype=np.float64))
