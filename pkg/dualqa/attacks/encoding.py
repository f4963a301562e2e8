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
"""Genome codecs for the Few-Pixel (L0) and Threshold (Linf) attacks.

Few-Pixel genome: th genes of (x, y, v_1 .. v_c), positions taken as
floor modulo the image size, channel values clipped to [0, 255].
Threshold genome: one additive offset per channel value, in [-th, th].
"""

from typing import Tuple

import numpy as np

from dualqa.imagecore.image import PIXEL_MAX, PIXEL_MIN, Image
from dualqa.optim.space import CLAMP, MODULO, SearchSpace

Shape = Tuple[int, int, int]


def l0_genome_size(shape: Shape, th: int) -> int:
    return (2 + shape[2]) * th


def linf_genome_size(shape: Shape) -> int:
    return shape[0] * shape[1] * shape[2]


def encode_decode_l0(genome: np.ndarray, x: Image) -> Image:
    """Overwrite up to th pixels of a copy of `x`; later genes win collisions."""
    height, width, channels = x.shape
    genes = np.asarray(genome, dtype=np.float64).reshape(-1, 2 + channels)
    out = np.array(x.pixels)
    cols = np.mod(np.floor(genes[:, 0]), width).astype(np.int64)
    rows = np.mod(np.floor(genes[:, 1]), height).astype(np.int64)
    values = np.clip(genes[:, 2:], PIXEL_MIN, PIXEL_MAX)
    for row, col, value in zip(rows, cols, values):
        out[row, col] = value
    return Image._wrap(out)


def encode_decode_linf(genome: np.ndarray, x: Image, th: float) -> Image:
    """clip(x + genome, 0, 255) with every channel within th of `x`, exactly."""
    base = x.pixels
    delta = np.clip(np.asarray(genome, dtype=np.float64).reshape(base.shape), -th, th)
    out = np.clip(base + delta, PIXEL_MIN, PIXEL_MAX)
    # x + d - x can round past th; step such values back toward x
    over = np.abs(out - base) > th
    while over.any():
        out[over] = np.nextafter(out[over], base[over])
        over = np.abs(out - base) > th
    return Image._wrap(out)


def l0_search_space(shape: Shape, th: int) -> SearchSpace:
    height, width, channels = shape
    lower, upper, policies = [], [], []
    for _ in range(th):
        lower += [0.0, 0.0] + [PIXEL_MIN] * channels
        upper += [float(width), float(height)] + [PIXEL_MAX] * channels
        policies += [MODULO, MODULO] + [CLAMP] * channels
    return SearchSpace(lower, upper, policies)


def linf_search_space(shape: Shape, th: int) -> SearchSpace:
    return SearchSpace.box(linf_genome_size(shape), -float(th), float(th), CLAMP)
