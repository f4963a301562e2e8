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

import math

import numpy as np
import pytest

from dualqa.imagecore.image import (BudgetTooSmallError, Image, NormQuad, PerturbationError, ShapeMismatchError,
                                    apply_perturbation, concentrated_counterexample, load_png, norms, save_png)


def test_norms_identity():
    rng = np.random.default_rng(0)
    x = Image(rng.uniform(0, 255, size=(5, 4, 3)))
    assert norms(x, x) == NormQuad(0, 0.0, 0.0, 0.0)


def test_norms_single_pixel():
    a = Image.zeros((32, 32, 3))
    pixels = np.zeros((32, 32, 3))
    pixels[0, 0] = 255
    quad = norms(a, Image(pixels))
    assert quad.l0_pixels == 1
    assert quad.l1 == 765
    assert quad.l2 == pytest.approx(441.673, abs=1e-3)
    assert quad.linf == 255


def test_norms_two_pixels():
    a = Image.full((8, 8, 3), 100)
    pixels = np.full((8, 8, 3), 100.0)
    pixels[1, 2, 0] += 10
    pixels[7, 3, 2] += 10
    quad = norms(a, Image(pixels))
    assert quad.l0_pixels == 2
    assert quad.l1 == 20
    assert quad.l2 == pytest.approx(math.sqrt(200))
    assert quad.linf == 10


def test_norms_symmetric_and_ordered():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a = Image(rng.uniform(0, 255, size=(6, 6, 3)))
        b = Image(rng.uniform(0, 255, size=(6, 6, 3)))
        ab, ba = norms(a, b), norms(b, a)
        assert ab == ba
        assert ab.linf <= ab.l2 <= ab.l1
        assert 0 <= ab.l0_pixels <= 36


def test_norms_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        norms(Image.zeros((4, 4, 3)), Image.zeros((4, 4, 1)))


def test_image_rejects_out_of_range():
    with pytest.raises(ValueError):
        Image(np.full((2, 2, 3), 256.0))
    with pytest.raises(ValueError):
        Image(np.full((2, 2, 3), np.nan))
    with pytest.raises(ValueError):
        Image(np.zeros((2, 2, 2)))


def test_image_is_immutable():
    x = Image.zeros((2, 2, 1))
    with pytest.raises(ValueError):
        x.pixels[0, 0, 0] = 1.0


def test_apply_perturbation_clips():
    x = Image.zeros((4, 4, 3))
    y = apply_perturbation(x, {(1, 2, 0): 300.0})
    assert y.pixel(1, 2) == (255.0, 0.0, 0.0)
    assert x.pixel(1, 2) == (0.0, 0.0, 0.0)


def test_apply_perturbation_empty():
    x = Image.full((4, 4, 3), 17)
    assert apply_perturbation(x, {}) == x
    assert apply_perturbation(x, []) == x


def test_apply_perturbation_dense():
    x = Image.full((8, 8, 3), 128)
    y = apply_perturbation(x, np.full((8, 8, 3), 10.0))
    assert np.all(y.pixels == 138)
    assert norms(x, y).linf == 10


def test_apply_perturbation_out_of_bounds():
    x = Image.zeros((4, 4, 3))
    with pytest.raises(PerturbationError):
        apply_perturbation(x, [(4, 0, 0, 1.0)])
    with pytest.raises(PerturbationError):
        apply_perturbation(x, [(0, 0, 3, 1.0)])
    with pytest.raises(ShapeMismatchError):
        apply_perturbation(x, np.zeros(5))


def test_counterexample_budget_too_small():
    with pytest.raises(BudgetTooSmallError):
        concentrated_counterexample(Image.zeros((8, 8, 3)), 0.5)


def test_counterexample_one_full_pixel():
    x = Image.zeros((32, 32, 3))
    y = concentrated_counterexample(x, 255 * math.sqrt(3))
    quad = norms(x, y)
    assert quad.l0_pixels >= 1
    assert quad.l2 <= 255 * math.sqrt(3) + 1e-9


def _max_block_pixels(size, budget):
    # a side-s block moved by 1 in a single channel has l2 = s
    return min(size, int(math.floor(budget)))**2


def test_counterexample_maximizes_changed_pixels():
    x = Image.zeros((32, 32, 3))
    y = concentrated_counterexample(x, 356.0)
    quad = norms(x, y)
    assert quad.l2 <= 356.0
    assert quad.l0_pixels == _max_block_pixels(32, 356.0) == 1024
    # the whole image fits, so the step grows to the largest whole number within budget
    assert quad.linf == math.floor(356.0 / 32)


def test_counterexample_changes_one_channel_per_pixel():
    x = Image.zeros((8, 8, 3))
    y = concentrated_counterexample(x, 10.0)
    quad = norms(x, y)
    assert quad.l0_pixels == 64
    assert quad.l2 == pytest.approx(8.0)
    assert np.count_nonzero(y.pixels - x.pixels) == 64


def test_counterexample_budget_under_one_full_rgb_step():
    x = Image.full((8, 8, 3), 100)
    y = concentrated_counterexample(x, 1.5)
    quad = norms(x, y)
    assert quad.l0_pixels == 1
    assert quad.l2 == pytest.approx(1.0)


def test_counterexample_small_budget_limits_block():
    x = Image.full((16, 16, 1), 200)
    y = concentrated_counterexample(x, 10.0)
    quad = norms(x, y)
    assert quad.l0_pixels == _max_block_pixels(16, 10.0) == 100
    assert quad.l2 <= 10.0
    # values above the midpoint move down
    assert y.pixels.max() == 200


@pytest.mark.parametrize('shape', [(5, 7, 1), (5, 7, 3)])
def test_png_round_trip(tmp_path, shape):
    rng = np.random.default_rng(1)
    x = Image(rng.integers(0, 256, size=shape).astype(np.float64))
    path = str(tmp_path / 'x.png')
    save_png(x, path)
    assert load_png(path) == x
