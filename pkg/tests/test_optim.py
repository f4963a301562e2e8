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

import numpy as np
import pytest

from dualqa.optim import cmaes
from dualqa.optim.cmaes import CovarianceDegeneracyError, cmaes_minimize
from dualqa.optim.de import de_minimize
from dualqa.optim.space import CLAMP, MODULO, RANDOM_RESET, Budget, BudgetError, SearchSpace


def sphere(x):
    return float(np.sum(np.square(x)))


class Spy:
    """Counts calls and checks every point against the search space."""

    def __init__(self, f, s):
        self.f = f
        self.s = s
        self.calls = 0
        self.outside = 0

    def __call__(self, x):
        self.calls += 1
        if not self.s.contains(x):
            self.outside += 1
        return self.f(x)


def test_search_space_repair():
    s = SearchSpace([0, 0, -1], [8, 8, 1], [MODULO, CLAMP, RANDOM_RESET])
    rng = np.random.default_rng(0)
    out = s.repair(np.array([9.5, -3.0, 2.0]), rng)
    assert out[0] == pytest.approx(1.5)
    assert out[1] == 0.0
    assert -1 <= out[2] <= 1
    clamped = s.repair(np.array([[-0.5, 9.0, -7.0]]), rng, CLAMP)
    assert clamped[0, 0] == pytest.approx(7.5)
    assert clamped[0, 1] == 8.0
    assert clamped[0, 2] == -1.0
    redrawn = s.repair(np.array([8.0, np.nan, np.inf]), rng, CLAMP)
    assert s.contains(redrawn)
    assert redrawn[0] == 0.0


def test_search_space_validation():
    with pytest.raises(ValueError):
        SearchSpace([0], [0], [CLAMP])
    with pytest.raises(ValueError):
        SearchSpace([0], [1], ['bounce'])
    with pytest.raises(BudgetError):
        Budget(0)


def test_de_sphere():
    s = SearchSpace.box(5, -5, 5)
    result = de_minimize(sphere, s, 20, 100, 0.9, 0.5, seed=0, b=Budget(20 * 101))
    assert result.best_value < 1e-2
    assert result.evaluations == 20 * 101
    assert result.generations == 100
    assert result.stop_reason == 'generations'


def test_de_deterministic():
    s = SearchSpace.box(5, -5, 5)
    a = de_minimize(sphere, s, 20, 30, 1.0, 0.5, seed=4, b=Budget(10000))
    b = de_minimize(sphere, s, 20, 30, 1.0, 0.5, seed=4, b=Budget(10000))
    assert a.best_value == b.best_value
    assert np.array_equal(a.best_point, b.best_point)
    assert a.history == b.history


def test_de_constant_runs_to_budget():
    s = SearchSpace.box(3, 0, 1)
    spy = Spy(lambda x: 7.0, s)
    result = de_minimize(spy, s, 10, 1000, 1.0, 0.5, seed=1, b=Budget(100))
    assert result.best_value == 7.0
    assert result.stop_reason == 'budget'
    assert not result.stopped_early
    assert result.evaluations == spy.calls == 100
    assert spy.outside == 0


def test_de_early_stop_on_seeded_point():
    s = SearchSpace.box(4, -1, 1)
    target = np.array([0.25, -0.5, 0.75, 0.0])

    def indicator(x):
        return 0.0 if np.allclose(x, target, atol=1e-12) else 1.0

    result = de_minimize(indicator, s, 10, 50, 1.0, 0.5, seed=0,
                         b=Budget(10000, early_stop=lambda v: v < 0.5), init=target[None, :])
    assert result.stopped_early
    assert result.stop_reason == 'early-stop'
    assert result.evaluations == 1
    assert result.generations == 0
    assert np.array_equal(result.best_point, target)


def test_de_rejects_population_above_budget():
    s = SearchSpace.box(2, 0, 1)
    with pytest.raises(BudgetError):
        de_minimize(sphere, s, 40, 10, 1.0, 0.5, seed=0, b=Budget(39))
    with pytest.raises(ValueError):
        de_minimize(sphere, s, 3, 10, 1.0, 0.5, seed=0, b=Budget(100))


def test_de_trials_stay_in_bounds():
    s = SearchSpace.box(6, 0, 1)
    spy = Spy(lambda x: -float(np.sum(x)), s)
    de_minimize(spy, s, 12, 40, 1.0, 0.9, seed=2, b=Budget(10000))
    assert spy.outside == 0


def test_cmaes_sphere():
    s = SearchSpace.box(10, -5, 5)
    result = cmaes_minimize(sphere, s, 1.0, seed=0, b=Budget(5000))
    assert result.best_value < 1e-6
    assert result.evaluations <= 5000


def test_cmaes_one_dimension():
    s = SearchSpace.box(1, 0, 10)
    result = cmaes_minimize(lambda x: float((x[0] - 3.0)**2), s, 2.0, seed=3, b=Budget(1000))
    assert abs(result.best_point[0] - 3.0) < 1e-3


def test_cmaes_repairs_into_bounds():
    s = SearchSpace.box(8, 0, 1)
    spy = Spy(lambda x: float(np.sum(x)), s)
    result = cmaes_minimize(spy, s, 0.25, seed=5, b=Budget(2000))
    assert spy.outside == 0
    assert np.all(result.best_point >= 0)
    assert result.evaluations == spy.calls


def test_cmaes_deterministic():
    s = SearchSpace.box(6, -3, 3)
    a = cmaes_minimize(sphere, s, 0.5, seed=9, b=Budget(600))
    b = cmaes_minimize(sphere, s, 0.5, seed=9, b=Budget(600))
    assert a.best_value == b.best_value
    assert a.evaluations == b.evaluations
    assert np.array_equal(a.best_point, b.best_point)
    assert a.history == sorted(a.history, reverse=True)


def test_cmaes_budget_and_early_stop():
    s = SearchSpace.box(4, -2, 2)
    spy = Spy(sphere, s)
    result = cmaes_minimize(spy, s, 0.5, seed=0, b=Budget(50))
    assert result.evaluations == spy.calls == 50
    assert result.stop_reason == 'budget'
    stopped = cmaes_minimize(sphere, s, 0.5, seed=0, b=Budget(5000, early_stop=lambda v: v < 1.0),
                             x0=np.zeros(4))
    assert stopped.stopped_early
    assert stopped.stop_reason == 'early-stop'
    assert stopped.best_value < 1.0


def test_cmaes_rejects_bad_sigma():
    with pytest.raises(ValueError):
        cmaes_minimize(sphere, SearchSpace.box(2, 0, 1), 0.0, seed=0, b=Budget(10))


def test_cmaes_degeneracy_restarts_once(monkeypatch):

    def degenerate(self):
        raise cmaes._Degenerate('forced')

    monkeypatch.setattr(cmaes.CMAES, 'update_eigensystem', degenerate)
    with pytest.raises(CovarianceDegeneracyError):
        cmaes_minimize(sphere, SearchSpace.box(3, -1, 1), 0.5, seed=0, b=Budget(100))


def test_cmaes_restarts_on_a_flat_objective():
    s = SearchSpace.box(2, -1, 1)
    spy = Spy(lambda x: 0.0, s)
    result = cmaes_minimize(spy, s, 0.3, seed=1, b=Budget(3000))
    assert result.restarts >= 1
    assert result.evaluations == spy.calls == 3000
    assert result.stop_reason == 'budget'
    assert spy.outside == 0


def test_cmaes_restart_leaves_a_plateau():
    s = SearchSpace.box(1, 0, 10)

    def step(x):
        return 0.0 if x[0] < 5.0 else -1.0

    # the first run starts far from the step with a tiny step size
    result = cmaes_minimize(step, s, 0.05, seed=4, b=Budget(20000, early_stop=lambda v: v < 0), x0=np.zeros(1))
    assert result.restarts >= 1
    assert result.stop_reason == 'early-stop'
    assert result.best_point[0] >= 5.0
