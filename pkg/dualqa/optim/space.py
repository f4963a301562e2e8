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
"""Search spaces, budgets and results shared by the minimizers."""

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

CLAMP = 'clamp'
RANDOM_RESET = 'random-reset'
MODULO = 'modulo'
REPAIR_POLICIES = (CLAMP, RANDOM_RESET, MODULO)

Objective = Callable[[np.ndarray], float]


class BudgetError(ValueError):
    pass


class SearchSpace:
    """Box bounds with a repair policy per coordinate."""

    def __init__(self, lower: Sequence[float], upper: Sequence[float], policies: Sequence[str]):
        self.lower = np.array(lower, dtype=np.float64).reshape(-1)
        self.upper = np.array(upper, dtype=np.float64).reshape(-1)
        self.policies = tuple(policies)
        if self.lower.size == 0:
            raise ValueError('search space must have at least one dimension')
        if not (self.lower.size == self.upper.size == len(self.policies)):
            raise ValueError('bounds and policies differ in length: {}, {}, {}'.format(
                self.lower.size, self.upper.size, len(self.policies)))
        if not np.all(np.isfinite(self.lower)) or not np.all(np.isfinite(self.upper)):
            raise ValueError('bounds must be finite')
        if not np.all(self.lower < self.upper):
            raise ValueError('lower bounds must be strictly below upper bounds')
        unknown = set(self.policies) - set(REPAIR_POLICIES)
        if unknown:
            raise ValueError('unknown repair policies {}'.format(sorted(unknown)))
        self._modulo = np.array([p == MODULO for p in self.policies])
        for arr in (self.lower, self.upper, self._modulo):
            arr.flags.writeable = False

    @classmethod
    def box(cls, dimension: int, lower: float, upper: float, policy: str = CLAMP) -> 'SearchSpace':
        return cls([lower] * dimension, [upper] * dimension, [policy] * dimension)

    @property
    def dimension(self) -> int:
        return self.lower.size

    def contains(self, x: np.ndarray) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(np.isfinite(x)) and np.all(x >= self.lower) and np.all(x <= self.upper))

    def uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.lower + rng.random((n, self.dimension)) * (self.upper - self.lower)

    def repair(self, points: np.ndarray, rng: np.random.Generator, method: Optional[str] = None) -> np.ndarray:
        """Map points back into the box.

        Modulo coordinates always wrap. The others use `method` when given
        (clamp or random-reset), else their own policy. Non-finite values
        are redrawn uniformly.
        """
        x = np.array(points, dtype=np.float64, ndmin=2)
        lower, upper = self.lower, self.upper
        span = upper - lower
        finite = np.isfinite(x)
        wrapped = lower + np.mod(np.where(finite, x, lower) - lower, span)
        wrapped = np.where(wrapped >= upper, lower, wrapped)
        if method is None:
            reset_cols = np.array([p == RANDOM_RESET for p in self.policies])
        elif method in (CLAMP, RANDOM_RESET):
            reset_cols = np.full(self.dimension, method == RANDOM_RESET)
        else:
            raise ValueError('unknown repair method {}'.format(method))
        outside = (x < lower) | (x > upper)
        redraw = lower + rng.random(x.shape) * span
        clamped = np.clip(x, lower, upper)
        out = np.where(reset_cols & ~self._modulo, np.where(outside, redraw, x), clamped)
        out = np.where(self._modulo, wrapped, out)
        out = np.where(finite | self._modulo, out, redraw)
        return out.reshape(np.shape(points)) if np.ndim(points) == 1 else out


@dataclass(frozen=True)
class Budget:
    max_evaluations: int
    early_stop: Optional[Callable[[float], bool]] = None

    def __post_init__(self):
        if self.max_evaluations < 1:
            raise BudgetError('max_evaluations must be >= 1, got {}'.format(self.max_evaluations))


@dataclass
class OptResult:
    best_point: np.ndarray
    best_value: float
    evaluations: int
    stopped_early: bool
    seed: int
    generations: int = 0
    stop_reason: str = ''
    restarts: int = 0
    history: List[float] = field(default_factory=list)


class CountedObjective:
    """Counts calls, tracks the best point and evaluates the early-stop predicate."""

    def __init__(self, f: Objective, budget: Budget):
        self.f = f
        self.budget = budget
        self.evaluations = 0
        self.best_value = math.inf
        self.best_point: Optional[np.ndarray] = None
        self.stopped_early = False

    def __call__(self, x: np.ndarray) -> float:
        value = float(self.f(x))
        self.evaluations += 1
        if math.isnan(value):
            value = math.inf
        if self.best_point is None or value < self.best_value:
            self.best_value = value
            self.best_point = np.array(x, dtype=np.float64)
        if self.budget.early_stop is not None and self.budget.early_stop(value):
            self.stopped_early = True
        return value

    @property
    def exhausted(self) -> bool:
        return self.evaluations >= self.budget.max_evaluations

    def result(self, seed: int, generations: int, stop_reason: str, history: List[float],
               restarts: int = 0) -> OptResult:
        return OptResult(best_point=self.best_point,
                         best_value=self.best_value,
                         evaluations=self.evaluations,
                         stopped_early=self.stopped_early,
                         seed=seed,
                         generations=generations,
                         stop_reason=stop_reason,
                         restarts=restarts,
                         history=history)
