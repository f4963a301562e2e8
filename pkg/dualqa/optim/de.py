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
"""Differential evolution, DE/rand/1/bin."""

import logging
from typing import Optional

import numpy as np

from dualqa.optim.space import RANDOM_RESET, Budget, BudgetError, CountedObjective, Objective, OptResult, SearchSpace


def rand1bin(i, F, X):
    """Mutate a random vector by adding one scaled difference vector."""
    return X[i[0]] + F * (X[i[1]] - X[i[2]])


def _distinct_others(rng: np.random.Generator, n: int, i: int, k: int) -> np.ndarray:
    idx = rng.choice(n - 1, size=k, replace=False)
    return idx + (idx >= i)


def de_minimize(f: Objective, s: SearchSpace, np_: int, generations: int, cr: float, fweight: float,
                seed: int, b: Budget, init: Optional[np.ndarray] = None) -> OptResult:
    """Minimize `f` over `s`.

    Trials are built from the whole current population, then each replaces
    its parent when it is no worse. Out-of-bound trial coordinates are
    redrawn uniformly within bounds; modulo coordinates wrap. Rows of
    `init` replace the first members of the random initial population.
    """
    if np_ < 4:
        raise ValueError('population size must be >= 4, got {}'.format(np_))
    if not 0.0 <= cr <= 1.0:
        raise ValueError('crossover rate must be in [0, 1], got {}'.format(cr))
    if not fweight > 0:
        raise ValueError('mutation weight must be positive, got {}'.format(fweight))
    if generations < 0:
        raise ValueError('generations must be non-negative, got {}'.format(generations))
    if np_ > b.max_evaluations:
        raise BudgetError('population of {} exceeds the budget of {} evaluations'.format(np_, b.max_evaluations))

    rng = np.random.default_rng(seed)
    dim = s.dimension
    population = s.uniform(rng, np_)
    if init is not None:
        rows = np.array(init, dtype=np.float64, ndmin=2)[:np_]
        population[:len(rows)] = s.repair(rows, rng, RANDOM_RESET)

    counted = CountedObjective(f, b)
    fitness = np.full(np_, np.inf)
    for i in range(np_):
        fitness[i] = counted(population[i])
        if counted.stopped_early:
            break
    history = [counted.best_value]

    generation = 0
    while not counted.stopped_early and generation < generations and not counted.exhausted:
        trials = np.empty_like(population)
        for i in range(np_):
            mutant = rand1bin(_distinct_others(rng, np_, i, 3), fweight, population)
            cross = rng.random(dim) < cr
            cross[rng.integers(dim)] = True
            trials[i] = np.where(cross, mutant, population[i])
        trials = s.repair(trials, rng, RANDOM_RESET)
        for i in range(np_):
            value = counted(trials[i])
            if value <= fitness[i]:
                population[i] = trials[i]
                fitness[i] = value
            if counted.stopped_early or counted.exhausted:
                break
        generation += 1
        history.append(counted.best_value)
        logging.debug('DE generation {} best {:.6g} evaluations {}'.format(generation, counted.best_value,
                                                                          counted.evaluations))

    if counted.stopped_early:
        reason = 'early-stop'
    elif generation >= generations:
        reason = 'generations'
    else:
        reason = 'budget'
    return counted.result(seed, generation, reason, history)
