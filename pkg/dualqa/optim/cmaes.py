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
"""(mu/mu_w, lambda)-CMA-ES with rank-one and rank-mu updates and cumulative step-size adaptation."""

import logging
import math
from collections import deque
from typing import Optional

import numpy as np

from dualqa.optim.space import CLAMP, Budget, CountedObjective, Objective, OptResult, SearchSpace

TOLFUN = 1e-12
TOLX = 1e-11
MAX_CONDITION = 1e14
RESTART_SIGMA_FACTOR = 2.0


class CovarianceDegeneracyError(RuntimeError):
    pass


class _Degenerate(Exception):
    pass


class CMAESParameters:
    """static "internal" parameter setting for `CMAES`"""

    def __init__(self, N: int, popsize: Optional[int] = None):
        self.dimension = N
        self.lam = popsize if popsize else 4 + int(3 * math.log(N))
        if self.lam < 2:
            raise ValueError('population size must be >= 2, got {}'.format(self.lam))
        self.mu = int(self.lam / 2)
        _weights = np.log(self.lam / 2 + 0.5) - np.log(np.arange(1, self.mu + 1))
        self.weights = _weights / _weights.sum()
        self.mueff = self.weights.sum()**2 / np.square(self.weights).sum()

        # adaptation
        self.cc = (4 + self.mueff / N) / (N + 4 + 2 * self.mueff / N)
        self.cs = (self.mueff + 2) / (N + self.mueff + 5)
        self.c1 = 2 / ((N + 1.3)**2 + self.mueff)
        self.cmu = min(1 - self.c1, 2 * (self.mueff - 2 + 1 / self.mueff) / ((N + 2)**2 + self.mueff))
        self.damps = 2 * self.mueff / self.lam + 0.3 + self.cs

        # gap to postpone eigendecomposition
        self.lazy_gap_evals = 0.5 * N * self.lam * (self.c1 + self.cmu)**-1 / N**2


class CMAES:
    """Ask/tell CMA-ES state. Sampling uses the owning generator only."""

    def __init__(self, xstart: np.ndarray, sigma: float, rng: np.random.Generator, popsize: Optional[int] = None):
        N = xstart.size
        self.params = CMAESParameters(N, popsize)
        self.rng = rng
        self.xmean = np.array(xstart, dtype=np.float64)
        self.sigma = float(sigma)
        self.pc = np.zeros(N)
        self.ps = np.zeros(N)
        self.C = np.eye(N)
        self.eigenbasis = np.eye(N)
        self.eigenvalues = np.ones(N)
        self.invsqrt = np.eye(N)
        self.condition_number = 1.0
        self.counteval = 0
        self.updated_eval = 0

    def update_eigensystem(self):
        if self.counteval <= self.updated_eval + self.params.lazy_gap_evals:
            return
        self.C = (self.C + self.C.T) / 2
        if not np.all(np.isfinite(self.C)):
            raise _Degenerate('covariance matrix has non-finite entries after {} evaluations'.format(self.counteval))
        eigenvalues, eigenbasis = np.linalg.eigh(self.C)
        if not np.all(np.isfinite(eigenvalues)) or eigenvalues.min() <= 0:
            raise _Degenerate('smallest eigenvalue {} after {} evaluations'.format(eigenvalues.min(), self.counteval))
        self.eigenvalues, self.eigenbasis = eigenvalues, eigenbasis
        self.condition_number = eigenvalues.max() / eigenvalues.min()
        self.invsqrt = (eigenbasis / np.sqrt(eigenvalues)) @ eigenbasis.T
        self.updated_eval = self.counteval

    def ask(self) -> np.ndarray:
        """lambda samples of m + sigma * B * D * Normal(0, I)."""
        self.update_eigensystem()
        z = self.rng.standard_normal((self.params.lam, self.xmean.size))
        y = (z * np.sqrt(self.eigenvalues)) @ self.eigenbasis.T
        return self.xmean + self.sigma * y

    def tell(self, arx: np.ndarray, fitvals: np.ndarray):
        self.counteval += len(fitvals)
        N = self.xmean.size
        par = self.params
        xold = self.xmean

        arx = arx[np.argsort(fitvals, kind='stable')]
        self.xmean = par.weights @ arx[:par.mu]

        y = self.xmean - xold
        z = self.invsqrt @ y
        csn = (par.cs * (2 - par.cs) * par.mueff)**0.5 / self.sigma
        self.ps = (1 - par.cs) * self.ps + csn * z
        ccn = (par.cc * (2 - par.cc) * par.mueff)**0.5 / self.sigma
        # turn off rank-one accumulation when sigma increases quickly
        hsig = (np.square(self.ps).sum() / N
                / (1 - (1 - par.cs)**(2 * self.counteval / par.lam))
                < 2 + 4. / (N + 1))
        self.pc = (1 - par.cc) * self.pc + ccn * hsig * y

        c1a = par.c1 * (1 - (1 - hsig**2) * par.cc * (2 - par.cc))
        dx = arx[:par.mu] - xold
        self.C *= 1 - c1a - par.cmu * par.weights.sum()
        self.C += par.c1 * np.outer(self.pc, self.pc)
        self.C += (par.cmu / self.sigma**2) * (dx.T * par.weights) @ dx

        cn, sum_square_ps = par.cs / par.damps, np.square(self.ps).sum()
        self.sigma *= math.exp(min(1, cn * (sum_square_ps / N - 1) / 2))
        if not math.isfinite(self.sigma) or self.sigma <= 0:
            raise _Degenerate('step size became {}'.format(self.sigma))


def _stop_condition(es: CMAES, best_window: deque, fitvals: np.ndarray, stalled: int) -> Optional[str]:
    if len(best_window) == best_window.maxlen and \
            max(max(best_window), fitvals.max()) - min(min(best_window), fitvals.min()) < TOLFUN:
        return 'tolfun'
    if es.sigma * math.sqrt(es.eigenvalues.max()) < TOLX:
        return 'tolx'
    if es.condition_number > MAX_CONDITION:
        return 'condition'
    if stalled >= best_window.maxlen:
        return 'stagnation'
    return None


def cmaes_minimize(f: Objective, s: SearchSpace, sigma0: float, seed: int, b: Budget,
                   lam: Optional[int] = None, x0: Optional[np.ndarray] = None) -> OptResult:
    """Minimize `f` over `s` until the budget is spent or the early stop fires.

    Sampled points are clamped to the violated bound before evaluation,
    modulo coordinates wrap, and the repaired points drive the update.
    The mean starts at `x0`, or at a uniform draw from the box.

    When a run converges (tolfun, tolx, condition) or its best value stops
    improving for as many generations as the tolfun window, the search
    restarts from a uniform draw with sigma0 and twice the population.
    On a degenerate covariance it restarts once from the best point with a
    larger step size; a second degeneracy is an error.
    """
    if not sigma0 > 0:
        raise ValueError('sigma0 must be positive, got {}'.format(sigma0))
    rng = np.random.default_rng(seed)
    start = s.uniform(rng, 1)[0] if x0 is None else s.repair(np.asarray(x0, dtype=np.float64), rng, CLAMP)
    es = CMAES(start, sigma0, rng, lam)
    base_lam = es.params.lam
    counted = CountedObjective(f, b)
    history = []
    generation, restarts, degenerate, doublings, reason = 0, 0, 0, 0, 'budget'

    def windows(es: CMAES):
        flat_window = 10 + int(math.ceil(30 * s.dimension / es.params.lam))
        return deque(maxlen=flat_window), math.inf, 0

    def recover(es: CMAES, e: _Degenerate) -> CMAES:
        if degenerate >= 1:
            raise CovarianceDegeneracyError('CMA-ES covariance degenerated twice: {}'.format(e))
        sigma = sigma0 * RESTART_SIGMA_FACTOR
        logging.warning('CMA-ES restart with sigma {} ({})'.format(sigma, e))
        mean = counted.best_point if counted.best_point is not None else es.xmean
        return CMAES(s.repair(mean, rng, CLAMP), sigma, rng, es.params.lam)

    best_window, run_best, stalled = windows(es)
    while not counted.exhausted:
        try:
            arx = s.repair(es.ask(), rng, CLAMP)
        except _Degenerate as e:
            es = recover(es, e)
            degenerate, restarts = degenerate + 1, restarts + 1
            best_window, run_best, stalled = windows(es)
            continue
        fitvals = np.empty(len(arx))
        for k, x in enumerate(arx):
            fitvals[k] = counted(x)
            if counted.stopped_early or counted.exhausted:
                break
        generation += 1
        history.append(counted.best_value)
        if counted.stopped_early:
            reason = 'early-stop'
            break
        if counted.exhausted:
            break
        try:
            es.tell(arx, fitvals)
        except _Degenerate as e:
            es = recover(es, e)
            degenerate, restarts = degenerate + 1, restarts + 1
            best_window, run_best, stalled = windows(es)
            continue

        best_window.append(fitvals.min())
        if fitvals.min() < run_best:
            run_best, stalled = fitvals.min(), 0
        else:
            stalled += 1
        converged = _stop_condition(es, best_window, fitvals, stalled)
        if converged is not None:
            doublings += 1
            remaining = b.max_evaluations - counted.evaluations
            popsize = max(2, min(base_lam * 2**doublings, max(base_lam, remaining)))
            logging.debug('CMA-ES {} after {} evaluations, restart with population {}'.format(
                converged, counted.evaluations, popsize))
            es = CMAES(s.uniform(rng, 1)[0], sigma0, rng, popsize)
            restarts += 1
            best_window, run_best, stalled = windows(es)
    logging.debug('CMA-ES stop {} after {} generations, {} evaluations, {} restarts, best {:.6g}'.format(
        reason, generation, counted.evaluations, restarts, counted.best_value))
    return counted.result(seed, generation, reason, history, restarts)
