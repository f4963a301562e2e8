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

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np

from dualqa.attacks.encoding import (encode_decode_l0, encode_decode_linf, l0_search_space, linf_genome_size,
                                     linf_search_space)
from dualqa.dataset.dataset import LabeledSample
from dualqa.imagecore.image import Image, NormQuad, norms
from dualqa.optim.cmaes import CovarianceDegeneracyError, cmaes_minimize
from dualqa.optim.de import de_minimize
from dualqa.optim.space import Budget
from dualqa.predictor.predictor import Predictor, PredictorError, SoftPrediction

L0 = 'l0'
LINF = 'linf'
NORMS = (L0, LINF)
DE = 'de'
CMAES = 'cmaes'
OPTIMIZERS = (DE, CMAES)

SUCCESS = 'success'
FAILED = 'failed'
ERRORED = 'errored'
SKIPPED = 'skipped'

# optimizer table per norm
DE_NP = {L0: 400, LINF: None}
DE_GENERATIONS = 100
DE_CR = 1.0
DE_F = 0.5
CMAES_EVALUATIONS = {L0: 40000, LINF: 39200}
L0_SIGMA = 31.75


class InvalidSpecError(ValueError):
    pass


@dataclass
class AttackSpec:
    """One attack configuration. Unset optimizer fields fall back to the default table."""
    norm: str
    th: int
    optimizer: str = CMAES
    seed: int = 0
    scale: float = 1.0
    max_evaluations: Optional[int] = None
    de_np: Optional[int] = None
    de_generations: int = DE_GENERATIONS
    de_cr: float = DE_CR
    de_f: float = DE_F
    cmaes_evaluations: Optional[int] = None
    sigma0: Optional[float] = None
    cmaes_lambda: Optional[int] = None

    def __post_init__(self):
        self.norm = str(self.norm).lower()
        self.optimizer = str(self.optimizer).lower()
        if self.norm not in NORMS:
            raise InvalidSpecError('norm must be one of {}, got {!r}'.format(NORMS, self.norm))
        if self.optimizer not in OPTIMIZERS:
            raise InvalidSpecError('optimizer must be one of {}, got {!r}'.format(OPTIMIZERS, self.optimizer))
        if isinstance(self.th, bool) or int(self.th) != self.th or self.th < 1:
            raise InvalidSpecError('th must be an integer >= 1, got {!r}'.format(self.th))
        self.th = int(self.th)
        if self.norm == LINF and self.th > 255:
            raise InvalidSpecError('Linf th must be <= 255, got {}'.format(self.th))
        if not self.scale > 0:
            raise InvalidSpecError('scale must be positive, got {}'.format(self.scale))
        if self.max_evaluations is not None and self.max_evaluations < 1:
            raise InvalidSpecError('max_evaluations must be >= 1, got {}'.format(self.max_evaluations))
        if self.sigma0 is not None and not self.sigma0 > 0:
            raise InvalidSpecError('sigma0 must be positive, got {}'.format(self.sigma0))

    def validate(self, shape: Tuple[int, int, int]):
        if self.norm == L0 and self.th > shape[0] * shape[1]:
            raise InvalidSpecError('L0 th {} exceeds the {} pixels of a {}x{} image'.format(
                self.th, shape[0] * shape[1], shape[0], shape[1]))

    def population_size(self, shape: Tuple[int, int, int]) -> int:
        if self.de_np is not None:
            return self.de_np
        return DE_NP[self.norm] or linf_genome_size(shape)

    def budget(self, shape: Tuple[int, int, int]) -> int:
        """Evaluation cap: explicit, or the table value times `scale`."""
        if self.max_evaluations is not None:
            return self.max_evaluations
        if self.optimizer == DE:
            np_ = self.population_size(shape)
            return max(np_, int(math.ceil(np_ * (self.de_generations + 1) * self.scale)))
        evaluations = self.cmaes_evaluations or CMAES_EVALUATIONS[self.norm]
        return max(1, int(math.ceil(evaluations * self.scale)))

    def step_size(self) -> float:
        if self.sigma0 is not None:
            return self.sigma0
        return L0_SIGMA if self.norm == L0 else self.th / 4.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'norm': self.norm,
            'th': self.th,
            'optimizer': self.optimizer,
            'seed': self.seed,
            'scale': self.scale,
        }


@dataclass
class AttackOutcome:
    sample_id: int
    true_label: int
    norm: str
    th: int
    optimizer: str
    status: str
    seed: int
    original_label: Optional[int] = None
    adversarial_label: Optional[int] = None
    confidence_before: Optional[float] = None
    confidence_after: Optional[float] = None
    norms: Optional[NormQuad] = None
    evaluations: int = 0
    adversarial: Optional[Image] = field(default=None, repr=False)
    error: Optional[str] = None

    @property
    def success(self) -> bool:
        return self.status == SUCCESS

    @property
    def attacked(self) -> bool:
        return self.status in (SUCCESS, FAILED)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'sample_id': self.sample_id,
            'true_label': self.true_label,
            'norm': self.norm,
            'th': self.th,
            'optimizer': self.optimizer,
            'status': self.status,
            'success': self.success,
            'original_label': self.original_label,
            'adversarial_label': self.adversarial_label,
            'confidence_before': self.confidence_before,
            'confidence_after': self.confidence_after,
            'norms': self.norms.to_dict() if self.norms is not None else None,
            'evaluations': self.evaluations,
            'seed': self.seed,
            'error': self.error,
        }


def success_criterion(before: SoftPrediction, after: SoftPrediction, true_class: int) -> bool:
    """Untargeted success: the deterministic label moved off the true class."""
    if before.num_classes != after.num_classes:
        raise ValueError('predictions differ in length: {} vs {}'.format(before.num_classes, after.num_classes))
    return after.label != true_class


class _SuccessTracker:
    """Keeps the first decoded candidate that is misclassified."""

    def __init__(self, before: SoftPrediction, true_class: int):
        self.before = before
        self.true_class = true_class
        self.adversarial: Optional[Image] = None
        self.prediction: Optional[SoftPrediction] = None

    @property
    def succeeded(self) -> bool:
        return self.adversarial is not None

    def observe(self, candidate: Image, prediction: SoftPrediction):
        if not self.succeeded and success_criterion(self.before, prediction, self.true_class):
            self.adversarial = candidate
            self.prediction = prediction


def attack(p: Predictor, sample: LabeledSample, spec: AttackSpec) -> AttackOutcome:
    """Search for x' within the norm bound of `spec` with f(x') != label.

    The objective is the true-class confidence of the decoded candidate,
    ranked through its log-odds. The search stops at the first
    misclassified candidate, which becomes the adversarial image.
    Predictor failures yield an errored outcome; samples that are already
    misclassified are skipped.
    """
    x = sample.image
    c = sample.label
    spec.validate(x.shape)
    outcome = AttackOutcome(sample_id=sample.id, true_label=c, norm=spec.norm, th=spec.th,
                            optimizer=spec.optimizer, status=FAILED, seed=spec.seed)
    try:
        before = p.predict(x)
        outcome.original_label = before.label
        outcome.confidence_before = before.confidence(c)
        if before.label != c:
            outcome.status = SKIPPED
            return outcome

        if spec.norm == L0:
            space = l0_search_space(x.shape, spec.th)

            def decode(genome):
                return encode_decode_l0(genome, x)
        else:
            space = linf_search_space(x.shape, spec.th)

            def decode(genome):
                return encode_decode_linf(genome, x, spec.th)

        tracker = _SuccessTracker(before, c)

        def objective(genome: np.ndarray) -> float:
            candidate = decode(genome)
            prediction = p.predict(candidate)
            tracker.observe(candidate, prediction)
            return prediction.log_odds(c)

        budget = Budget(spec.budget(x.shape), early_stop=lambda value: tracker.succeeded)
        if spec.optimizer == DE:
            result = de_minimize(objective, space, spec.population_size(x.shape), spec.de_generations,
                                 spec.de_cr, spec.de_f, spec.seed, budget)
        else:
            x0 = np.zeros(space.dimension) if spec.norm == LINF else None
            result = cmaes_minimize(objective, space, spec.step_size(), spec.seed, budget,
                                    lam=spec.cmaes_lambda, x0=x0)
        outcome.evaluations = result.evaluations

        if tracker.succeeded:
            outcome.status = SUCCESS
            outcome.adversarial = tracker.adversarial
            outcome.adversarial_label = tracker.prediction.label
            outcome.confidence_after = tracker.prediction.confidence(c)
            outcome.norms = norms(x, tracker.adversarial)
        else:
            best = decode(result.best_point)
            outcome.confidence_after = _confidence_from_log_odds(result.best_value)
            outcome.adversarial_label = c
            outcome.norms = norms(x, best)
    except (PredictorError, CovarianceDegeneracyError) as e:
        logging.warning('sample {}: {} attack at th={} errored: {}'.format(sample.id, spec.norm, spec.th, e))
        outcome.status = ERRORED
        outcome.error = 'sample {}: {}: {}'.format(sample.id, type(e).__name__, e)
        outcome.adversarial = None
    return outcome


def _confidence_from_log_odds(value: float) -> float:
    if value == math.inf:
        return 1.0
    if value == -math.inf:
        return 0.0
    if value >= 0:
        return 1.0 / (1.0 + math.exp(-value))
    odds = math.exp(value)
    return odds / (1.0 + odds)
