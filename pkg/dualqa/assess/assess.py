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
import multiprocessing
import pickle
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

from tqdm import tqdm

from dualqa.assess.metrics import (Overlap, adversarial_accuracy, auc, class_matrix, mean_l2, overlap,
                                   safety_labels)
from dualqa.attacks.attack import (CMAES, ERRORED, L0, LINF, NORMS, OPTIMIZERS, SKIPPED, AttackOutcome, AttackSpec,
                                  attack)
from dualqa.dataset.dataset import LabeledSample
from dualqa.predictor.predictor import Predictor
from dualqa.utils.common import derive_seed

REPORT_SCHEMA = 'dualqa-report/1'
DEFAULT_LEVELS = (1, 3, 5, 10)
DESK_TH_MAX = 16
FULL_TH_MAX = 127


@dataclass
class AssessConfig:
    levels: Tuple[int, ...] = DEFAULT_LEVELS
    norms: Tuple[str, ...] = NORMS
    optimizer: str = CMAES
    seed: int = 0
    scale: float = 1.0
    workers: int = 1
    independent: bool = False
    curve: bool = False
    th_max: int = DESK_TH_MAX
    max_evaluations: Optional[int] = None
    attack_params: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    progress: bool = False

    def __post_init__(self):
        self.levels = tuple(sorted(set(int(th) for th in self.levels)))
        self.norms = tuple(n for n in NORMS if n in {str(v).lower() for v in self.norms})
        self.optimizer = str(self.optimizer).lower()
        if not self.levels or self.levels[0] < 1:
            raise ValueError('levels must be positive integers, got {}'.format(self.levels))
        if not self.norms:
            raise ValueError('at least one of {} must be assessed'.format(NORMS))
        if self.optimizer not in OPTIMIZERS:
            raise ValueError('optimizer must be one of {}, got {!r}'.format(OPTIMIZERS, self.optimizer))
        if self.workers < 1:
            raise ValueError('workers must be >= 1, got {}'.format(self.workers))

    def thresholds(self, norm: str, shape: Tuple[int, int, int]) -> List[int]:
        ths = set(self.levels)
        if self.curve:
            ths.update(range(1, self.th_max + 1))
        limit = shape[0] * shape[1] if norm == L0 else 255
        kept = sorted(th for th in ths if th <= limit)
        if len(kept) < len(ths):
            logging.warning('{} thresholds above {} dropped'.format(norm, limit))
        return kept

    def spec(self, norm: str, th: int, seed: int) -> AttackSpec:
        return AttackSpec(norm=norm, th=th, optimizer=self.optimizer, seed=seed, scale=self.scale,
                          max_evaluations=self.max_evaluations, **self.attack_params.get(norm, {}))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'levels': list(self.levels),
            'norms': list(self.norms),
            'optimizer': self.optimizer,
            'seed': self.seed,
            'scale': self.scale,
            'independent': self.independent,
            'curve': self.curve,
            'th_max': self.th_max,
            'max_evaluations': self.max_evaluations,
            'attack_params': {norm: dict(sorted(params.items())) for norm, params in sorted(self.attack_params.items())},
        }


@dataclass
class LevelResult:
    norm: str
    th: int
    outcomes: List[AttackOutcome]

    @property
    def accuracy(self) -> Optional[float]:
        return adversarial_accuracy(self.outcomes)

    @property
    def mean_l2(self) -> Optional[float]:
        return mean_l2(self.outcomes)

    def count(self, status: str) -> int:
        return sum(o.status == status for o in self.outcomes)

    @property
    def attacked(self) -> int:
        return sum(o.attacked for o in self.outcomes)

    def to_dict(self, num_classes: int) -> Dict[str, Any]:
        return {
            'norm': self.norm,
            'th': self.th,
            'accuracy': self.accuracy,
            'attacked': self.attacked,
            'successes': self.count('success'),
            'errored': self.count('errored'),
            'skipped': self.count('skipped'),
            'mean_l2': self.mean_l2,
            'class_rates': class_matrix(self.outcomes, num_classes),
            'outcomes': [o.to_dict() for o in self.outcomes],
        }


@dataclass
class RobustnessReport:
    model_id: str
    config: AssessConfig
    num_classes: int
    sample_ids: List[int]
    results: Dict[str, List[LevelResult]]
    class_names: Optional[List[str]] = None

    def result(self, norm: str, th: int) -> LevelResult:
        for level in self.results.get(norm, []):
            if level.th == th:
                return level
        raise KeyError('no {} result at th={}'.format(norm, th))

    @property
    def levels(self) -> List[LevelResult]:
        return [r for norm in self.config.norms for r in self.results[norm] if r.th in self.config.levels]

    def curve(self, norm: str) -> List[Tuple[int, Optional[float]]]:
        return [(r.th, r.accuracy) for r in self.results[norm]]

    def auc(self, norm: str) -> Optional[float]:
        points = [(th, acc) for th, acc in self.curve(norm) if acc is not None]
        return auc(points) if len(points) >= 2 else None

    def monotone(self, norm: str) -> bool:
        accs = [acc for _, acc in self.curve(norm) if acc is not None]
        return all(b >= a for a, b in zip(accs, accs[1:]))

    def overlap(self, th: int) -> Overlap:
        return overlap(self.result(L0, th).outcomes, self.result(LINF, th).outcomes)

    def class_matrix(self, norm: str, th: int) -> List[Optional[float]]:
        return class_matrix(self.result(norm, th).outcomes, self.num_classes)

    def safety_labels(self) -> List[str]:
        return safety_labels({(r.norm, r.th): r.accuracy for r in self.levels})

    def min_th(self, norm: str) -> Dict[int, Optional[int]]:
        """Smallest threshold at which each sample was fooled, None if never."""
        found: Dict[int, Optional[int]] = {sample_id: None for sample_id in self.sample_ids}
        for r in self.results[norm]:
            for o in r.outcomes:
                if o.success and found[o.sample_id] is None:
                    found[o.sample_id] = o.th
        return found

    def errored(self) -> List[Dict[str, Any]]:
        return [{'norm': r.norm, 'th': r.th, 'sample_id': o.sample_id, 'error': o.error}
                for norm in self.config.norms for r in self.results[norm] for o in r.outcomes
                if o.status == 'errored']

    def to_dict(self) -> Dict[str, Any]:
        both_norms = L0 in self.config.norms and LINF in self.config.norms
        return {
            'schema': REPORT_SCHEMA,
            'model_id': self.model_id,
            'seed': self.config.seed,
            'config': self.config.to_dict(),
            'num_classes': self.num_classes,
            'class_names': self.class_names,
            'num_samples': len(self.sample_ids),
            'sample_ids': self.sample_ids,
            'levels': [r.to_dict(self.num_classes) for r in self.levels],
            'curves': {norm: [[th, acc] for th, acc in self.curve(norm)] for norm in self.config.norms},
            'auc': {norm: self.auc(norm) for norm in self.config.norms},
            'monotone': {norm: self.monotone(norm) for norm in self.config.norms},
            'overlap': {str(th): self.overlap(th).to_dict() for th in self.config.levels
                        if both_norms and self._has(th)},
            'min_th': {norm: {str(k): v for k, v in self.min_th(norm).items()} for norm in self.config.norms},
            'safety_labels': self.safety_labels(),
            'errored': self.errored(),
        }

    def _has(self, th: int) -> bool:
        return any(r.th == th for r in self.results[L0]) and any(r.th == th for r in self.results[LINF])


_WORKER_PREDICTOR: Optional[Predictor] = None


def _init_worker(p: Predictor):
    global _WORKER_PREDICTOR
    # a pickled copy holds no state tied to the parent process
    _WORKER_PREDICTOR = pickle.loads(pickle.dumps(p))


def _attack_task(task: Tuple[LabeledSample, AttackSpec]) -> AttackOutcome:
    sample, spec = task
    return attack(_WORKER_PREDICTOR, sample, spec)


def _run_attacks(p: Predictor, tasks: List[Tuple[LabeledSample, AttackSpec]], pool, desc: str,
                 progress: bool) -> List[AttackOutcome]:
    if pool is None:
        iterator = (attack(p, sample, spec) for sample, spec in tasks)
    else:
        iterator = pool.imap(_attack_task, tasks)
    return list(tqdm(iterator, total=len(tasks), desc=desc, disable=not progress))


def assess(p: Predictor, samples: Sequence[LabeledSample], config: AssessConfig, model_id: str = 'model',
           class_names: Optional[Sequence[str]] = None) -> RobustnessReport:
    """Attack every sample under each norm at ascending thresholds.

    Unless `config.independent` is set, a sample fooled at th counts as
    fooled at every larger th and is not attacked again, and samples that
    were skipped or errored keep that outcome, which keeps the curve
    monotone. Per-sample seeds depend only on the run
    seed, norm, sample id and threshold, so the report does not depend on
    the worker count.
    """
    samples = sorted(samples, key=lambda s: s.id)
    for sample in samples:
        if sample.image.shape != p.input_shape:
            raise ValueError('sample {} has shape {}, predictor expects {}'.format(
                sample.id, sample.image.shape, p.input_shape))
    results: Dict[str, List[LevelResult]] = {}
    pool = None
    if config.workers > 1 and len(samples) > 1:
        pool = multiprocessing.Pool(processes=config.workers, initializer=_init_worker, initargs=(p, ))
    try:
        for norm in config.norms:
            norm_idx = NORMS.index(norm)
            carried: Dict[int, AttackOutcome] = {}
            results[norm] = []
            for th in config.thresholds(norm, p.input_shape):
                todo = [s for s in samples if s.id not in carried]
                tasks = [(s, config.spec(norm, th, derive_seed(config.seed, norm_idx, s.id, th))) for s in todo]
                fresh = _run_attacks(p, tasks, pool, '{} th={}'.format(norm, th), config.progress)
                outcomes = sorted(list(carried.values()) + fresh, key=lambda o: o.sample_id)
                level = LevelResult(norm=norm, th=th, outcomes=outcomes)
                results[norm].append(level)
                if not config.independent:
                    carried.update({o.sample_id: o for o in fresh if o.success or o.status in (SKIPPED, ERRORED)})
                logging.info('{} th={}: accuracy {} ({} of {} attacked, {} errored, {} skipped)'.format(
                    norm, th, level.accuracy, level.count('success'), level.attacked, level.count('errored'),
                    level.count('skipped')))
    finally:
        if pool is not None:
            pool.close()
            pool.join()
    return RobustnessReport(model_id=model_id,
                            config=config,
                            num_classes=p.num_classes,
                            sample_ids=[s.id for s in samples],
                            results=results,
                            class_names=list(class_names) if class_names is not None else None)


def compare_optimizers(p: Predictor, samples: Sequence[LabeledSample], config: AssessConfig,
                       optimizers: Sequence[str] = OPTIMIZERS) -> List[Dict[str, Any]]:
    """Adversarial accuracy per (optimizer, norm, th) on one sample set."""
    rows = []
    for optimizer in optimizers:
        report = assess(p, samples, replace(config, optimizer=optimizer))
        for level in report.levels:
            fresh = [o for o in level.outcomes if o.th == level.th and o.attacked]
            rows.append({
                'optimizer': optimizer,
                'norm': level.norm,
                'th': level.th,
                'accuracy': level.accuracy,
                'attacked': level.attacked,
                'successes': level.count('success'),
                'mean_evaluations': sum(o.evaluations for o in fresh) / len(fresh) if fresh else None,
                'mean_l2': level.mean_l2,
                'seed': config.seed,
            })
    return rows
