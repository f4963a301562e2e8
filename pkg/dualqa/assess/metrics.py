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

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from dualqa.attacks.attack import L0, LINF, AttackOutcome

SAFETY_SUFFIX = {L0: 'pixel-safe', LINF: 'threshold-safe'}


class CurveError(ValueError):
    pass


def adversarial_accuracy(outcomes: Sequence[AttackOutcome]) -> Optional[float]:
    """Successes over attacked samples; errored and skipped samples do not count."""
    attacked = [o for o in outcomes if o.attacked]
    if not attacked:
        return None
    return sum(o.success for o in attacked) / len(attacked)


def mean_l2(outcomes: Sequence[AttackOutcome]) -> Optional[float]:
    values = [o.norms.l2 for o in outcomes if o.success]
    if not values:
        return None
    return float(np.mean(values))


def auc(curve: Sequence[Tuple[float, float]]) -> float:
    """Trapezoidal area under (th, accuracy) points with increasing th."""
    if len(curve) < 2:
        raise CurveError('need at least 2 points, got {}'.format(len(curve)))
    points = np.asarray(curve, dtype=np.float64)
    th, acc = points[:, 0], points[:, 1]
    dth = np.diff(th)
    if np.any(dth <= 0):
        raise CurveError('curve thresholds must be strictly increasing: {}'.format(th.tolist()))
    return float(np.sum(dth * (acc[1:] + acc[:-1]) / 2.0))


def class_matrix(outcomes: Sequence[AttackOutcome], num_classes: int) -> List[Optional[float]]:
    """Per-class success rate; None marks classes with no attacked sample."""
    attacked = np.zeros(num_classes, dtype=np.int64)
    successes = np.zeros(num_classes, dtype=np.int64)
    for o in outcomes:
        if o.attacked:
            attacked[o.true_label] += 1
            successes[o.true_label] += o.success
    return [float(s / a) if a else None for s, a in zip(successes, attacked)]


@dataclass
class Overlap:
    both: List[int] = field(default_factory=list)
    only_l0: List[int] = field(default_factory=list)
    only_linf: List[int] = field(default_factory=list)
    neither: List[int] = field(default_factory=list)

    @property
    def total(self) -> int:
        return len(self.both) + len(self.only_l0) + len(self.only_linf) + len(self.neither)

    def counts(self) -> Dict[str, int]:
        return {
            'both': len(self.both),
            'only_l0': len(self.only_l0),
            'only_linf': len(self.only_linf),
            'neither': len(self.neither),
        }

    def to_dict(self):
        return {**self.counts(), 'ids': {
            'both': self.both,
            'only_l0': self.only_l0,
            'only_linf': self.only_linf,
            'neither': self.neither,
        }}


def overlap(l0_outcomes: Sequence[AttackOutcome], linf_outcomes: Sequence[AttackOutcome]) -> Overlap:
    """Partition samples attacked under both norms by which attacks succeeded."""
    l0 = {o.sample_id: o for o in l0_outcomes}
    linf = {o.sample_id: o for o in linf_outcomes}
    if set(l0) != set(linf):
        raise ValueError('outcome lists cover different samples: {} only in L0, {} only in Linf'.format(
            sorted(set(l0) - set(linf)), sorted(set(linf) - set(l0))))
    result = Overlap()
    for sample_id in sorted(l0):
        a, b = l0[sample_id], linf[sample_id]
        if not (a.attacked and b.attacked):
            continue
        if a.success and b.success:
            result.both.append(sample_id)
        elif a.success:
            result.only_l0.append(sample_id)
        elif b.success:
            result.only_linf.append(sample_id)
        else:
            result.neither.append(sample_id)
    return result


def safety_labels(accuracies: Dict[Tuple[str, int], Optional[float]]) -> List[str]:
    """'{th}-pixel-safe' / '{th}-threshold-safe' for every level with accuracy exactly 0."""
    labels = []
    for (norm, th), acc in sorted(accuracies.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        if acc is not None and acc == 0.0:
            labels.append('{}-{}'.format(th, SAFETY_SUFFIX[norm]))
    return labels
