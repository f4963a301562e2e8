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
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Sequence

from dualqa.attacks.attack import AttackOutcome
from dualqa.predictor.predictor import Predictor


class TransferError(ValueError):
    pass


@dataclass
class TransferMatrix:
    """values[i][j]: share of source i's adversarial images that also fool target j."""
    sources: List[str]
    targets: List[str]
    values: List[List[float]]
    counts: List[int]

    def entry(self, source: str, target: str) -> float:
        return self.values[self.sources.index(source)][self.targets.index(target)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'sources': self.sources,
            'targets': self.targets,
            'counts': self.counts,
            'values': self.values,
        }


def transfer(sources: Mapping[str, Sequence[AttackOutcome]], targets: Mapping[str, Predictor]) -> TransferMatrix:
    """Replay stored successful adversarial images against every target."""
    if not sources or not targets:
        raise TransferError('need at least one source and one target')
    values, counts = [], []
    for source_id, outcomes in sources.items():
        successes = [o for o in outcomes if o.success and o.adversarial is not None]
        if not successes:
            raise TransferError('source {} has no successful adversarial samples'.format(source_id))
        row = []
        for target_id, target in targets.items():
            fooled = 0
            for o in successes:
                if o.adversarial.shape != target.input_shape:
                    raise TransferError('sample {} of {} has shape {}, target {} expects {}'.format(
                        o.sample_id, source_id, o.adversarial.shape, target_id, target.input_shape))
                fooled += target.predict(o.adversarial).label != o.true_label
            row.append(fooled / len(successes))
            logging.info('transfer {} -> {}: {}/{}'.format(source_id, target_id, fooled, len(successes)))
        values.append(row)
        counts.append(len(successes))
    return TransferMatrix(sources=list(sources), targets=list(targets), values=values, counts=counts)
