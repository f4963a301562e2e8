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
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from hyperpyyaml import load_hyperpyyaml

from dualqa.assess.assess import AssessConfig
from dualqa.dataset.cifar import CIFAR10_SHAPE, load_cifar10
from dualqa.dataset.dataset import Dataset
from dualqa.dataset.synth import parse_synth_spec, synth_blobs
from dualqa.predictor.external import external_predictor
from dualqa.predictor.predictor import Predictor, load_weights

DEFAULT_CONFIG = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'conf', 'dualqa.yaml')

# yaml optimizer table key -> AttackSpec field
_ATTACK_KEYS = {
    ('de', 'np'): 'de_np',
    ('de', 'generations'): 'de_generations',
    ('de', 'cr'): 'de_cr',
    ('de', 'f'): 'de_f',
    ('cmaes', 'evaluations'): 'cmaes_evaluations',
    ('cmaes', 'sigma0'): 'sigma0',
}


class ConfigError(ValueError):
    pass


def load_configs(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    path = path or DEFAULT_CONFIG
    override_dict = {k: v for k, v in (overrides or {}).items() if v is not None}
    with open(path, 'r') as f:
        configs = load_hyperpyyaml(f, overrides=override_dict)
    logging.debug('loaded config {} with overrides {}'.format(path, override_dict))
    return configs


def parse_shape(text: str) -> Tuple[int, int, int]:
    parts = text.lower().split('x')
    if len(parts) != 3 or not all(p.isdigit() and int(p) > 0 for p in parts):
        raise ConfigError("shape must look like HxWxC, got '{}'".format(text))
    return tuple(int(p) for p in parts)


def parse_levels(text: str) -> Tuple[int, ...]:
    try:
        levels = tuple(int(v) for v in text.split(',') if v.strip())
    except ValueError:
        raise ConfigError("levels must be comma separated integers, got '{}'".format(text))
    if not levels:
        raise ConfigError('at least one level is required')
    return levels


def attack_params(configs: Dict[str, Any], norm: str) -> Dict[str, Any]:
    table = (configs.get('attack') or {}).get(norm) or {}
    params = {}
    for (optimizer, key), name in _ATTACK_KEYS.items():
        value = (table.get(optimizer) or {}).get(key)
        if value is not None:
            params[name] = value
    return params


@dataclass
class RunConfig:
    """Resolved settings of one command: yaml defaults overlaid with flags."""
    subcommand: str
    seed: int = 0
    out: Optional[str] = None
    cifar: List[str] = field(default_factory=list)
    shape: Tuple[int, int, int] = CIFAR10_SHAPE
    synth: Optional[str] = None
    separation: float = 200.0
    noise: float = 32.0
    data_seed: int = 0
    num_classes: Optional[int] = None
    weights: Optional[str] = None
    external: Optional[str] = None
    model_id: Optional[str] = None
    configs: Dict[str, Any] = field(default_factory=dict)

    def check_sources(self, need_model: bool = True):
        if bool(self.cifar) == bool(self.synth):
            raise ConfigError('exactly one dataset source is required: --cifar or --synth')
        if need_model and bool(self.weights) == bool(self.external):
            raise ConfigError('exactly one model source is required: --weights or --external')

    def load_dataset(self) -> Dataset:
        if self.synth:
            num_classes, per_class, shape = parse_synth_spec(self.synth)
            logging.info('generating synthetic dataset {} (separation {}, data seed {})'.format(
                self.synth, self.separation, self.data_seed))
            return synth_blobs(num_classes, per_class, shape, self.separation, self.data_seed, self.noise)
        return load_cifar10(self.cifar, shape=self.shape, num_classes=self.num_classes or 10)

    def load_predictor(self, shape: Tuple[int, int, int], num_classes: int) -> Predictor:
        if self.weights:
            p = load_weights(self.weights, expected_shape=shape)
            if p.num_classes != num_classes:
                raise ConfigError('model {} has {} classes, dataset has {}'.format(
                    self.weights, p.num_classes, num_classes))
            return p
        timeout = float((self.configs.get('external') or {}).get('timeout', 30.0))
        return external_predictor(self.external, shape, num_classes, timeout)

    @property
    def resolved_model_id(self) -> str:
        if self.model_id:
            return self.model_id
        if self.weights:
            return os.path.splitext(os.path.basename(self.weights))[0]
        return 'external'

    def assess_config(self, levels=None, norms=None, optimizer=None, scale=None, workers: int = 1,
                      independent=None, curve: bool = False, th_max=None, max_evaluations=None,
                      progress: bool = False) -> AssessConfig:
        configs = self.configs
        norms = tuple(norms or configs.get('norms') or ('l0', 'linf'))
        if th_max is not None and not curve:
            logging.warning('--th-max {} has no effect without --curve'.format(th_max))
        return AssessConfig(levels=tuple(levels or configs.get('levels') or (1, 3, 5, 10)),
                            norms=norms,
                            optimizer=optimizer or configs.get('optimizer', 'cmaes'),
                            seed=self.seed,
                            scale=float(scale if scale is not None else configs.get('scale', 1.0)),
                            workers=workers,
                            independent=bool(configs.get('independent', False) if independent is None else independent),
                            curve=curve,
                            th_max=int(th_max or configs.get('th_max', 16)),
                            max_evaluations=max_evaluations,
                            attack_params={norm: attack_params(configs, norm) for norm in norms},
                            progress=progress)
