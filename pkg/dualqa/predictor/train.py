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
from typing import Any, Dict, Optional

import numpy as np

from dualqa.dataset.dataset import Dataset
from dualqa.predictor.models import build_model, fold_input_scale
from dualqa.predictor.predictor import BuiltinPredictor
from dualqa.utils.common import set_all_random_seed
from dualqa.utils.executor import Executor
from dualqa.utils.train_utils import init_dataset_and_dataloader, init_optimizer

INPUT_SCALE = 1.0 / 255.0

DEFAULT_TRAIN_CONF = {
    'optim': 'sgd',
    'optim_conf': {'lr': 0.1, 'weight_decay': 0.0},
    'batch_size': 32,
    'test_fraction': 0.2,
    'hidden': 32,
    'log_interval': 10,
}


@dataclass
class TrainResult:
    predictor: BuiltinPredictor
    train_acc: float
    test_acc: Optional[float]
    epochs: int
    seed: int


def train(kind: str, d: Dataset, epochs: int, lr: float, seed: int,
          train_conf: Optional[Dict[str, Any]] = None) -> TrainResult:
    """Fit a built-in classifier by mini-batch gradient descent on cross-entropy.

    Inputs are scaled to [0, 1] for training; the scale is folded into the
    first layer afterwards so the returned predictor takes [0, 255] pixels.
    """
    if len(d) == 0:
        raise ValueError('cannot train on an empty dataset')
    if not lr > 0:
        raise ValueError('lr must be positive, got {}'.format(lr))
    if epochs < 0:
        raise ValueError('epochs must be non-negative, got {}'.format(epochs))
    conf = dict(DEFAULT_TRAIN_CONF)
    conf.update(train_conf or {})
    conf['optim_conf'] = dict(conf['optim_conf'], lr=lr)

    set_all_random_seed(seed)
    train_set, test_set = d.split(conf['test_fraction'], seed)
    model = build_model(kind, int(np.prod(d.shape)), d.num_classes, conf['hidden'])
    _, _, train_data_loader, _ = init_dataset_and_dataloader(train_set, test_set, conf, seed, INPUT_SCALE)
    optimizer = init_optimizer(conf, model)
    logging.info('training {} model on {} samples ({} held out), {} epochs, lr {}, seed {}'.format(
        kind, len(train_set), len(test_set), epochs, lr, seed))

    executor = Executor()
    info_dict = {'log_interval': conf['log_interval']}
    for epoch in range(epochs):
        executor.epoch = epoch
        executor.train_one_epoch(model, optimizer, train_data_loader, info_dict)

    fold_input_scale(model, INPUT_SCALE)
    _, _, train_eval_loader, test_eval_loader = init_dataset_and_dataloader(train_set, test_set, conf, seed, 1.0)
    _, train_acc = executor.cv(model, train_eval_loader, info_dict, tag='TRAIN')
    _, test_acc = executor.cv(model, test_eval_loader, info_dict, tag='TEST')
    predictor = BuiltinPredictor(model, d.shape, seed=seed)
    return TrainResult(predictor=predictor, train_acc=train_acc, test_acc=test_acc, epochs=epochs, seed=seed)
