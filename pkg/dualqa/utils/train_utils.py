# Copyright (c) 2024 The dualqa Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import logging
import os

import numpy as np
import torch
import torch.optim as optim
from torch.utils.data import DataLoader, TensorDataset

from dualqa.predictor.predictor import save_weights
from dualqa.utils.file_utils import write_json


class TrainingDivergedError(RuntimeError):

    def __init__(self, epoch: int, loss: float):
        super().__init__('training diverged at epoch {} (loss {})'.format(epoch, loss))
        self.epoch = epoch
        self.loss = loss


def dataset_to_tensors(dataset, scale: float = 1.0):
    if len(dataset) == 0:
        k = 0 if dataset.shape is None else int(np.prod(dataset.shape))
        return torch.zeros((0, k), dtype=torch.float64), torch.zeros((0, ), dtype=torch.long)
    features = np.stack([sample.image.flat() for sample in dataset]) * scale
    labels = np.asarray(dataset.labels(), dtype=np.int64)
    return torch.from_numpy(features), torch.from_numpy(labels)


def init_dataset_and_dataloader(train_set, test_set, train_conf, seed: int, scale: float = 1.0 / 255.0):
    """Loaders over flattened, rescaled images; the train loader shuffles with a seeded generator."""
    generator = torch.Generator()
    generator.manual_seed(seed)
    train_dataset = TensorDataset(*dataset_to_tensors(train_set, scale))
    test_dataset = TensorDataset(*dataset_to_tensors(test_set, scale))
    train_data_loader = DataLoader(train_dataset,
                                   batch_size=train_conf['batch_size'],
                                   shuffle=True,
                                   generator=generator,
                                   num_workers=0)
    test_data_loader = DataLoader(test_dataset,
                                  batch_size=train_conf['batch_size'],
                                  shuffle=False,
                                  num_workers=0)
    return train_dataset, test_dataset, train_data_loader, test_data_loader


def init_optimizer(train_conf, model):
    if train_conf['optim'] == 'sgd':
        optimizer = optim.SGD(model.parameters(), **train_conf['optim_conf'])
    elif train_conf['optim'] == 'adam':
        optimizer = optim.Adam(model.parameters(), **train_conf['optim_conf'])
    else:
        raise ValueError("unknown optimizer: " + str(train_conf['optim']))
    return optimizer


def batch_forward(model, batch, info_dict):
    features, labels = batch
    logits = model(features)
    loss = torch.nn.functional.cross_entropy(logits, labels)
    info_dict['loss_dict'] = {'loss': loss}
    info_dict['logits'] = logits
    return info_dict


def batch_backward(optimizer, info_dict):
    loss = info_dict['loss_dict']['loss']
    if not torch.isfinite(loss):
        raise TrainingDivergedError(info_dict['epoch'], loss.item())
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return info_dict


def log_per_step(info_dict):
    if (info_dict['batch_idx'] + 1) % info_dict['log_interval'] != 0:
        return
    log_str = '{} Batch {}/{} '.format(info_dict['tag'], info_dict['epoch'], info_dict['batch_idx'] + 1)
    for name, value in info_dict['loss_dict'].items():
        log_str += '{} {:.6f} '.format(name, value.item())
    log_str += 'lr {:.8f}'.format(info_dict['lr'])
    logging.debug(log_str)


def log_per_epoch(info_dict):
    logging.info('Epoch {} {} loss {:.6f} acc {:.4f}'.format(
        info_dict['epoch'], info_dict['tag'], info_dict['loss'], info_dict['acc']))


def save_model(predictor, model_path: str, info_dict):
    """Write the weight file plus a `.json` metrics file next to it (or at `metrics_path`)."""
    save_weights(predictor, model_path)
    metrics_path = info_dict.get('metrics_path') or os.path.splitext(model_path)[0] + '.json'
    metrics = {key: info_dict[key] for key in ('kind', 'train_acc', 'test_acc', 'epochs', 'seed')}
    write_json(metrics_path, metrics)
    logging.info('Checkpoint: save to {} (metrics {})'.format(model_path, metrics_path))
    return metrics_path
