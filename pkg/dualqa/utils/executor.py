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

import torch

from dualqa.utils.common import th_accuracy
from dualqa.utils.train_utils import batch_backward, batch_forward, log_per_epoch, log_per_step


class Executor:

    def __init__(self):
        self.step = 0
        self.epoch = 0

    def train_one_epoch(self, model, optimizer, train_data_loader, info_dict):
        ''' Train one epoch
        '''
        lr = optimizer.param_groups[0]['lr']
        logging.debug('Epoch {} TRAIN info lr {}'.format(self.epoch, lr))
        model.train()
        for batch_idx, batch in enumerate(train_data_loader):
            info_dict["tag"] = "TRAIN"
            info_dict["step"] = self.step
            info_dict["epoch"] = self.epoch
            info_dict["batch_idx"] = batch_idx
            info_dict["lr"] = lr
            info_dict = batch_forward(model, batch, info_dict)
            info_dict = batch_backward(optimizer, info_dict)
            log_per_step(info_dict)
            self.step += 1

    @torch.inference_mode()
    def cv(self, model, data_loader, info_dict, tag="CV"):
        ''' Mean loss and accuracy over a loader; accuracy is None for an empty loader
        '''
        model.eval()
        total, total_loss, correct = 0, 0.0, 0.0
        for batch in data_loader:
            features, labels = batch
            info_dict = batch_forward(model, batch, info_dict)
            num = labels.numel()
            total += num
            total_loss += info_dict['loss_dict']['loss'].item() * num
            correct += th_accuracy(info_dict['logits'], labels).item() * num
        if total == 0:
            return None, None
        info_dict.update(tag=tag, epoch=self.epoch, loss=total_loss / total, acc=correct / total)
        log_per_epoch(info_dict)
        return info_dict['loss'], info_dict['acc']
