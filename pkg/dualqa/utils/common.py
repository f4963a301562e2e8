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

import os
import random

import numpy as np
import torch

WORKERS_ENV = 'DUALQA_WORKERS'


def set_all_random_seed(seed: int):
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def th_accuracy(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Fraction of rows whose argmax equals the target (0.0 - 1.0)."""
    if targets.numel() == 0:
        return torch.tensor(0.0, dtype=torch.float64)
    pred = logits.argmax(dim=1)
    return (pred == targets).to(torch.float64).mean().detach()


def derive_seed(*parts: int) -> int:
    """Stable 63-bit seed from a tuple of non-negative integers."""
    state = np.random.SeedSequence([int(p) for p in parts]).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & (2**63 - 1)


def resolve_workers(requested=None) -> int:
    if requested is None:
        env = os.environ.get(WORKERS_ENV)
        if env:
            try:
                requested = int(env)
            except ValueError:
                raise ValueError('{} must be an integer, got {!r}'.format(WORKERS_ENV, env))
    if requested is None:
        requested = os.cpu_count() or 1
    if requested < 1:
        raise ValueError('workers must be >= 1, got {}'.format(requested))
    return requested
