#!/usr/bin/env python3
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
"""Reference child process for the external predictor protocol.

Modes:
  uniform     every class gets 1 / num_classes
  brightness  two-way logistic on mean brightness, spread over the classes
  half        confidences summing to 0.5 (protocol violation)
  slow        sleeps --delay seconds before each answer
  wrong-id    answers with id + 1
  crash       exits right after the handshake
"""

import argparse
import base64
import json
import math
import sys
import time

import numpy as np


def _write(obj: dict) -> None:
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def get_args():
    parser = argparse.ArgumentParser(description='stdio predictor stub')
    parser.add_argument('--mode',
                        default='uniform',
                        choices=['uniform', 'brightness', 'half', 'slow', 'wrong-id', 'crash'],
                        help='how to answer predict requests')
    parser.add_argument('--delay',
                        default=5.0,
                        type=float,
                        help='seconds to sleep per request in slow mode')
    return parser.parse_args()


def answer(mode, pixels, num_classes):
    if mode == 'half':
        return [0.5 / num_classes] * num_classes
    if mode == 'brightness':
        z = (float(pixels.mean()) - 127.5) / 8.0
        p = 1.0 / (1.0 + math.exp(-z))
        probs = [0.0] * num_classes
        probs[0], probs[1] = 1.0 - p, p
        return probs
    return [1.0 / num_classes] * num_classes


def main() -> int:
    args = get_args()
    num_classes = None
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        req = json.loads(line)
        if req.get('type') == 'hello':
            num_classes = int(req['num_classes'])
            _write({'type': 'ready'})
            if args.mode == 'crash':
                return 3
            continue
        if req.get('type') != 'predict' or num_classes is None:
            _write({'type': 'error', 'message': 'unexpected record'})
            continue
        pixels = np.frombuffer(base64.b64decode(req['pixels']), dtype='<f4')
        if args.mode == 'slow':
            time.sleep(args.delay)
        request_id = req['id'] + 1 if args.mode == 'wrong-id' else req['id']
        _write({'type': 'probs', 'id': request_id, 'probs': answer(args.mode, pixels, num_classes)})
    return 0


if __name__ == '__main__':
    sys.exit(main())
