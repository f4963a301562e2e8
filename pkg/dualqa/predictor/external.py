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
"""Predictor backed by a child process speaking newline-delimited JSON on stdio.

    -> {"type": "hello", "shape": [h, w, c], "num_classes": n}
    <- {"type": "ready"}
    -> {"type": "predict", "id": 1, "pixels": "<base64 little-endian float32>"}
    <- {"type": "probs", "id": 1, "probs": [...]}
"""

import base64
import json
import logging
import os
import shlex
import subprocess
import threading
import time
from collections import deque
from queue import Empty, Queue
from typing import Any, Deque, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from dualqa.predictor.predictor import InvalidPredictionError, Predictor, PredictorError, SoftPrediction

DEFAULT_TIMEOUT = 30.0


class PredictorExitedError(PredictorError):
    pass


class MalformedResponseError(PredictorError):
    pass


class IdMismatchError(PredictorError):
    pass


class PredictorTimeoutError(PredictorError):
    pass


class _Unparsable:

    def __init__(self, line: str, error: str):
        self.line = line
        self.error = error


def encode_pixels(pixels: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(pixels, dtype='<f4').tobytes()).decode('ascii')


def decode_pixels(text: str, shape: Tuple[int, int, int]) -> np.ndarray:
    return np.frombuffer(base64.b64decode(text), dtype='<f4').astype(np.float64).reshape(shape)


class ExternalPredictor(Predictor):
    """Requests are serialized per child process.

    The child is started lazily and dropped on pickling, so every worker
    process of an assessment owns its own child.
    """

    def __init__(self, command: Union[str, Sequence[str]], input_shape: Tuple[int, int, int], num_classes: int,
                 timeout: float = DEFAULT_TIMEOUT):
        super().__init__(input_shape, num_classes)
        self.command: List[str] = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.command:
            raise ValueError('external predictor command is empty')
        if not timeout > 0:
            raise ValueError('timeout must be positive, got {}'.format(timeout))
        self.timeout = timeout
        self._proc: Optional[subprocess.Popen] = None
        self._owner_pid: Optional[int] = None
        self._next_id = 1
        self._request_lock = threading.Lock()

    def __getstate__(self):
        state = super().__getstate__()
        for key in ('_proc', '_request_lock', '_messages', '_stderr_lines', '_reader', '_stderr_reader',
                    '_stdout_closed', '_owner_pid'):
            state.pop(key, None)
        state['_proc'] = None
        state['_owner_pid'] = None
        return state

    def __setstate__(self, state):
        super().__setstate__(state)
        self._request_lock = threading.Lock()

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.close()

    def start(self):
        self._forget_inherited()
        if self._proc is not None and self._proc.poll() is None:
            return
        logging.debug('starting external predictor: {}'.format(' '.join(self.command)))
        try:
            self._proc = subprocess.Popen(self.command,
                                          stdin=subprocess.PIPE,
                                          stdout=subprocess.PIPE,
                                          stderr=subprocess.PIPE,
                                          text=True,
                                          bufsize=1)
        except OSError as e:
            raise PredictorExitedError('cannot start external predictor {}: {}'.format(self.command, e)) from e
        self._owner_pid = os.getpid()
        self._messages: Queue = Queue()
        self._stderr_lines: Deque[str] = deque(maxlen=50)
        self._stdout_closed = threading.Event()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._stderr_reader = threading.Thread(target=self._read_stderr_loop, daemon=True)
        self._reader.start()
        self._stderr_reader.start()
        self._send({'type': 'hello', 'shape': list(self.input_shape), 'num_classes': self.num_classes}, 'hello')
        reply = self._receive('hello')
        if not isinstance(reply, dict) or reply.get('type') != 'ready':
            self.close()
            raise MalformedResponseError('expected a ready record after hello, got {!r}'.format(reply))

    def _forget_inherited(self):
        # a forked copy sees the parent's child as exited and must not signal it
        if self._proc is not None and self._owner_pid != os.getpid():
            logging.debug('dropping external predictor inherited from process {}'.format(self._owner_pid))
            self._proc = None

    def _read_loop(self):
        try:
            for line in self._proc.stdout:
                line = line.strip()
                if not line:
                    continue
                try:
                    self._messages.put(json.loads(line))
                except json.JSONDecodeError as e:
                    self._messages.put(_Unparsable(line, str(e)))
        finally:
            self._stdout_closed.set()

    def _read_stderr_loop(self):
        for line in self._proc.stderr:
            line = line.strip()
            if line:
                self._stderr_lines.append(line)

    def _stderr_summary(self) -> str:
        lines = list(self._stderr_lines)
        return " | ".join(lines) if lines else "<no stderr>"

    def _assert_running(self, context: str):
        return_code = self._proc.poll()
        if return_code is not None:
            raise PredictorExitedError('external predictor exited ({}) during {}. stderr: {}'.format(
                return_code, context, self._stderr_summary()))

    def _send(self, message: Dict[str, Any], context: str):
        self._assert_running(context)
        try:
            self._proc.stdin.write(json.dumps(message) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            self._assert_running(context)
            raise PredictorExitedError('cannot write to external predictor during {}'.format(context)) from e

    def _receive(self, context: str):
        deadline = time.monotonic() + self.timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                self.close()
                raise PredictorTimeoutError('no response within {}s during {}. stderr: {}'.format(
                    self.timeout, context, self._stderr_summary()))
            try:
                message = self._messages.get(timeout=min(remaining, 0.5))
            except Empty:
                if self._stdout_closed.is_set():
                    try:
                        self._proc.wait(timeout=5)
                    except subprocess.TimeoutExpired:
                        pass
                    self._assert_running(context)
                    raise PredictorExitedError('external predictor closed stdout during {}'.format(context))
                self._assert_running(context)
                continue
            if isinstance(message, _Unparsable):
                raise MalformedResponseError('unparsable response during {}: {} ({!r})'.format(
                    context, message.error, message.line[:200]))
            return message

    def _confidences(self, pixels: np.ndarray) -> Sequence[float]:
        with self._request_lock:
            self._forget_inherited()
            if self._proc is None or self._proc.poll() is not None:
                if self._proc is not None:
                    self._assert_running('predict')
                self.start()
            request_id = self._next_id
            self._next_id += 1
            context = 'predict request {}'.format(request_id)
            self._send({'type': 'predict', 'id': request_id, 'pixels': encode_pixels(pixels)}, context)
            reply = self._receive(context)
        if not isinstance(reply, dict) or reply.get('type') != 'probs':
            raise MalformedResponseError('expected a probs record for {}, got {!r}'.format(context, reply))
        if reply.get('id') != request_id:
            raise IdMismatchError('response id {!r} does not match {}'.format(reply.get('id'), context))
        probs = reply.get('probs')
        if not isinstance(probs, list) or len(probs) != self.num_classes:
            raise MalformedResponseError('{}: expected {} probabilities, got {!r}'.format(context, self.num_classes, probs))
        try:
            SoftPrediction.from_confidences(probs)
        except (InvalidPredictionError, TypeError, ValueError) as e:
            raise MalformedResponseError('{}: {}'.format(context, e)) from e
        return probs

    def close(self):
        self._forget_inherited()
        proc, self._proc = self._proc, None
        if proc is None:
            return
        if proc.poll() is None:
            try:
                proc.stdin.close()
            except OSError:
                pass
            proc.terminate()
            try:
                proc.wait(timeout=3)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()


def external_predictor(command: Union[str, Sequence[str]], shape: Tuple[int, int, int], num_classes: int,
                       timeout: float = DEFAULT_TIMEOUT) -> ExternalPredictor:
    """Start a child process and complete the hello handshake."""
    p = ExternalPredictor(command, shape, num_classes, timeout)
    p.start()
    return p
