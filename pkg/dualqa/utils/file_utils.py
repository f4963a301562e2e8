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

import json
import logging
import os
import tempfile
from typing import Any, Union

LOG_FORMAT = '%(asctime)s %(levelname)s %(message)s'

logging.getLogger('matplotlib').setLevel(logging.WARNING)
logging.getLogger('PIL').setLevel(logging.WARNING)
logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)


def init_logging(level: str = 'INFO'):
    logging.basicConfig(level=getattr(logging, level.upper()),
                        format=LOG_FORMAT,
                        force=True)
    logging.getLogger('matplotlib').setLevel(logging.WARNING)
    logging.getLogger('PIL').setLevel(logging.WARNING)


def atomic_write(path: str, data: Union[bytes, str]):
    """Write `data` to `path` so readers never observe a partial file."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    mode = 'wb' if isinstance(data, bytes) else 'w'
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix='.tmp-', suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode, **({} if mode == 'wb' else {'encoding': 'utf8', 'newline': '\n'})) as fout:
            fout.write(data)
            fout.flush()
            os.fsync(fout.fileno())
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=True, allow_nan=False) + '\n'


def write_json(path: str, obj: Any):
    atomic_write(path, dump_json(obj))


def read_json(path: str) -> Any:
    with open(path, 'r', encoding='utf8') as fin:
        return json.load(fin)
