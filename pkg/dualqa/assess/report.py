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
"""Report artifacts: report.json plus CSV tables, SVG curves and the adversarial archive."""

import io
import logging
import os
import zipfile
from typing import Any, Dict, List, Optional, Sequence

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from dualqa.assess.assess import REPORT_SCHEMA, RobustnessReport  # noqa: E402
from dualqa.assess.transfer import TransferMatrix  # noqa: E402
from dualqa.attacks.attack import SUCCESS, AttackOutcome  # noqa: E402
from dualqa.imagecore.image import Image  # noqa: E402
from dualqa.utils.file_utils import atomic_write, read_json, write_json  # noqa: E402

plt.rcParams['svg.hashsalt'] = 'dualqa'

REPORT_FILE = 'report.json'
ADVERSARIALS_FILE = 'adversarials.npz'
# earliest zip timestamp, fixed so archives are byte-reproducible
NPZ_DATE_TIME = (1980, 1, 1, 0, 0, 0)
NORM_TITLES = {'l0': 'Few-Pixel (L0)', 'linf': 'Threshold (Linf)'}


class ReportFormatError(ValueError):
    pass


def write_csv(path: str, rows: Sequence[Dict[str, Any]], columns: Sequence[str]):
    atomic_write(path, pd.DataFrame(list(rows), columns=list(columns)).to_csv(index=False))


def load_report(path: str) -> Dict[str, Any]:
    report = read_json(path)
    if not isinstance(report, dict) or report.get('schema') != REPORT_SCHEMA:
        raise ReportFormatError('{} is not a {} document'.format(path, REPORT_SCHEMA))
    return report


def level_rows(report: Dict[str, Any]) -> List[Dict[str, Any]]:
    return [{
        'model_id': report['model_id'],
        'norm': level['norm'],
        'th': level['th'],
        'accuracy': level['accuracy'],
        'attacked': level['attacked'],
        'successes': level['successes'],
        'errored': level['errored'],
        'skipped': level['skipped'],
        'mean_l2': level['mean_l2'],
        'seed': report['seed'],
    } for level in report['levels']]


def curve_rows(report: Dict[str, Any]) -> List[Dict[str, Any]]:
    return [{'norm': norm, 'th': th, 'accuracy': acc, 'seed': report['seed']}
            for norm, points in report['curves'].items() for th, acc in points]


def class_rows(report: Dict[str, Any]) -> List[Dict[str, Any]]:
    names = report.get('class_names') or [str(c) for c in range(report['num_classes'])]
    return [{'norm': level['norm'], 'th': level['th'], 'class': c, 'class_name': names[c], 'rate': rate,
             'seed': report['seed']} for level in report['levels'] for c, rate in enumerate(level['class_rates'])]


def overlap_rows(report: Dict[str, Any]) -> List[Dict[str, Any]]:
    return [{'th': int(th), 'both': o['both'], 'only_l0': o['only_l0'], 'only_linf': o['only_linf'],
             'neither': o['neither'], 'seed': report['seed']} for th, o in report['overlap'].items()]


def plot_curve(report: Dict[str, Any], norm: str) -> str:
    points = [(th, acc) for th, acc in report['curves'][norm] if acc is not None]
    fig, ax = plt.subplots(figsize=(6, 4))
    if points:
        ths, accs = zip(*points)
        ax.plot(ths, [a * 100 for a in accs], marker='o', linewidth=2, label=report['model_id'])
        ax.legend()
    auc = report['auc'].get(norm)
    ax.set_xlabel('threshold th')
    ax.set_ylabel('adversarial accuracy (%)')
    ax.set_title('{} attack, AUC {} (seed {})'.format(NORM_TITLES[norm], 'n/a' if auc is None else '{:.3f}'.format(auc),
                                                      report['seed']))
    ax.set_ylim(0, 100)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    buf = io.StringIO()
    fig.savefig(buf, format='svg', metadata={'Date': None})
    plt.close(fig)
    return buf.getvalue()


def render(report: Dict[str, Any], out_dir: str, svg: bool = True) -> List[str]:
    """Write the CSV tables (and SVG curves) derived from a report document."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    tables = [
        ('levels.csv', level_rows(report),
         ['model_id', 'norm', 'th', 'accuracy', 'attacked', 'successes', 'errored', 'skipped', 'mean_l2', 'seed']),
        ('curves.csv', curve_rows(report), ['norm', 'th', 'accuracy', 'seed']),
        ('class_matrix.csv', class_rows(report), ['norm', 'th', 'class', 'class_name', 'rate', 'seed']),
        ('overlap.csv', overlap_rows(report), ['th', 'both', 'only_l0', 'only_linf', 'neither', 'seed']),
    ]
    for name, rows, columns in tables:
        path = os.path.join(out_dir, name)
        write_csv(path, rows, columns)
        written.append(path)
    if svg:
        for norm in report['curves']:
            path = os.path.join(out_dir, 'curve_{}.svg'.format(norm))
            atomic_write(path, plot_curve(report, norm))
            written.append(path)
    return written


def write_report(report: RobustnessReport, out_dir: str, svg: bool = True) -> Dict[str, Any]:
    os.makedirs(out_dir, exist_ok=True)
    doc = report.to_dict()
    write_json(os.path.join(out_dir, REPORT_FILE), doc)
    render(doc, out_dir, svg)
    save_adversarials(os.path.join(out_dir, ADVERSARIALS_FILE), report)
    logging.info('report written to {}'.format(out_dir))
    return doc


def write_transfer(matrix: TransferMatrix, out_dir: str, seed: int):
    os.makedirs(out_dir, exist_ok=True)
    doc = {'seed': seed, **matrix.to_dict()}
    write_json(os.path.join(out_dir, 'transfer.json'), doc)
    rows = [{'source': s, **{t: v for t, v in zip(matrix.targets, row)}, 'count': n, 'seed': seed}
            for s, row, n in zip(matrix.sources, matrix.values, matrix.counts)]
    write_csv(os.path.join(out_dir, 'transfer.csv'), rows, ['source'] + matrix.targets + ['count', 'seed'])


def save_adversarials(path: str, report: RobustnessReport):
    """Archive each sample's first successful adversarial image per norm."""
    ids, labels, norms, ths, images = [], [], [], [], []
    for norm in report.config.norms:
        seen = set()
        for level in report.results[norm]:
            for o in level.outcomes:
                if o.success and o.sample_id not in seen:
                    seen.add(o.sample_id)
                    ids.append(o.sample_id)
                    labels.append(o.true_label)
                    norms.append(norm)
                    ths.append(o.th)
                    images.append(o.adversarial.pixels)
    atomic_write(path, _npz_bytes({
        'model_id': np.array(report.model_id),
        'seed': np.array(report.config.seed, dtype=np.int64),
        'ids': np.array(ids, dtype=np.int64),
        'labels': np.array(labels, dtype=np.int64),
        'norms': np.array(norms, dtype='<U4'),
        'ths': np.array(ths, dtype=np.int64),
        'images': np.array(images, dtype=np.float64) if images else np.zeros((0, 0, 0, 0)),
    }))


def _npz_bytes(arrays: Dict[str, np.ndarray]) -> bytes:
    """A compressed .npz whose bytes depend only on the arrays."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, 'w') as archive:
        for name, array in arrays.items():
            member = io.BytesIO()
            np.lib.format.write_array(member, np.asanyarray(array), allow_pickle=False)
            info = zipfile.ZipInfo(name + '.npy', date_time=NPZ_DATE_TIME)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            archive.writestr(info, member.getvalue())
    return buf.getvalue()


def load_adversarials(path: str, norm: Optional[str] = None) -> Dict[str, Any]:
    """Read an archive back as {'model_id', 'seed', 'outcomes'} with success outcomes."""
    with np.load(path, allow_pickle=False) as data:
        try:
            model_id = str(data['model_id'])
            seed = int(data['seed'])
            rows = zip(data['ids'], data['labels'], data['norms'], data['ths'], data['images'])
            outcomes = [
                AttackOutcome(sample_id=int(i), true_label=int(c), norm=str(n), th=int(th), optimizer='',
                              status=SUCCESS, seed=seed, adversarial=Image(img))
                for i, c, n, th, img in rows if norm is None or str(n) == norm
            ]
        except KeyError as e:
            raise ReportFormatError('{} is not an adversarial archive: missing {}'.format(path, e)) from e
    return {'model_id': model_id, 'seed': seed, 'outcomes': outcomes}
