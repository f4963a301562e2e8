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

from __future__ import print_function

import argparse
import logging
import os
import sys

from dualqa.assess.assess import FULL_TH_MAX, assess, compare_optimizers
from dualqa.assess.report import load_adversarials, load_report, render, write_csv, write_report, write_transfer
from dualqa.assess.transfer import transfer
from dualqa.attacks.attack import NORMS, OPTIMIZERS, AttackSpec, attack
from dualqa.cli.frontend import RunConfig, attack_params, load_configs, parse_levels, parse_shape
from dualqa.dataset.cifar import serialize_cifar10_binary
from dualqa.dataset.dataset import select_eval_samples
from dualqa.imagecore.image import save_png
from dualqa.predictor.external import external_predictor
from dualqa.predictor.models import MODEL_KINDS
from dualqa.predictor.predictor import load_weights
from dualqa.predictor.train import train
from dualqa.utils.common import resolve_workers
from dualqa.utils.file_utils import atomic_write, init_logging, write_json
from dualqa.utils.train_utils import save_model

EXIT_OK = 0
EXIT_FAILURE = 1


def _add_common(parser):
    parser.add_argument('--config', default=None, help='yaml config, defaults to the packaged dualqa.yaml')
    parser.add_argument('--seed', default=None, type=int, help='seed for every stochastic step')
    parser.add_argument('--log-level',
                        default='INFO',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
                        help='logging verbosity')


def _add_dataset(parser):
    group = parser.add_mutually_exclusive_group()
    group.add_argument('--cifar', nargs='+', default=[], help='CIFAR-10 binary batch file(s)')
    group.add_argument('--synth', default=None, help='synthetic dataset CLASSESxPER_CLASSxHxWxC, e.g. 2x200x8x8x3')
    parser.add_argument('--shape', default='32x32x3', type=parse_shape, help='record shape HxWxC of --cifar files')
    parser.add_argument('--num-classes', default=None, type=int, help='number of classes of --cifar files')
    parser.add_argument('--separation', default=200.0, type=float, help='template separation of --synth')
    parser.add_argument('--noise', default=32.0, type=float, help='per-value noise of --synth')
    parser.add_argument('--data-seed', default=0, type=int, help='seed of the --synth generator')


def _add_model(parser):
    group = parser.add_mutually_exclusive_group()
    group.add_argument('--weights', default=None, help='built-in model weight file')
    group.add_argument('--external', default=None, help='command line of an external predictor process')
    parser.add_argument('--model-id', default=None, help='model name used in reports')


def _add_attack(parser):
    parser.add_argument('--optimizer', default=None, choices=OPTIMIZERS, help='search algorithm')
    parser.add_argument('--scale', default=None, type=float, help='factor on every evaluation budget')
    parser.add_argument('--max-evaluations', default=None, type=int, help='absolute evaluation cap per attack')


def _add_assess(parser):
    _add_attack(parser)
    parser.add_argument('--levels', default=None, type=parse_levels, help='comma separated thresholds, e.g. 1,3,5,10')
    parser.add_argument('--norm', default='both', choices=list(NORMS) + ['both'], help='attack norm(s)')
    parser.add_argument('--samples', default=None, type=int, help='number of evaluation samples')
    parser.add_argument('--all-samples',
                        action='store_true',
                        help='also attack samples the model already misclassifies')
    parser.add_argument('--workers', default=None, type=int, help='attack worker processes (env DUALQA_WORKERS)')
    parser.add_argument('--curve', action='store_true', help='attack every th from 1 to --th-max')
    parser.add_argument('--th-max',
                        default=None,
                        type=int,
                        help='last th of --curve, ignored without it; 16 at desk scale, {} for full curves'.format(
                            FULL_TH_MAX))
    parser.add_argument('--independent', action='store_true', help='re-attack every sample at every threshold')


def get_args(argv=None):
    parser = argparse.ArgumentParser(prog='dualqa', description='dual L0 / Linf black-box robustness assessment')
    subparsers = parser.add_subparsers(dest='command', required=True)

    p = subparsers.add_parser('train', help='train a built-in classifier')
    _add_common(p)
    _add_dataset(p)
    p.add_argument('--model', default='linear', choices=sorted(MODEL_KINDS), help='built-in model kind')
    p.add_argument('--epochs', default=None, type=int, help='training epochs')
    p.add_argument('--lr', default=None, type=float, help='learning rate')
    p.add_argument('--metrics', default=None, help='metrics json path, defaults next to --out')
    p.add_argument('--out', required=True, help='weight file to write')

    p = subparsers.add_parser('attack', help='attack a single sample')
    _add_common(p)
    _add_dataset(p)
    _add_model(p)
    _add_attack(p)
    p.add_argument('--index', default=0, type=int, help='position of the sample in the dataset')
    p.add_argument('--norm', required=True, choices=NORMS, help='attack norm')
    p.add_argument('--th', required=True, type=int, help='threshold')
    p.add_argument('--out', required=True, help='output directory')

    p = subparsers.add_parser('assess', help='dual robustness assessment')
    _add_common(p)
    _add_dataset(p)
    _add_model(p)
    _add_assess(p)
    p.add_argument('--no-svg', action='store_true', help='skip the SVG curves')
    p.add_argument('--out', required=True, help='output directory')

    p = subparsers.add_parser('compare', help='DE versus CMA-ES on one sample set')
    _add_common(p)
    _add_dataset(p)
    _add_model(p)
    _add_assess(p)
    p.add_argument('--out', required=True, help='output directory')

    p = subparsers.add_parser('transfer', help='replay stored adversarial images against target models')
    _add_common(p)
    p.add_argument('--source', action='append', required=True, help='adversarials.npz of an assessment')
    p.add_argument('--target', action='append', default=[], help='NAME=WEIGHTS target model')
    p.add_argument('--target-external', action='append', default=[], help='NAME=COMMAND target process')
    p.add_argument('--num-classes', default=None, type=int, help='classes of external targets')
    p.add_argument('--norm', default=None, choices=NORMS, help='only replay images of this norm')
    p.add_argument('--out', required=True, help='output directory')

    p = subparsers.add_parser('synth', help='export a synthetic dataset as CIFAR binary records')
    _add_common(p)
    p.add_argument('--synth', required=True, help='CLASSESxPER_CLASSxHxWxC')
    p.add_argument('--separation', default=200.0, type=float, help='template separation')
    p.add_argument('--noise', default=32.0, type=float, help='per-value noise')
    p.add_argument('--data-seed', default=0, type=int, help='generator seed')
    p.add_argument('--out', required=True, help='binary file to write')

    p = subparsers.add_parser('report', help='re-render CSV and SVG files from report.json')
    _add_common(p)
    p.add_argument('--report', required=True, help='report.json')
    p.add_argument('--out', default=None, help='output directory, defaults to the report directory')
    p.add_argument('--no-svg', action='store_true', help='skip the SVG curves')

    return parser.parse_args(argv)


def _run_config(args) -> RunConfig:
    overrides = {'seed': args.seed, 'scale': getattr(args, 'scale', None)}
    configs = load_configs(args.config, overrides)
    return RunConfig(subcommand=args.command,
                     seed=int(configs.get('seed', 0)),
                     out=args.out,
                     cifar=list(getattr(args, 'cifar', None) or []),
                     shape=getattr(args, 'shape', None) or (32, 32, 3),
                     synth=getattr(args, 'synth', None),
                     separation=getattr(args, 'separation', 200.0),
                     noise=getattr(args, 'noise', 32.0),
                     data_seed=getattr(args, 'data_seed', 0),
                     num_classes=getattr(args, 'num_classes', None),
                     weights=getattr(args, 'weights', None),
                     external=getattr(args, 'external', None),
                     model_id=getattr(args, 'model_id', None),
                     configs=configs)


def _close(p):
    if hasattr(p, 'close'):
        p.close()


def _named(pairs):
    named = []
    for text in pairs:
        name, sep, value = text.partition('=')
        if not sep or not name or not value:
            raise ValueError("expected NAME=VALUE, got '{}'".format(text))
        named.append((name, value))
    return named


def cmd_train(args, cfg: RunConfig) -> int:
    cfg.check_sources(need_model=False)
    d = cfg.load_dataset()
    train_conf = dict(cfg.configs.get('train_conf') or {})
    epochs = args.epochs if args.epochs is not None else int(train_conf.get('max_epoch', 20))
    lr = args.lr if args.lr is not None else float(train_conf.get('optim_conf', {}).get('lr', 0.1))
    result = train(args.model, d, epochs, lr, cfg.seed, train_conf)
    info_dict = {
        'kind': args.model,
        'train_acc': result.train_acc,
        'test_acc': result.test_acc,
        'epochs': result.epochs,
        'seed': result.seed,
        'metrics_path': args.metrics,
    }
    save_model(result.predictor, args.out, info_dict)
    return EXIT_OK


def cmd_attack(args, cfg: RunConfig) -> int:
    cfg.check_sources()
    d = cfg.load_dataset()
    if not 0 <= args.index < len(d):
        raise ValueError('--index {} outside the {} samples of the dataset'.format(args.index, len(d)))
    sample = d[args.index]
    p = cfg.load_predictor(d.shape, d.num_classes)
    params = attack_params(cfg.configs, args.norm)
    spec = AttackSpec(norm=args.norm, th=args.th, optimizer=args.optimizer or cfg.configs.get('optimizer', 'cmaes'),
                      seed=cfg.seed, scale=float(cfg.configs.get('scale', 1.0)),
                      max_evaluations=args.max_evaluations, **params)
    try:
        outcome = attack(p, sample, spec)
    finally:
        _close(p)
    os.makedirs(args.out, exist_ok=True)
    write_json(os.path.join(args.out, 'attack.json'), {
        'model_id': cfg.resolved_model_id,
        'seed': cfg.seed,
        'spec': spec.to_dict(),
        'outcome': outcome.to_dict(),
    })
    save_png(sample.image, os.path.join(args.out, 'original.png'))
    if outcome.success:
        save_png(outcome.adversarial, os.path.join(args.out, 'adversarial.png'))
    logging.info('sample {} {} th={}: {}'.format(sample.id, args.norm, args.th, outcome.status))
    return EXIT_OK


def _assessment_inputs(args, cfg: RunConfig):
    cfg.check_sources()
    d = cfg.load_dataset()
    p = cfg.load_predictor(d.shape, d.num_classes)
    samples_conf = cfg.configs.get('samples') or {}
    n = args.samples if args.samples is not None else int(samples_conf.get('n', 100))
    correct_only = not args.all_samples and bool(samples_conf.get('correctly_classified_only', True))
    samples = select_eval_samples(d, p, n, cfg.seed, correct_only)
    config = cfg.assess_config(levels=args.levels,
                               norms=NORMS if args.norm == 'both' else (args.norm, ),
                               optimizer=args.optimizer,
                               workers=resolve_workers(args.workers),
                               independent=True if args.independent else None,
                               curve=args.curve,
                               th_max=args.th_max,
                               max_evaluations=args.max_evaluations,
                               progress=logging.getLogger().isEnabledFor(logging.INFO))
    return d, p, samples, config


def cmd_assess(args, cfg: RunConfig) -> int:
    d, p, samples, config = _assessment_inputs(args, cfg)
    try:
        report = assess(p, samples, config, model_id=cfg.resolved_model_id, class_names=d.class_names)
    finally:
        _close(p)
    write_report(report, args.out, svg=not args.no_svg)
    if report.errored():
        logging.warning('{} attacks errored; see the errored field of report.json'.format(len(report.errored())))
    return EXIT_OK


def cmd_compare(args, cfg: RunConfig) -> int:
    _, p, samples, config = _assessment_inputs(args, cfg)
    try:
        rows = compare_optimizers(p, samples, config)
    finally:
        _close(p)
    os.makedirs(args.out, exist_ok=True)
    write_json(os.path.join(args.out, 'compare.json'), {'model_id': cfg.resolved_model_id, 'seed': cfg.seed,
                                                        'rows': rows})
    write_csv(os.path.join(args.out, 'compare.csv'), rows,
              ['optimizer', 'norm', 'th', 'accuracy', 'attacked', 'successes', 'mean_evaluations', 'mean_l2', 'seed'])
    return EXIT_OK


def cmd_transfer(args, cfg: RunConfig) -> int:
    sources = {}
    shape = None
    for path in args.source:
        archive = load_adversarials(path, args.norm)
        name = archive['model_id']
        if name in sources:
            name = '{}:{}'.format(name, os.path.basename(os.path.dirname(os.path.abspath(path))))
        sources[name] = archive['outcomes']
        if archive['outcomes']:
            shape = archive['outcomes'][0].adversarial.shape
    targets = {}
    for name, path in _named(args.target):
        targets[name] = load_weights(path)
    if args.target_external:
        if shape is None or args.num_classes is None:
            raise ValueError('external targets need --num-classes and at least one stored adversarial image')
        timeout = float((cfg.configs.get('external') or {}).get('timeout', 30.0))
        for name, command in _named(args.target_external):
            targets[name] = external_predictor(command, shape, args.num_classes, timeout)
    try:
        matrix = transfer(sources, targets)
    finally:
        for target in targets.values():
            _close(target)
    write_transfer(matrix, args.out, cfg.seed)
    return EXIT_OK


def cmd_synth(args, cfg: RunConfig) -> int:
    d = cfg.load_dataset()
    atomic_write(args.out, serialize_cifar10_binary(d))
    logging.info('wrote {} records of shape {} to {}'.format(len(d), d.shape, args.out))
    return EXIT_OK


def cmd_report(args, cfg: RunConfig) -> int:
    report = load_report(args.report)
    render(report, args.out or os.path.dirname(os.path.abspath(args.report)), svg=not args.no_svg)
    return EXIT_OK


COMMANDS = {
    'train': cmd_train,
    'attack': cmd_attack,
    'assess': cmd_assess,
    'compare': cmd_compare,
    'transfer': cmd_transfer,
    'synth': cmd_synth,
    'report': cmd_report,
}


def main(argv=None) -> int:
    args = get_args(argv)
    init_logging(args.log_level)
    try:
        cfg = _run_config(args)
        return COMMANDS[args.command](args, cfg)
    except Exception as e:  # noqa: BLE001
        logging.error('{} failed: {}: {}'.format(args.command, type(e).__name__, e))
        logging.debug('traceback', exc_info=True)
        return EXIT_FAILURE


if __name__ == '__main__':
    sys.exit(main())
