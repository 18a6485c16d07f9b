"""Run a list of training configurations, each in its own run directory.

A run directory holds a `status` file (new, running, done or error): finished
runs are skipped, runs interrupted while running are resumed from their
checkpoint."""

import itertools
import logging
import os
from dataclasses import replace
from os import path

from .config import config_to_mapping
from .errors import RunnerError
from .manifest import RunManifest, write_manifest
from .runners import RUNNERS

logger = logging.getLogger(__name__)  # pylint: disable=invalid-name

STATUS_NAME = 'status'
STATES = ('new', 'running', 'done', 'error')


def run_name(config):
    name = "lambda-{:g}_eps-{:g}_{}".format(config.lambda_, config.epsilon, config.quality_kind)
    if not config.use_safety:
        name += "_nosafety"
    if not config.use_diversity:
        name += "_nodiversity"
    return name


def sweep_configs(base, lambdas=(), epsilons=(), qualities=()):
    """Cartesian product over the given values, unset axes keep the base value"""

    return [replace(base, lambda_=lam, epsilon=eps, quality_kind=quality)
            for lam, eps, quality in itertools.product(lambdas or (base.lambda_,),
                                                       epsilons or (base.epsilon,),
                                                       qualities or (base.quality_kind,))]


def read_status(run_dir):
    try:
        with open(path.join(run_dir, STATUS_NAME), 'r') as fhandle:
            status = fhandle.read().strip()
    except (OSError, IOError):
        return 'new'

    return status if status in STATES else 'new'


def write_status(run_dir, status):
    with open(path.join(run_dir, STATUS_NAME), 'w') as fhandle:
        fhandle.write(status + '\n')


def run_iterator(out_dir, configs, ignore_running=False, rerun_done=False):
    """Yields `(name, run_dir, config, status)` of the runs still to do"""

    for config in configs:
        name = run_name(config)
        run_dir = path.join(out_dir, name)
        status = read_status(run_dir)

        if status == 'done' and not rerun_done:
            logger.info("run %s: already done, skipping", name)
            continue

        if status == 'running' and ignore_running:
            logger.info("run %s: ignoring interrupted run", name)
            continue

        yield name, run_dir, config, status


def execute_run(name, run_dir, config, inputs, resume=False, runner_name='train', input_files=()):
    """Run (or resume) one configuration in `run_dir`, returns the final status.

    :param inputs: dict with 'dataset', 'behavior' and optionally 'validation', 'eval_config', 'threads'
    """

    os.makedirs(run_dir, exist_ok=True)

    settings = dict(inputs, name=name, train_config=config)
    runner = RUNNERS[runner_name](settings, run_dir)

    manifest = RunManifest(name, runner_name, seed=config.seed, configs={'train': dict(config_to_mapping(config))})
    if inputs.get('eval_config') is not None:
        manifest.configs['eval'] = dict(config_to_mapping(inputs['eval_config']))
    for filename in input_files:
        manifest.add_input(filename)

    def set_run_running():
        logger.info("run %s: started", name)
        write_status(run_dir, 'running')

    try:
        if resume:
            write_status(run_dir, 'running')
            runner.check()
        else:
            runner.run(set_run_running)

    except RunnerError:
        logger.exception("client error occurred, leave the run as is")
        return read_status(run_dir)

    except Exception:  # pylint: disable=broad-except
        logger.exception("run %s: error occurred during run", name)

    status = 'running'

    if runner.finished:
        logger.info("run %s: finished, collecting output", name)

        for filename in sorted(runner.outfiles):
            if path.exists(filename) and path.getsize(filename):
                manifest.add_output(filename, run_dir)

        manifest.finish()
        manifest.configs['runner'] = runner.data
        write_manifest(manifest, run_dir)

        status = 'done' if runner.success else 'error'
        write_status(run_dir, status)

    return status


def run_sweep(out_dir, configs, inputs, ignore_running=False, rerun_done=False, input_files=()):
    """Execute all configurations, returns `{run name: status}`"""

    results = {}

    for name, run_dir, config, status in run_iterator(out_dir, configs, ignore_running, rerun_done):
        results[name] = execute_run(name, run_dir, config, inputs, resume=(status == 'running'),
                                    input_files=input_files)

    failed = [n for n, s in results.items() if s != 'done']
    if failed:
        logger.warning("%d of %d runs did not finish: %s", len(failed), len(results), ', '.join(failed))
    else:
        logger.info("all %d runs done", len(results))

    return results
