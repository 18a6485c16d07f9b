"""Run-directory runners: train one configuration into a directory, resumable"""

import csv
import logging
import time
from abc import ABCMeta, abstractmethod
from dataclasses import replace
from os import path

from .config import write_config
from .errors import RunnerError
from .policy import save_collection
from .training import history_header, history_rows, load_training_checkpoint, save_training_checkpoint, train

logger = logging.getLogger(__name__)  # pylint: disable=locally-disabled,invalid-name

CHECKPOINT_NAME = 'checkpoint.json'
POLICIES_NAME = 'policies.json'
HISTORY_NAME = 'history.csv'
CONFIG_NAME = 'train.cfg'


class RunnerBase(metaclass=ABCMeta):
    """Base class to implement runners.

    `settings` holds the inputs of the run: 'name', 'train_config', 'dataset',
    'behavior' and optionally 'validation', 'eval_config' and 'threads'."""

    def __init__(self, settings, run_dir):
        self._settings = settings
        self._run_dir = run_dir

        self.outfiles = set()
        self.data = {
            'warnings': [],
            'errors': [],
            'runner': {},
            }
        self.finished = False
        self.success = False

    @abstractmethod
    def run(self, running_func):
        """Run from scratch.

        The function running_func is called as soon as the run has started."""

    @abstractmethod
    def check(self):
        """Continue a run which was interrupted while running"""


class TrainRunner(RunnerBase):
    """Trains a policy collection, checkpointing after every epoch"""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)

        self.checkpoint_fn = path.join(self._run_dir, CHECKPOINT_NAME)
        self.policies_fn = path.join(self._run_dir, POLICIES_NAME)
        self.history_fn = path.join(self._run_dir, HISTORY_NAME)
        self.config_fn = path.join(self._run_dir, CONFIG_NAME)

    def _write_history(self, rows):
        try:
            with open(self.history_fn, 'w', newline='') as fhandle:
                writer = csv.writer(fhandle, lineterminator='\n')
                writer.writerow(history_header(self._settings['train_config'].n_policies))
                writer.writerows(rows)
        except (OSError, IOError) as exc:
            raise RunnerError("error when writing {}".format(exc.filename)) from exc

        self.outfiles.add(self.history_fn)

    def _train(self, resume_from=None):
        config = self._settings['train_config']
        previous = [] if resume_from is None else [list(r) for r in resume_from.history]

        def epoch_done(epoch, collection, optimizer, history):
            rows = previous + [list(map(str, r)) for r in history_rows(history, config.n_policies)]
            save_training_checkpoint(collection, optimizer, epoch + 1, config, self.checkpoint_fn, rows)
            self._write_history(rows)

        start = time.time()

        kwargs = {}
        if resume_from is not None:
            kwargs = {
                'collection': resume_from.collection,
                'optimizer': resume_from.optimizer,
                'start_epoch': resume_from.epochs_completed,
                }

        collection, _ = train(self._settings['dataset'], config, self._settings['behavior'],
                              validation=self._settings.get('validation'),
                              eval_config=self._settings.get('eval_config'),
                              epoch_callback=epoch_done, threads=self._settings.get('threads', 1),
                              **kwargs)

        if not path.exists(self.history_fn):
            self._write_history(previous)

        save_collection(collection, self.policies_fn)
        self.outfiles.update({self.policies_fn, self.checkpoint_fn, self.config_fn})
        self.data['runner']['walltime'] = time.time() - start

    def run(self, running_func):
        try:
            write_config(self._settings['train_config'], self.config_fn)
        except (OSError, IOError) as exc:
            raise RunnerError("error when opening {}".format(exc.filename)) from exc

        running_func()

        # no matter how we exit this function, the run will have terminated
        self.finished = True

        try:
            self._train()
        except Exception as exc:
            self.data['errors'].append({'msg': "error occurred while training: {}".format(exc)})
            raise

        self.success = True

    def check(self):
        """Resume from the last checkpoint, start over if there is none"""

        if not path.exists(self.checkpoint_fn):
            logger.info("run %s: no checkpoint found, starting over", self._settings['name'])
            self.run(lambda: None)
            return

        checkpoint = load_training_checkpoint(self.checkpoint_fn)

        # only the number of epochs may change between the interrupted and the resumed run
        config = self._settings['train_config']
        if replace(checkpoint.config, epochs=config.epochs) != config:
            raise RunnerError("run {}: the checkpoint was written with a different configuration".format(
                self._settings['name']))

        logger.info("run %s: resuming after epoch %d", self._settings['name'], checkpoint.epochs_completed)

        self.finished = True

        try:
            self._train(checkpoint)
        except Exception as exc:
            self.data['errors'].append({'msg': "error occurred while training: {}".format(exc)})
            raise

        self.success = True


# Register runners here:
RUNNERS = {
    'train': TrainRunner,
    }
