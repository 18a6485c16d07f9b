"""Run manifests: configs, seed, tool version and content hashes of every input and output file"""

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from os import path
from typing import Dict, Optional

from . import __version__
from .errors import InvalidInputError

logger = logging.getLogger(__name__)  # pylint: disable=invalid-name

MANIFEST_NAME = 'manifest.json'

HASH_BLOCK = 1 << 16


def sha256sum(filename):
    digest = hashlib.sha256()

    with open(filename, 'rb') as fhandle:
        for block in iter(lambda: fhandle.read(HASH_BLOCK), b''):
            digest.update(block)

    return digest.hexdigest()


def _timestamp():
    return time.strftime('%Y-%m-%dT%H:%M:%S%z')


@dataclass
class RunManifest:
    run_id: str
    command: str
    seed: Optional[int] = None
    configs: Dict[str, dict] = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    version: str = __version__
    started: str = field(default_factory=_timestamp)
    finished: Optional[str] = None

    def add_input(self, filename):
        self.inputs[filename] = sha256sum(filename)

    def add_output(self, filename, base_dir=None):
        """Record an output file, by path relative to `base_dir` if given"""
        key = path.relpath(filename, base_dir) if base_dir else filename
        self.outputs[key] = sha256sum(filename)

    def finish(self):
        self.finished = _timestamp()

    def verify(self, base_dir=None):
        """Names of the recorded outputs whose current content differs from the recorded hash"""

        changed = []
        for name, digest in sorted(self.outputs.items()):
            filename = path.join(base_dir, name) if base_dir else name
            if not path.exists(filename) or sha256sum(filename) != digest:
                changed.append(name)
        return changed

    def to_json(self):
        return asdict(self)


def write_manifest(manifest, run_dir):
    filename = path.join(run_dir, MANIFEST_NAME)

    with open(filename, 'w') as fhandle:
        json.dump(manifest.to_json(), fhandle, sort_keys=True, indent=4, separators=(',', ': '))

    logger.debug("wrote manifest '%s'", filename)
    return filename


def read_manifest(run_dir):
    filename = path.join(run_dir, MANIFEST_NAME)

    try:
        with open(filename, 'r') as fhandle:
            return RunManifest(**json.load(fhandle))
    except (OSError, IOError, ValueError, TypeError) as exc:
        raise InvalidInputError("unable to read manifest '{}': {}".format(filename, exc)) from exc
