"""The `soda` command line: simulate -> fit-behavior -> train -> evaluate -> report"""

import logging
import os
from contextlib import contextmanager
from os import path

import click
import click_log

from .. import __version__, resolve_data_path
from ..errors import ConfigError, DatasetFormatError, InvalidInputError, SchemaError
from ..manifest import RunManifest, write_manifest

logger = logging.getLogger('soda_rl')  # pylint: disable=invalid-name
click_log.basic_config(logger)


def get_table_instance(table_data, has_header=True):
    from sys import stdout
    from terminaltables import SingleTable, AsciiTable

    if stdout.isatty():
        tinstance = SingleTable(table_data)
    else:
        tinstance = AsciiTable(table_data)

    tinstance.inner_heading_row_border = has_header
    return tinstance


def bool2str(value):
    return u'\N{check mark}' if value else u'\N{heavy multiplication x}'


def input_path(ctx, param, value):  # pylint: disable=unused-argument
    """click callback: resolve an input file against $SODA_DATA_DIR, fail if it does not exist"""

    if value is None:
        return None

    resolved = resolve_data_path(value)
    if not path.exists(resolved):
        raise click.BadParameter("file '{}' does not exist".format(value), ctx=ctx, param=param)

    return resolved


@contextmanager
def usage_errors():
    """Report invalid inputs and configs as usage errors (exit code 2)"""

    try:
        yield
    except (ConfigError, SchemaError, DatasetFormatError, InvalidInputError) as exc:
        raise click.UsageError(str(exc))
    except (OSError, IOError) as exc:
        raise click.UsageError("unable to access '{}': {}".format(exc.filename, exc.strerror))


def prepare_run_dir(out):
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise click.BadParameter("unable to create run directory '{}': {}".format(out, exc.strerror),
                                 param_hint='--out')
    return out


def finish_manifest(manifest, out, outputs):
    for filename in outputs:
        manifest.add_output(filename, out)
    manifest.finish()
    write_manifest(manifest, out)
    logger.info("wrote %d output file(s) to '%s'", len(outputs), out)


def new_manifest(out, command, seed=None, inputs=()):
    manifest = RunManifest(path.basename(path.normpath(out)), command, seed=seed)
    for filename in inputs:
        if filename:
            manifest.add_input(filename)
    return manifest


@click.group()
@click.option('--threads', type=click.IntRange(min=1),
              default=1, show_default=True,
              help="Worker threads for neighbor searches and rollouts (1 for bit-reproducible runs)")
@click_log.simple_verbosity_option(logger)
@click.version_option(__version__)
@click.pass_context
def cli(ctx, threads):
    """Safe and diverse policy collections from batch data"""

    if ctx.obj is None:
        ctx.obj = {}

    ctx.obj['threads'] = threads


from . import behavior, evaluate, report, simulate, train  # noqa: E402,F401  pylint: disable=wrong-import-position
