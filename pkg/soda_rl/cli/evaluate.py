import csv
import sys
from glob import glob
from os import path

import click

from . import (
    bool2str,
    cli,
    finish_manifest,
    get_table_instance,
    input_path,
    new_manifest,
    prepare_run_dir,
    usage_errors,
    )
from ..behavior import behavior_table, load_behavior
from ..config import config_to_mapping
from ..datamodel import load_dataset
from ..ope import (
    TABLE_COLUMNS,
    EvalConfig,
    collection_summary,
    empirical_behavior_value,
    evaluate_collection,
    result_row,
    )
from ..policy import load_collection
from ..runners import POLICIES_NAME

EVALUATION_NAME = 'evaluation.csv'
SUMMARY_NAME = 'summary.csv'


def find_collections(checkpoints):
    """Policy collection files: the given file or all final collections below a directory"""

    if path.isfile(checkpoints):
        return [checkpoints]

    found = sorted(glob(path.join(checkpoints, '**', POLICIES_NAME), recursive=True))

    if not found:
        raise click.UsageError("no policy collections ({}) found in '{}'".format(POLICIES_NAME, checkpoints))

    return found


def collection_name(filename, checkpoints):
    if path.isfile(checkpoints):
        return path.basename(path.dirname(path.abspath(filename))) or filename
    return path.relpath(path.dirname(filename), checkpoints)


def load_collections(checkpoints):
    """`(name, filename, collection)` for every collection below `checkpoints`"""

    collections = []
    with usage_errors():
        for filename in find_collections(checkpoints):
            collection, _ = load_collection(filename)
            collections.append((collection_name(filename, checkpoints), filename, collection))
    return collections


def format_mean_std(value):
    if value is None:
        return ''
    if isinstance(value, tuple):
        return "{:.4g}±{:.4g}".format(*value)
    return str(value)


@cli.command('evaluate')
@click.argument('checkpoints', type=click.Path(exists=True))
@click.argument('behavior', type=click.Path(dir_okay=False), callback=input_path)
@click.argument('dataset', type=click.Path(dir_okay=False), callback=input_path)
@click.option('--config', 'config_file', type=click.Path(dir_okay=False), callback=input_path,
              help="Evaluation config file (key-value)")
@click.option('--gamma', type=click.FloatRange(0., 1., min_open=True), help="Discount factor")
@click.option('--ess-threshold', type=click.FloatRange(min=0., min_open=True),
              help="Minimum ESS for a policy to be kept")
@click.option('--out', type=click.Path(file_okay=False), required=True, help="Run directory")
@click.option('--csv-output', is_flag=True,
              default=False, show_default=True,
              help="print the per-policy table in CSV format")
@click.pass_context
def evaluate(ctx, checkpoints, behavior, dataset, config_file, gamma, ess_threshold, out, csv_output):
    """Off-policy evaluation of trained policy collections"""

    collections = load_collections(checkpoints)

    with usage_errors():
        eval_config = EvalConfig.from_file(config_file, gamma=gamma, ess_threshold=ess_threshold)
        data = load_dataset(dataset)
        table = behavior_table(load_behavior(behavior), data, threads=ctx.obj['threads'])

        behavior_value = empirical_behavior_value(data, eval_config.gamma)
        evaluations = [(name, evaluate_collection(collection, table, data, eval_config))
                       for name, _, collection in collections]

    prepare_run_dir(out)

    manifest = new_manifest(out, 'evaluate', inputs=[behavior, dataset, config_file]
                            + [filename for _, filename, _ in collections])
    manifest.configs['eval'] = dict(config_to_mapping(eval_config))

    header = ['collection', 'policy'] + list(TABLE_COLUMNS)
    rows = [[name, str(index)] + result_row(result)
            for name, evaluation in evaluations for index, result in enumerate(evaluation)]

    summary_header = ['collection'] + list(TABLE_COLUMNS[:-1]) + ['# Kept Agents']
    summary_rows = []
    for name, evaluation in evaluations:
        summary = collection_summary(evaluation)
        summary_rows.append([name] + [format_mean_std(summary[c]) for c in TABLE_COLUMNS])
    summary_rows.append(['behavior (empirical)', repr(behavior_value)] + [''] * (len(summary_header) - 2))

    outputs = [path.join(out, EVALUATION_NAME), path.join(out, SUMMARY_NAME)]
    for filename, hdr, content in ((outputs[0], header, rows), (outputs[1], summary_header, summary_rows)):
        with open(filename, 'w', newline='') as fhandle:
            writer = csv.writer(fhandle, lineterminator='\n')
            writer.writerow(hdr)
            writer.writerows(content)

    finish_manifest(manifest, out, outputs)

    if csv_output:
        writer = csv.writer(sys.stdout, lineterminator='\n')
        writer.writerows([header] + rows)
        return

    display = [[name, str(index), "{:.4f}".format(r.value), "{:.4f}".format(r.ce_vs_behavior),
                "{:.4f}".format(r.symkl_vs_behavior), "{:.1f}".format(r.ess),
                '' if r.pairwise_symkl is None else "{:.4f}".format(r.pairwise_symkl),
                str(r.unseen_action_count), bool2str(r.kept)]
               for name, evaluation in evaluations for index, r in enumerate(evaluation)]

    click.echo(get_table_instance([header] + display).table)
    click.echo(get_table_instance([summary_header] + summary_rows).table)
