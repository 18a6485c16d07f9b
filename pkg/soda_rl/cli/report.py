import csv
import logging
from os import path

import click

from . import cli, finish_manifest, input_path, new_manifest, prepare_run_dir, usage_errors
from .evaluate import load_collections
from ..behavior import behavior_table, load_behavior
from ..datamodel import N_ACTIONS, load_dataset
from ..ope import EvalConfig, evaluate_collection
from ..report import FILTER_STEMS, FILTERS, average_action_probs, select_transitions, top_diverse_states

logger = logging.getLogger(__name__)  # pylint: disable=invalid-name

DIVERSE_STATES_NAME = 'diverse_states.csv'


@cli.command('report')
@click.argument('checkpoints', type=click.Path(exists=True))
@click.argument('behavior', type=click.Path(dir_okay=False), callback=input_path)
@click.argument('dataset', type=click.Path(dir_okay=False), callback=input_path)
@click.option('--filter', 'filters', type=click.Choice(FILTERS), multiple=True,
              help="State subsets to report [default: all of them]")
@click.option('--top', type=click.IntRange(min=0),
              default=10, show_default=True, help="Number of most diverse states to dump")
@click.option('--config', 'config_file', type=click.Path(dir_okay=False), callback=input_path,
              help="Evaluation config deciding which policies are kept")
@click.option('--out', type=click.Path(file_okay=False), required=True, help="Run directory")
@click.pass_context
def report(ctx, checkpoints, behavior, dataset, filters, top, config_file, out):
    """Average action distributions per state subset and the most diverse states"""

    collections = load_collections(checkpoints)

    with usage_errors():
        eval_config = EvalConfig.from_file(config_file)
        data = load_dataset(dataset)
        table = behavior_table(load_behavior(behavior), data, threads=ctx.obj['threads'])
        states = data.arrays.states

        # deployed distributions of the kept agents, per collection
        agents = []
        for name, _, collection in collections:
            masks = table.masks(collection.safety_epsilon)
            evaluation = evaluate_collection(collection, table, data, eval_config, masks)
            agents.append((name, [(i, collection.action_probs(i, states, masks)) for i in evaluation.kept]))

    prepare_run_dir(out)
    manifest = new_manifest(out, 'report', inputs=[behavior, dataset, config_file]
                            + [filename for _, filename, _ in collections])

    grid = collections[0][2].grid
    header = ['source', 'n_states'] + [grid.describe(a) for a in range(N_ACTIONS)]
    outputs = []

    for name in filters or FILTERS:
        selection = select_transitions(data, name)

        rows = []
        behavior_avg = average_action_probs(table.probs, selection)
        if behavior_avg is None:
            logger.warning("filter '%s' selects no states", name)
        else:
            rows.append(['behavior', int(selection.sum())] + [repr(v) for v in behavior_avg])
            for cname, kept in agents:
                for index, probs in kept:
                    rows.append(['{}:{}'.format(cname, index), int(selection.sum())]
                                + [repr(v) for v in average_action_probs(probs, selection)])

        outputs.append(path.join(out, 'actions_{}.csv'.format(FILTER_STEMS[name])))
        with open(outputs[-1], 'w', newline='') as fhandle:
            writer = csv.writer(fhandle, lineterminator='\n')
            writer.writerow(header)
            writer.writerows(rows)

    outputs.append(path.join(out, DIVERSE_STATES_NAME))
    arrays = data.arrays

    with open(outputs[-1], 'w', newline='') as fhandle:
        writer = csv.writer(fhandle, lineterminator='\n')
        writer.writerow(['collection', 'rank', 'stay_id', 't', 'pairwise_symkl', 'source']
                        + [grid.describe(a) for a in range(N_ACTIONS)])

        for cname, kept in agents:
            if len(kept) < 2:
                logger.warning("collection '%s' has fewer than two kept agents, no diverse states", cname)
                continue

            for rank, state in enumerate(top_diverse_states([p for _, p in kept], top), 1):
                prefix = [cname, rank, data.trajectories[arrays.trajectory[state.index]].stay_id,
                          int(arrays.t[state.index]), repr(state.diversity)]
                writer.writerow(prefix + ['behavior'] + [repr(v) for v in table.probs[state.index]])
                for index, probs in kept:
                    writer.writerow(prefix + ['agent {}'.format(index)] + [repr(v) for v in probs[state.index]])

    finish_manifest(manifest, out, outputs)

    click.echo("Wrote {} report file(s) to '{}'".format(len(outputs), out))
