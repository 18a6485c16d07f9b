from os import path

import click

from . import cli, finish_manifest, input_path, new_manifest, prepare_run_dir, usage_errors
from ..behavior import DEFAULT_K, behavior_table, fit_behavior, read_distance_weights, save_behavior, write_mask_cache
from ..datamodel import load_dataset

BEHAVIOR_NAME = 'behavior.npz'
MASK_CACHE_NAME = 'masks.jsonl'


@cli.command('fit-behavior')
@click.argument('dataset', type=click.Path(dir_okay=False), callback=input_path)
@click.option('-k', type=click.IntRange(min=1),
              default=DEFAULT_K, show_default=True, help="Number of nearest neighbors")
@click.option('--weights', 'weights_file', type=click.Path(dir_okay=False), callback=input_path,
              help="Per-feature distance weights (`feature weight` lines), all 1 by default")
@click.option('--epsilon', type=click.FloatRange(0., 1., min_open=True, max_open=True),
              default=0.03, show_default=True, help="Safety threshold of the mask cache")
@click.option('--out', type=click.Path(file_okay=False), required=True, help="Run directory")
@click.pass_context
def fit_behavior_cmd(ctx, dataset, k, weights_file, epsilon, out):
    """Fit the kNN behavior model and cache the safety masks of the dataset"""

    with usage_errors():
        data = load_dataset(dataset)
        weights = read_distance_weights(weights_file, data.schema) if weights_file else None
        model = fit_behavior(data, k, weights)
        # each transition is dropped from its own neighbor list
        table = behavior_table(model, data, exclude_self=True, threads=ctx.obj['threads'])

    prepare_run_dir(out)

    manifest = new_manifest(out, 'fit-behavior', inputs=[dataset, weights_file])
    manifest.configs['behavior'] = {'k': str(k), 'epsilon': repr(epsilon)}

    outputs = [path.join(out, BEHAVIOR_NAME), path.join(out, MASK_CACHE_NAME)]
    save_behavior(model, outputs[0])
    write_mask_cache(table, data, epsilon, outputs[1])

    finish_manifest(manifest, out, outputs)

    allowed = table.masks(epsilon).sum(axis=1)
    click.echo("Behavior model: {} reference transitions, k={}; {:.2f} allowed actions per state on average".format(
        model.n_references, k, allowed.mean()))
