from os import path

import click

from . import cli, finish_manifest, input_path, new_manifest, prepare_run_dir, usage_errors
from ..config import config_to_mapping
from ..datamodel import SPLITS, save_dataset, split_dataset
from ..simulator import SimConfig, simulate_dataset


@cli.command('simulate')
@click.option('--config', 'config_file', type=click.Path(dir_okay=False), callback=input_path,
              help="Simulator config file (key-value with an optional [action_effects] block)")
@click.option('-n', '--n-trajectories', type=click.IntRange(min=0),
              default=2000, show_default=True, help="Number of trajectories")
@click.option('--seed', type=int, help="Override the seed of the config")
@click.option('--split', type=click.Choice(SPLITS),
              default='train', show_default=True, help="Split tag of the emitted dataset")
@click.option('--holdout', type=click.FloatRange(0., 1.),
              help="Also write train/validation/test files, holding out this fraction for testing")
@click.option('--validation', 'validation_fraction', type=click.FloatRange(0., 1.),
              default=0., show_default=True, help="Validation fraction when using --holdout")
@click.option('--out', type=click.Path(file_okay=False), required=True, help="Run directory")
def simulate(config_file, n_trajectories, seed, split, holdout, validation_fraction, out):
    """Draw a synthetic dataset under the ground-truth behavior mixture"""

    with usage_errors():
        config = SimConfig.from_file(config_file, seed=seed)

        if holdout is not None and holdout + validation_fraction > 1.:
            raise click.BadParameter("holdout and validation fractions exceed 1", param_hint='--holdout')

        dataset = simulate_dataset(config, n_trajectories, split=split)

    prepare_run_dir(out)

    manifest = new_manifest(out, 'simulate', config.seed, [config_file])
    manifest.configs['sim'] = dict(config_to_mapping(config))

    outputs = [path.join(out, 'dataset.jsonl')]
    save_dataset(dataset, outputs[0])

    if holdout is not None:
        splits = split_dataset(dataset, (1. - holdout - validation_fraction, validation_fraction, holdout),
                               config.seed)
        for name, part in splits.items():
            if len(part):
                outputs.append(path.join(out, '{}.jsonl'.format(name)))
                save_dataset(part, outputs[-1])

    finish_manifest(manifest, out, outputs)

    click.echo("Simulated {} trajectories ({} transitions) into '{}'".format(
        len(dataset), dataset.n_transitions, out))
