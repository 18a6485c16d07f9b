import logging

import click

from . import cli, get_table_instance, input_path, prepare_run_dir, usage_errors
from ..behavior import behavior_table, load_behavior, read_mask_cache
from ..datamodel import load_dataset
from ..ope import EvalConfig
from ..sweep import execute_run, run_name, run_sweep, sweep_configs
from ..training import EPSILON_GRID, LAMBDA_GRID, QUALITY_KINDS, TrainConfig

logger = logging.getLogger(__name__)  # pylint: disable=invalid-name


def training_table(model, data, mask_cache=None, threads=1):
    """Neighbor counts of the training transitions, from the fit-behavior cache when it matches"""

    if mask_cache:
        table, _ = read_mask_cache(mask_cache)
        if table.k == model.k and len(table.counts) == data.n_transitions:
            logger.info("using the cached neighbor counts from '%s'", mask_cache)
            return table
        logger.warning("mask cache '%s' (k=%d, %d transitions) does not match, recomputing",
                       mask_cache, table.k, len(table.counts))

    return behavior_table(model, data, exclude_self=True, threads=threads)


@cli.command('train')
@click.argument('dataset', type=click.Path(dir_okay=False), callback=input_path)
@click.argument('behavior', type=click.Path(dir_okay=False), callback=input_path)
@click.option('--config', 'config_file', type=click.Path(dir_okay=False), callback=input_path,
              help="Training config file (key-value)")
@click.option('--mask-cache', type=click.Path(dir_okay=False), callback=input_path,
              help="masks.jsonl written by fit-behavior for DATASET, recomputed if it does not match")
@click.option('--validation', type=click.Path(dir_okay=False), callback=input_path,
              help="Validation dataset for per-epoch ESS and CWPDIS")
@click.option('--eval-config', 'eval_config_file', type=click.Path(dir_okay=False), callback=input_path,
              help="Evaluation config for the validation metrics")
@click.option('--lambda', 'lambda_', type=click.FloatRange(min=0.), help="Diversity weight")
@click.option('--epsilon', type=click.FloatRange(0., 1., min_open=True, max_open=True),
              help="Safety threshold")
@click.option('--quality', 'quality_kind', type=click.Choice(QUALITY_KINDS, case_sensitive=False),
              help="Quality loss")
@click.option('--no-safety', is_flag=True, default=False, help="Train without the safety mask")
@click.option('--no-diversity', is_flag=True, default=False, help="Train without the diversity term")
@click.option('-K', '--n-policies', type=click.IntRange(min=1), help="Number of policies")
@click.option('--epochs', type=click.IntRange(min=0), help="Number of epochs")
@click.option('--batch-size', type=click.IntRange(min=1), help="Trajectories per batch")
@click.option('--hidden', type=click.IntRange(min=1), help="Width of the hidden layers")
@click.option('--seed', type=int, help="Seed for initialization and shuffling")
@click.option('--sweep', is_flag=True, default=False,
              help="Train every combination of the --sweep-* grids, each into its own run directory")
@click.option('--sweep-lambda', type=float, multiple=True,
              help="Lambda values of the sweep [default: {}]".format(', '.join(map(str, LAMBDA_GRID))))
@click.option('--sweep-epsilon', type=float, multiple=True,
              help="Epsilon values of the sweep [default: {}]".format(', '.join(map(str, EPSILON_GRID))))
@click.option('--sweep-quality', type=click.Choice(QUALITY_KINDS, case_sensitive=False), multiple=True,
              help="Quality losses of the sweep [default: CE, symKL]")
@click.option('--resume', is_flag=True, default=False,
              help="Continue from the checkpoint in the run directory")
@click.option('--out', type=click.Path(file_okay=False), required=True, help="Run directory")
@click.pass_context
def train(ctx, dataset, behavior, config_file, mask_cache, validation, eval_config_file,
          no_safety, no_diversity, sweep, sweep_lambda, sweep_epsilon, sweep_quality, resume, out, **overrides):
    """Train a safe and diverse policy collection"""

    threads = ctx.obj['threads']

    with usage_errors():
        config = TrainConfig.from_file(config_file,
                                       use_safety=False if no_safety else None,
                                       use_diversity=False if no_diversity else None,
                                       **overrides)
        eval_config = EvalConfig.from_file(eval_config_file)

        data = load_dataset(dataset)
        model = load_behavior(behavior)
        inputs = {
            'dataset': data,
            'behavior': training_table(model, data, mask_cache, threads),
            'eval_config': eval_config,
            'threads': threads,
            }

        if validation:
            valdata = load_dataset(validation)
            inputs['validation'] = (valdata, behavior_table(model, valdata, threads=threads))

    prepare_run_dir(out)
    input_files = [f for f in (dataset, behavior, config_file, mask_cache, validation, eval_config_file) if f]

    if not sweep:
        status = execute_run(run_name(config), out, config, inputs, resume=resume, input_files=input_files)

        if status != 'done':
            raise click.ClickException("training did not finish (status: {}), see the log".format(status))

        click.echo("Trained {} policies into '{}'".format(config.n_policies, out))
        return

    with usage_errors():
        configs = sweep_configs(config,
                                sweep_lambda or LAMBDA_GRID,
                                sweep_epsilon or EPSILON_GRID,
                                sweep_quality or ('CE', 'symKL'))

    results = run_sweep(out, configs, inputs, input_files=input_files)

    table_data = [['run', 'status']] + sorted([name, status] for name, status in results.items())
    click.echo(get_table_instance(table_data).table)

    if any(status != 'done' for status in results.values()):
        raise click.ClickException("not all runs finished")
