import logging
import sys

import click

from ftgmap import pipeline
from ftgmap.config import ConfigError, load_config


def _configure_logging(verbose, quiet):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _run(action, *args, **kwargs):
    """Run an action, turning stage and config errors into a one-line message."""
    try:
        return action(*args, **kwargs)
    except (pipeline.PipelineStageError, ConfigError) as e:
        click.echo(f"Error: {e}", err=True)
        sys.exit(1)


def _experiment(options):
    _configure_logging(options["verbose"], options["quiet"])
    config = _run(load_config, options["config"])
    return _run(
        config.with_overrides,
        seed=options["seed"],
        out=options["out"],
        steps=options["steps"],
        alpha=options["alpha"],
        cells=options["cells"],
    )


def common_options(function):
    options = [
        click.option(
            "-c",
            "--config",
            required=True,
            type=str,
            help="Bundled config name (e.g. deconv_1pct_alpha095) or path to a config JSON",
        ),
        click.option(
            "-s",
            "--seed",
            default=None,
            type=int,
            help="Run seed, all stage seeds are derived from it",
        ),
        click.option(
            "-o",
            "--out",
            default=None,
            type=click.Path(file_okay=False),
            help="Artifact directory [default: config output]",
        ),
        click.option("-n", "--steps", default=None, type=int, help="Sampler chain length"),
        click.option("-a", "--alpha", default=None, type=float, help="Fractional order in (0, 2]"),
        click.option("--cells", default=None, type=int, help="Grid cells per axis"),
        click.option("-v", "--verbose", default=False, is_flag=True, help="Debug logging"),
        click.option("-q", "--quiet", default=False, is_flag=True, help="Warnings only"),
    ]
    for option in reversed(options):
        function = option(function)
    return function


@click.group()
@click.help_option("--help", "-h")
def cli():
    # create group for all the commands. -h will show all available commands
    pass


@cli.command()
@click.help_option("--help", "-h")
@common_options
def gen_data(**options):
    """Generate the truth and the noisy data"""
    config = _experiment(options)
    observation, sigma = _run(pipeline.gen_data, config)
    click.echo(f"{observation.size} observations, sigma={sigma:.6g}")


@cli.command()
@click.help_option("--help", "-h")
@common_options
def build_map(**options):
    """Build the transport map from generated data"""
    config = _experiment(options)
    result = _run(pipeline.build_map_stage, config)
    click.echo(f"lambda={result.lam:.6g}, final objective {result.objective_trace[-1]:.10g}")


@cli.command()
@click.help_option("--help", "-h")
@common_options
@click.option(
    "-m",
    "--map",
    "map_path",
    default=None,
    type=click.Path(exists=True, dir_okay=False),
    help="Map JSON [default: map.json in the artifact directory]",
)
@click.option(
    "--progress/--no-progress",
    default=None,
    help="Show a progress bar [default: when stderr is a terminal]",
)
def sample(map_path, progress, **options):
    """Run the configured sampler"""
    config = _experiment(options)
    if progress is None:
        progress = sys.stderr.isatty()
    chain = _run(pipeline.sample_stage, config, map_path=map_path, progress=progress)
    click.echo(f"{chain.length} states, acceptance rate {chain.acceptance_rate:.4f}")


@cli.command()
@click.help_option("--help", "-h")
@common_options
def diagnose(**options):
    """Compute error metrics and MCMC diagnostics"""
    config = _experiment(options)
    report = _run(pipeline.diagnose_stage, config)
    click.echo(f"rel_err={report['rel_err']:.4f}")


@cli.command()
@click.help_option("--help", "-h")
@common_options
@click.option(
    "--progress/--no-progress",
    default=None,
    help="Show a progress bar [default: when stderr is a terminal]",
)
def run(progress, **options):
    """Run the full pipeline"""
    config = _experiment(options)
    if progress is None:
        progress = sys.stderr.isatty()
    directory = _run(pipeline.run_pipeline, config, progress=progress)
    click.echo(f"artifacts in {directory}")


@cli.command()
@click.help_option("--help", "-h")
@common_options
def fbp(**options):
    """Filtered back-projection baseline of a CT config"""
    config = _experiment(options)
    metrics = _run(pipeline.run_fbp, config)
    click.echo(f"FBP rel_err={metrics['rel_err']:.4f}, ssim={metrics['ssim']:.4f}")


@cli.command()
@click.help_option("--help", "-h")
@common_options
@click.option(
    "--sweep-alpha",
    "alphas",
    multiple=True,
    type=float,
    help="Fractional order of one sweep run, repeatable",
)
@click.option(
    "--noise",
    "noises",
    multiple=True,
    type=float,
    help="Noise percent of one sweep run, repeatable",
)
@click.option(
    "--hyper",
    "hypers",
    multiple=True,
    type=(float, float),
    help="k and vartheta of one sweep run, repeatable",
)
def sweep(alphas, noises, hypers, **options):
    """Rerun the pipeline over fractional orders, noise levels or (k, vartheta)"""
    config = _experiment(options)
    rows = _run(pipeline.run_sweep, config, alphas=alphas, noises=noises, hypers=hypers)
    for row in rows:
        click.echo(f"{row['label']}: rel_err={row['rel_err']:.4f}, lambda={row['lambda']:.6g}")
