"""Command-line front-end: `pslab <command> --config run.cfg`."""
import logging
import sys
from pathlib import Path
from typing import Optional

import click
from pydantic import ValidationError

from core.config import settings
from core.errors import ConfigError, PsLabError, UndecidedError
from core.groups import catalog
from core.models import MeasureValue
from lab import pipeline
from lab.gauge import gauge_presets
from lab.parse import RunConfig, load_config, parse_config

logger = logging.getLogger("pslab")


def _configure_logging() -> None:
    logging.basicConfig(
        level=getattr(logging, settings.log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _load(config: Optional[Path], seed, out, threads, t_max, samples) -> RunConfig:
    cfg = load_config(config) if config is not None else parse_config("")
    overrides = {"seed": seed, "out": out, "threads": threads, "t_max": t_max, "samples": samples}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if not overrides:
        return cfg
    try:
        return RunConfig.model_validate(dict(cfg) | overrides)
    except ValidationError as e:
        err = e.errors()[0]
        raise ConfigError(f"--{str(err['loc'][0]).replace('_', '-')}: {err['msg']}") from e


def _echo(event) -> None:
    logger.info("[%s] %s", event["step"], event["message"])


def _run(step, cfg: RunConfig, **kwargs):
    result = step(cfg, writer=_echo, **kwargs)
    for path in result.paths:
        click.echo(str(path))
    return result


def common_options(fn):
    options = [
        click.option("--config", "config", type=click.Path(path_type=Path), default=None,
                     help="Run configuration file."),
        click.option("--seed", type=int, default=None, help="Seed overriding the config."),
        click.option("--out", type=click.Path(path_type=Path), default=None, help="Output directory."),
        click.option("--threads", type=int, default=None, help="Worker threads."),
        click.option("--t-max", "t_max", type=float, default=None, help="Truncation radius T."),
        click.option("--samples", type=int, default=None, help="Number of sampled points."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


class LabGroup(click.Group):
    """Maps lab errors to their exit codes."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except PsLabError as e:
            logger.error("%s", e)
            click.echo(f"error: {e}", err=True)
            ctx.exit(e.exit_code)


@click.group(cls=LabGroup)
def cli():
    """Patterson-Sullivan measures, gauge series and cusp excursions."""
    _configure_logging()


@cli.command()
@common_options
def orbit(config, seed, out, threads, t_max, samples):
    """Orbit points of 0 within the truncation radius."""
    _run(pipeline.run_orbit, _load(config, seed, out, threads, t_max, samples))


@cli.command()
@common_options
def delta(config, seed, out, threads, t_max, samples):
    """Poincaré exponent estimate from orbit growth."""
    _run(pipeline.run_delta, _load(config, seed, out, threads, t_max, samples))


@cli.command()
@common_options
def limitset(config, seed, out, threads, t_max, samples):
    """Sample points of the limit set."""
    _run(pipeline.run_limitset, _load(config, seed, out, threads, t_max, samples))


@cli.command("gauge-classify")
@common_options
def gauge_classify(config, seed, out, threads, t_max, samples):
    """Hausdorff and packing verdicts for the configured gauge."""
    result = _run(pipeline.run_gauge_classify, _load(config, seed, out, threads, t_max, samples))
    values = (result.summary["hausdorff"], result.summary["packing"])
    click.echo(f"hausdorff: {values[0]}")
    click.echo(f"packing: {values[1]}")
    if MeasureValue.UNDECIDED.value in values:
        raise UndecidedError("series verdict undecided; see the decision trace in verdict.json")


@cli.command("gmf-check")
@common_options
def gmf_check(config, seed, out, threads, t_max, samples):
    """Residuals of ball masses against the Global Measure Formula."""
    result = _run(pipeline.run_gmf_check, _load(config, seed, out, threads, t_max, samples))
    click.echo(f"band: {result.summary['band']:.6g}")


@cli.command()
@common_options
def khinchin(config, seed, out, threads, t_max, samples):
    """Shrinking-target hits around cusp images."""
    result = _run(pipeline.run_khinchin, _load(config, seed, out, threads, t_max, samples))
    click.echo(f"hits: {result.summary['hits']}")


@cli.command()
@common_options
def dichotomy(config, seed, out, threads, t_max, samples):
    """Synthetic excursion verdicts against the predicted dichotomy."""
    result = _run(pipeline.run_dichotomy, _load(config, seed, out, threads, t_max, samples),
                  progress=settings.log_level.upper() in ("DEBUG", "INFO"))
    click.echo(f"min agreement: {result.summary['min_agreement']:.3f}")
    if result.summary["undecided"]:
        raise UndecidedError("a predicted verdict is undecided")


@cli.command("catalog")
@click.option("--delta", type=float, default=1.5, show_default=True)
@click.option("--kmin", type=int, default=1, show_default=True)
@click.option("--kmax", type=int, default=2, show_default=True)
def list_catalog(delta, kmin, kmax):
    """Shipped test groups and gauge presets."""
    click.echo("groups:")
    for name, spec in catalog().items():
        cusps = ", ".join(f"rank {c.rank}" for c in spec.parabolic_reps)
        click.echo(f"  {name}  (d={spec.dimension}, {len(spec.generators)} generators; cusps: {cusps})")
    click.echo(f"gauges (delta={delta:g}, kmin={kmin}, kmax={kmax}):")
    for name, g in gauge_presets(delta, kmin, kmax).items():
        click.echo(f"  {name}  c_log={g.c_log:g} c_loglog={g.c_loglog:g} c_logloglog={g.c_logloglog:g}")


if __name__ == "__main__":
    cli()
