"""Command line driver: one subcommand per pipeline stage plus run-all.

Exit codes: 0 success, 1 stage error, 2 configuration error.
"""

from __future__ import annotations

import logging
import sys

import click

from .config import ConfigError, PipelineConfig, load_config
from . import pipeline
from .io import FormatError


def _load_cfg(config, seed) -> PipelineConfig:
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    return load_config(config, overrides)


def _run(stage_fn, *args, **kwargs):
    try:
        metrics = stage_fn(*args, **kwargs)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    except (pipeline.PipelineError, FormatError, ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    for key, value in metrics.items():
        click.echo(f"{key} = {value}")


config_option = click.option(
    "--config", type=click.Path(exists=True, dir_okay=False), default=None,
    help="pipeline config file (key = value); flags override it",
)
seed_option = click.option("--seed", type=int, default=None, help="deterministic seed")
out_option = click.option(
    "--out", type=click.Path(file_okay=False), required=True, help="output directory"
)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="debug logging")
def main(verbose):
    """Extract geo-referenced 3D traffic trajectories from aerial recordings
    and mine statistics and safety-critical scenarios from them."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.option("--scenario", type=click.Path(exists=True, dir_okay=False), required=True,
              help="scenario description file")
@config_option
@seed_option
@out_option
def synth(scenario, config, seed, out):
    """Generate a synthetic scene: inputs for every stage plus ground truth."""
    try:
        cfg = _load_cfg(config, seed)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    _run(pipeline.run_synth_stage, scenario, out, cfg)


@main.command()
@click.option("--problem", type=click.Path(exists=True, dir_okay=False), required=True,
              help="bundle adjustment problem file")
@click.option("--lam", "ba_lambda", type=float, default=None, help="GPS weight override")
@config_option
@seed_option
@out_option
def ba(problem, ba_lambda, config, seed, out):
    """Geo-referenced bundle adjustment of the mapping pass."""
    try:
        cfg = _load_cfg(config, seed)
        if ba_lambda is not None:
            cfg.ba_lambda = ba_lambda
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    _run(pipeline.run_ba_stage, problem, out, cfg)


@main.command()
@click.option("--correspondences", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--camera", type=click.Path(exists=True, dir_okay=False), required=True,
              help="camera intrinsics summary file")
@config_option
@seed_option
@out_option
def calibrate(correspondences, camera, config, seed, out):
    """Localize every recording frame (robust PnP) and smooth the pose track."""
    try:
        cfg = _load_cfg(config, seed)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    _run(pipeline.run_calibrate_stage, correspondences, camera, out, cfg)


@main.command()
@click.option("--mesh", type=click.Path(exists=True, dir_okay=False), required=True)
@config_option
@seed_option
@out_option
def ground(mesh, config, seed, out):
    """Sample, filter and fit the smooth road surface from the scene mesh."""
    try:
        cfg = _load_cfg(config, seed)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    _run(pipeline.run_ground_stage, mesh, out, cfg)


@main.command()
@click.option("--detections", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--poses", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--ground", "ground_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="ground surface file or mesh .obj")
@config_option
@seed_option
@out_option
def refine(detections, poses, ground_path, config, seed, out):
    """Snap detections to the ground and transform them to world frame."""
    try:
        cfg = _load_cfg(config, seed)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    _run(pipeline.run_refine_stage, detections, poses, ground_path, out, cfg)


@main.command()
@click.option("--refined", type=click.Path(exists=True, dir_okay=False), required=True)
@config_option
@seed_option
@out_option
def track(refined, config, seed, out):
    """Associate refined detections into smoothed identity-consistent tracks."""
    try:
        cfg = _load_cfg(config, seed)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    _run(pipeline.run_track_stage, refined, out, cfg)


@main.command()
@click.option("--trajectories", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--figures/--no-figures", default=None, help="render stats figures")
@config_option
@seed_option
@out_option
def stats(trajectories, figures, config, seed, out):
    """Per-class trajectory statistics (plus figures)."""
    try:
        cfg = _load_cfg(config, seed)
        if figures is not None:
            cfg.figures = figures
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    _run(pipeline.run_stats_stage, trajectories, out, cfg)


@main.command()
@click.option("--trajectories", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--parking-region", type=click.Path(exists=True, dir_okay=False), default=None,
              help="polygon file bounding the parking area")
@click.option("--zones", type=click.Path(exists=True, dir_okay=False), default=None,
              help="conflict-zone polygon file (default: auto from path crossings)")
@click.option("--figures/--no-figures", default=None)
@config_option
@seed_option
@out_option
def mine(trajectories, parking_region, zones, figures, config, seed, out):
    """Mine TTC / PET / parking scenarios from trajectories."""
    try:
        cfg = _load_cfg(config, seed)
        if figures is not None:
            cfg.figures = figures
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    _run(pipeline.run_mine_stage, trajectories, out, cfg,
         parking_region_path=parking_region, zones_path=zones)


@main.command()
@click.option("--dir", "directory", type=click.Path(exists=True, file_okay=False), required=True)
@config_option
@seed_option
@out_option
def validate(directory, config, seed, out):
    """Plausibility and schema checks over a directory of trajectory files."""
    try:
        cfg = _load_cfg(config, seed)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    _run(pipeline.run_validate_stage, directory, out, cfg)


@main.command(name="run-all")
@click.option("--in", "in_dir", type=click.Path(exists=True, file_okay=False), required=True,
              help="scene input directory (e.g. a synth output)")
@config_option
@seed_option
@out_option
def run_all(in_dir, config, seed, out):
    """Full pipeline: ba, calibrate, ground, refine, track, stats, mine."""
    try:
        cfg = _load_cfg(config, seed)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    try:
        metrics = pipeline.run_all(in_dir, out, cfg)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    except (pipeline.PipelineError, FormatError, ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    for stage, stage_metrics in metrics.items():
        for key, value in stage_metrics.items():
            click.echo(f"{stage}.{key} = {value}")


if __name__ == "__main__":
    main()
