"""Command-line front end: run, sweep, fidcurve, backbones, unpaired, metrics."""

from __future__ import annotations

import sys

import click

from . import experiments
from .config import ConfigError, load_config
from .synthesis import NonFiniteLossError


def _overrides(out, seed, jobs, snapshot_iters):
    overrides = {}
    if out is not None:
        overrides["out"] = out
    if seed is not None:
        overrides["seed"] = seed
    if jobs is not None:
        overrides["jobs"] = jobs
    if snapshot_iters is not None:
        overrides["snapshot_iters"] = tuple(
            int(v) for v in snapshot_iters.split(",") if v.strip())
    return overrides


def _load(config_path, out, seed, jobs, snapshot_iters):
    return load_config(config_path, _overrides(out, seed, jobs, snapshot_iters))


def common_options(fn):
    fn = click.option("--config", "config_path", required=True,
                      type=click.Path(exists=True, dir_okay=False),
                      help="flat key = value config file")(fn)
    fn = click.option("--out", default=None, help="output directory override")(fn)
    fn = click.option("--seed", default=None, type=int, help="master seed override")(fn)
    fn = click.option("--jobs", default=None, type=int,
                      help="parallel worker processes for sweep/fidcurve")(fn)
    fn = click.option("--snapshot-iters", default=None,
                      help="comma-separated snapshot iterations override")(fn)
    return fn


def _fail(message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


@click.group()
def main():
    """Dual-domain image synthesis experiments."""


@main.command()
@common_options
def run(config_path, out, seed, jobs, snapshot_iters):
    """One synthesis run; writes PNGs, loss.csv and summary.json."""
    try:
        config = _load(config_path, out, seed, jobs, snapshot_iters)
        summary = experiments.cmd_run(config)
    except ConfigError as err:
        _fail(str(err))
    except NonFiniteLossError as err:
        _fail(str(err))
    click.echo(f"run complete: {config.out} "
               f"(total loss {summary['final_losses']['total']:.6g})"
               if summary["final_losses"] else f"run complete: {config.out}")


@main.command()
@common_options
def sweep(config_path, out, seed, jobs, snapshot_iters):
    """One run per (alpha, beta, gamma) grid cell; writes sweep.csv."""
    try:
        config = _load(config_path, out, seed, jobs, snapshot_iters)
        rows = experiments.cmd_sweep(config)
    except ConfigError as err:
        _fail(str(err))
    except NonFiniteLossError as err:
        _fail(str(err))
    click.echo(f"sweep complete: {len(rows)} cells -> {config.out}/sweep.csv")


@main.command()
@common_options
def fidcurve(config_path, out, seed, jobs, snapshot_iters):
    """Feature-distance trajectory over a batch of runs; writes fidcurve.csv."""
    try:
        config = _load(config_path, out, seed, jobs, snapshot_iters)
        rows = experiments.cmd_fidcurve(config)
    except ConfigError as err:
        _fail(str(err))
    except NonFiniteLossError as err:
        _fail(str(err))
    click.echo(f"fidcurve complete: {len(rows)} probes -> {config.out}/fidcurve.csv")


@main.command()
@common_options
def backbones(config_path, out, seed, jobs, snapshot_iters):
    """Same instance under every feature extractor; writes backbones.csv."""
    try:
        config = _load(config_path, out, seed, jobs, snapshot_iters)
        rows = experiments.cmd_backbones(config)
    except ConfigError as err:
        _fail(str(err))
    except NonFiniteLossError as err:
        _fail(str(err))
    click.echo(f"backbones complete: {len(rows)} variants -> {config.out}/backbones.csv")


@main.command()
@common_options
def unpaired(config_path, out, seed, jobs, snapshot_iters):
    """Run with different source/target latents; reports mask IoU."""
    try:
        config = _load(config_path, out, seed, jobs, snapshot_iters)
        summary = experiments.cmd_unpaired(config)
    except ConfigError as err:
        _fail(str(err))
    except NonFiniteLossError as err:
        _fail(str(err))
    iou = summary["diagnostics"]["mask_iou_source_target"]
    click.echo(f"unpaired complete: mask IoU {iou:.4f} -> {config.out}")


@main.command()
@click.argument("dir_a", type=click.Path(exists=True, file_okay=False))
@click.argument("dir_b", type=click.Path(exists=True, file_okay=False))
@common_options
def metrics(dir_a, dir_b, config_path, out, seed, jobs, snapshot_iters):
    """FID/SSIM/PSNR between two directories of PNGs; writes metrics.json."""
    try:
        config = _load(config_path, out, seed, jobs, snapshot_iters)
        result = experiments.cmd_metrics(config, dir_a, dir_b)
    except ConfigError as err:
        _fail(str(err))
    click.echo(f"metrics complete: fid {result['fid']:.6g}, "
               f"mean ssim {result['mean_ssim']:.6g} -> {config.out}/metrics.json")


if __name__ == "__main__":
    main()
