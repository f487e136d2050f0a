"""Command-line entry points.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 runtime stage
failure.
"""
from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from .config import load_config, write_default_config
from .errors import ConfigError, DataError, StageError
from . import pipeline


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def cli(verbose: bool):
    """RGBD human pose pipeline: synthesize, train, infer, evaluate, render."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@cli.group()
def config():
    """Configuration file management."""


@config.command("init")
@click.option("--path", default="config.yaml", show_default=True,
              type=click.Path(dir_okay=False))
def config_init(path: str):
    """Write the fully commented default configuration."""
    out = write_default_config(path)
    click.echo(f"wrote {out}")


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False),
              help="Target directory (defaults to paths.dataset).")
@click.option("--frames", default=None, type=int, help="Override synth.frame_count.")
@click.option("--seed", default=None, type=int, help="Override synth.seed.")
@click.option("--negatives", is_flag=True, help="Render person-free frames.")
def synth(config_path, out_dir, frames, seed, negatives):
    """Render a synthetic ground-truthed sequence."""
    cfg = load_config(config_path)
    if frames is not None:
        cfg.synth.frame_count = frames
    if seed is not None:
        cfg.synth.seed = seed
    if negatives:
        cfg.synth.negatives = True
    target = pipeline.run_synth(cfg, out_dir)
    click.echo(f"wrote sequence to {target}")


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path())
def train(config_path):
    """Train a parts model on the configured dataset."""
    cfg = load_config(config_path)
    model_path = pipeline.run_train(cfg, progress=click.echo)
    click.echo(f"wrote model to {model_path}")


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--no-kf", is_flag=True, help="Skip the tracking stage.")
@click.option("--no-ik", is_flag=True, help="Skip 3-D lifting and completion.")
@click.option("--strict", is_flag=True, help="Abort on the first frame failure.")
@click.option("--dump-score-maps", is_flag=True,
              help="Write per-part score grids next to the poses.")
@click.option("--dump-features", is_flag=True,
              help="Write per-frame feature grids next to the poses.")
@click.option("--diagnostics-csv", default=None, type=click.Path(dir_okay=False),
              help="Write per-frame tracker diagnostics.")
def infer(config_path, no_kf, no_ik, strict, dump_score_maps, dump_features,
          diagnostics_csv):
    """Run detection (and tracking/completion) over the configured sequence."""
    cfg = load_config(config_path)
    poses_path = pipeline.run_infer(
        cfg,
        use_tracker=False if no_kf else None,
        use_completion=False if no_ik else None,
        strict=strict,
        dump_score_maps=dump_score_maps,
        dump_features=dump_features,
        diagnostics_csv=diagnostics_csv,
    )
    click.echo(f"wrote poses to {poses_path}")


@cli.command("eval")
@click.argument("predictions", type=click.Path(exists=False))
@click.argument("annotations", type=click.Path(exists=False))
@click.option("--alpha", default=0.2, show_default=True,
              help="Correctness radius as a fraction of max(bbox h, w).")
@click.option("--detections", default=None, type=click.Path(),
              help="Scored candidate poses for average precision "
                   "(defaults to the predictions file).")
@click.option("--json-out", default=None, type=click.Path(dir_okay=False),
              help="Also write the report as JSON.")
def eval_cmd(predictions, annotations, alpha, detections, json_out):
    """Score predictions against annotations and print the report table."""
    report = pipeline.run_eval(predictions, annotations, alpha, detections)
    click.echo(report.format_table())
    if json_out:
        Path(json_out).write_text(report.to_json(), encoding="utf-8")
        click.echo(f"wrote {json_out}")


@cli.command()
@click.argument("dataset", type=click.Path(file_okay=False))
@click.argument("poses", type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", default="overlays", show_default=True,
              type=click.Path(file_okay=False))
def render(dataset, poses, out_dir):
    """Draw skeleton overlays for a sequence."""
    written = pipeline.run_render(dataset, poses, out_dir)
    click.echo(f"wrote {len(written)} overlays to {out_dir}")


def run_cli(argv=None) -> int:
    """Dispatch with the documented exit codes; returns instead of exiting."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as e:
        return int(e.exit_code)
    except click.UsageError as e:
        e.show()
        return 1
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        return 1
    except (DataError, FileNotFoundError, IOError) as e:
        click.echo(f"data error: {e}", err=True)
        return 2
    except StageError as e:
        click.echo(f"stage failure: {e}", err=True)
        return 3


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
