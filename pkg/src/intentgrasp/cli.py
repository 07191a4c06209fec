"""Command line: ``intentgrasp [--config FILE] [--set key=value ...] COMMAND``.

Exit codes: 0 success, 1 internal error, 2 unreadable/unwritable input or
output (including bad config and bad arguments), 3 a missing upstream
artifact.  Each command prints a JSON report on stdout; progress goes to
stderr.
"""
from __future__ import annotations

import json
import logging
import sys
from dataclasses import replace

import click
import yaml

from . import pipeline
from .config import ConfigError, load_config
from .demofile import DemoFormatError

EXIT_OK, EXIT_INTERNAL, EXIT_IO, EXIT_MISSING = 0, 1, 2, 3

log = logging.getLogger("intentgrasp")


def _parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise click.BadParameter(f"expected key=value, got {text!r}", param_hint="--set")
    key, value = text.split("=", 1)
    return key.strip(), yaml.safe_load(value)


def _report(data: dict):
    click.echo(json.dumps(data, indent=2, sort_keys=True, default=str))


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="YAML pipeline config; defaults apply to anything it leaves out.")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
              help="Override one config value, e.g. --set policy.episodes=2000 (repeatable).")
@click.option("--seed", type=int, default=None, help="Seed for every stage; also names the run.")
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
@click.pass_context
def main(ctx, config_path, overrides, seed, verbose):
    """Intent-guided grasp learning: demos, segmentation, estimator, policy, evaluation."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s",
                        stream=sys.stderr)
    pairs = dict(_parse_override(o) for o in overrides)
    if seed is not None:
        pairs["seed"] = seed
    if config_path is not None:
        pipeline.require(config_path)
    ctx.obj = load_config(config_path, pairs)


def _progress(row):
    log.info(json.dumps(row, default=str))


@main.command("gen-demos")
@click.option("--per-type", type=click.IntRange(min=1), default=None, help="Demos per encoded grasp type.")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.pass_obj
def gen_demos_cmd(cfg, per_type, out):
    """Augment and replay the encoded grasps; write a demo file and a per-type report."""
    if per_type is not None:
        cfg = replace(cfg, demos=replace(cfg.demos, per_type=per_type))
    _report(pipeline.gen_demos(cfg, out))


@main.command("segment")
@click.option("--input", "src", type=click.Path(dir_okay=False), default=None, help="Demo file to label.")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.pass_obj
def segment_cmd(cfg, src, out):
    """Recompute intent labels; trajectories shorter than n are skipped and counted."""
    _report(pipeline.segment_file(cfg, src, out))


@main.command("train-estimator")
@click.option("--demos", type=click.Path(dir_okay=False), default=None, help="Labelled demo file.")
@click.option("--perfect-only", is_flag=True, help="Drop demos whose replay failed.")
@click.pass_obj
def train_estimator_cmd(cfg, demos, perfect_only):
    """Fit the intention estimator; write a checkpoint and per-epoch metrics."""
    _report(pipeline.train_estimator_stage(cfg, demos, perfect_only, _progress))


@main.command("train-policy")
@click.option("--arm", type=click.Choice(["intent", "intent-perfect", "no-intent"]), default="intent")
@click.option("--estimator", type=click.Path(dir_okay=False), default=None, help="Estimator checkpoint.")
@click.pass_obj
def train_policy_cmd(cfg, arm, estimator):
    """PPO with (or without) the intrinsic intent reward; write the best checkpoint and learning curve."""
    report, _ = pipeline.train_policy_stage(cfg, arm, estimator, _progress)
    if report["warning"]:
        click.echo(f"warning: {report['warning']}", err=True)
    _report(report)


@main.command("bc")
@click.option("--demos", type=click.Path(dir_okay=False), default=None, help="Labelled demo file.")
@click.option("--perfect-only", is_flag=True, help="Drop demos whose replay failed.")
@click.pass_obj
def bc_cmd(cfg, demos, perfect_only):
    """Behaviour cloning of the demonstrated actions."""
    _report(pipeline.bc_stage(cfg, demos, perfect_only, _progress))


@main.command("eval")
@click.option("--policy", required=True, help="Policy checkpoint, or 'scripted' / 'random'.")
@click.option("--scene", "scenes", multiple=True, type=click.Choice(["card", "block", "cylinder", "clutter"]))
@click.option("--episodes", type=int, default=None)
@click.option("--shifted", is_flag=True, help="Place objects in the out-of-demo ranges.")
@click.pass_obj
def eval_cmd(cfg, policy, scenes, episodes, shifted):
    """Success rate per scene kind with a 95% confidence interval."""
    if episodes is not None and episodes < 1:
        raise click.BadParameter("must be at least 1", param_hint="--episodes")
    rows = pipeline.eval_stage(cfg, policy, scenes or None, episodes, shifted)
    _report({"results": rows})


@main.command("ablate")
@click.option("--seeds", default="0,1,2", help="Comma-separated training seeds.")
@click.option("--demos", type=click.Path(dir_okay=False), default=None, help="Labelled demo file.")
@click.pass_obj
def ablate_cmd(cfg, seeds, demos):
    """Train and score the five comparison arms for each seed; write per-seed rows and medians."""
    try:
        seed_list = [int(s) for s in seeds.split(",") if s.strip()]
    except ValueError:
        raise click.BadParameter(f"not a list of integers: {seeds!r}", param_hint="--seeds") from None
    if not seed_list:
        raise click.BadParameter("need at least one seed", param_hint="--seeds")
    res = pipeline.run_ablation(cfg, seed_list, demos, log=log.info)
    path = pipeline.metrics_path(cfg, "ablate")
    pipeline.write_csv(path, res.rows + res.summary(), pipeline.ABLATION_COLUMNS)
    _report({"metrics": str(path), "median": res.summary()})


def run(argv=None) -> int:
    """Entry point returning the exit code instead of raising."""
    try:
        main.main(args=argv, prog_name="intentgrasp", standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_INTERNAL
    except click.ClickException as e:
        e.show()
        return EXIT_IO
    except pipeline.MissingInput as e:
        click.echo(f"error: {e}", err=True)
        return EXIT_MISSING
    except (ConfigError, DemoFormatError, OSError) as e:
        click.echo(f"error: {e}", err=True)
        return EXIT_IO
    except Exception as e:  # noqa: BLE001 - last-resort handler maps to the internal-error code
        log.debug("internal error", exc_info=True)
        click.echo(f"internal error: {type(e).__name__}: {e}", err=True)
        return EXIT_INTERNAL
    return EXIT_OK


def entry():
    sys.exit(run())


if __name__ == "__main__":
    entry()
