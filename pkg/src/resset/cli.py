"""``resset`` command line: gen, crossval, train, eval, predict, export-embeddings.

Results go to stdout as JSON. Any failure prints one JSON line
``{"error": ..., "message": ...}`` to stderr and exits nonzero.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import sys
from pathlib import Path

import click

from .codespace import export_embeddings
from .cohortsim import SimConfig, generate, order_sensitivity_probe, write_cohort
from .config import MODELS, TASKS, TrainConfig, load_config
from .crossval import evaluate, fit, run_crossval
from .data import Dataset, read_patients
from .inference import predict
from .trainer import load_model, save_model


def _emit(obj) -> None:
    click.echo(json.dumps(obj, indent=2, sort_keys=True))


data_opt = click.option("--data", required=True, type=click.Path(exists=True),
                        help="Cohort directory or .jsonl file with vocab files beside it.")
task_opt = click.option("--task", type=click.Choice(TASKS), default=None, help="Overrides the config task.")
model_opt = click.option("--model", type=click.Choice(MODELS), default=None, help="Overrides the config model.")
config_opt = click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None,
                          help="key=value config file.")
seed_opt = click.option("--seed", type=int, default=None, help="Overrides the config seed.")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose: bool) -> None:
    """Sequence-of-sets models for visit histories."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@config_opt
@seed_opt
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory.")
def gen(config, seed, out):
    """Generate a synthetic cohort and report its order-sensitivity gap."""
    cfg = load_config(config, SimConfig, seed=seed)
    ds, sims = generate(cfg)
    written = write_cohort(ds, sims, out, cfg)
    probe = order_sensitivity_probe(ds, seed=cfg.seed)
    _emit({"dataset": written["dataset"], "stats": {k: v for k, v in written["stats"].items() if k != "config"},
           "probe": probe})


@cli.command()
@data_opt
@task_opt
@model_opt
@config_opt
@seed_opt
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Directory for report.json and per-fold model files.")
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True, help="Folds run in parallel.")
def crossval(data, task, model, config, seed, out, jobs):
    """k-fold cross-validation; prints the report JSON."""
    cfg = load_config(config, TrainConfig, task=task, model=model, seed=seed)
    report = run_crossval(Dataset.load(data), cfg, out_dir=out, jobs=jobs)
    click.echo(report.dumps(), nl=False)


@cli.command()
@data_opt
@task_opt
@model_opt
@config_opt
@seed_opt
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Model file to write.")
def train(data, task, model, config, seed, out):
    """Train on a whole cohort and write a model file."""
    cfg = load_config(config, TrainConfig, task=task, model=model, seed=seed)
    ds = Dataset.load(data)
    save_model(out, fit(ds, cfg), cfg, ds.space)
    _emit({"model": str(out), "config": dataclasses.asdict(cfg)})


@cli.command("eval")
@click.argument("model_file", type=click.Path(exists=True, dir_okay=False))
@data_opt
def eval_cmd(model_file, data):
    """Task metrics of a saved model on a labelled cohort."""
    ds = Dataset.load(data)
    m = load_model(model_file, space=ds.space)
    result = {"task": m.cfg.task, "model": m.cfg.model}
    result.update(evaluate(m.params, m.cfg, ds))
    _emit(result)


@cli.command("predict")
@click.argument("model_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False), help="Patient JSONL file.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write predictions here too.")
def predict_cmd(model_file, data, out):
    """Per-visit readmission risk, or top-k codes, for each patient."""
    m = load_model(model_file)
    result = predict(m, read_patients(data))
    if out:
        Path(out).write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit(result)


@cli.command("export-embeddings")
@click.argument("model_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="CSV file to write.")
def export_cmd(model_file, out):
    """Write the code embedding table as CSV (code, kind, v0, v1, ...)."""
    m = load_model(model_file)
    if "embed" not in m.params:
        raise ValueError(f"{m.cfg.model} models have no embedding table")
    export_embeddings(m.params["embed"], m.space, out)
    _emit({"embeddings": str(out), "rows": m.space.size})


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    try:
        rv = cli.main(args=argv, prog_name="resset", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        return _fail("usage", exc.format_message(), exc.exit_code)
    except click.Abort:
        return _fail("aborted", "aborted", 1)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one JSON line
        return _fail(type(exc).__name__, str(exc), 1)
    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":
    sys.exit(main())
