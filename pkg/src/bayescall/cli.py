"""Command-line entry points: simulate, train, eval, mask-eval.

Every command is a pure function of (config, seeds): repeated runs emit
byte-identical artifacts.  Commands exit 0 on success and nonzero with a
one-line diagnostic otherwise.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from . import streams
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config, render_config
from .errors import BayescallError, ContractError
from .figures import save_comparison_figure, save_histogram_figure
from .metrics import EvalReport, evaluate, ood_report
from .network import (HEAD_DETERMINISTIC, HEAD_VARIATIONAL, Model, ModelSpec)
from .pileup import load_dataset, save_dataset, simulate_dataset, split, undersample
from .training import CSV_HEADER, train_model

__all__ = ["main"]


def _fail_cleanly(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except BayescallError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
    return wrapper


def _resolved(config_path: str | None, overrides: dict[str, str]) -> RunConfig:
    return load_config(config_path,
                       {k: v for k, v in overrides.items() if v is not None})


def _parse_mask_rows(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split("..", 1)
        return int(lo), int(hi)
    except ValueError:
        raise ContractError(
            f"mask rows must look like LO..HI (1-based, inclusive), got {text!r}"
        ) from None


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")


def _spec_from(cfg: RunConfig, dataset, head: str) -> ModelSpec:
    return ModelSpec(depth=dataset.depth, features=6 * dataset.width,
                     hidden1=cfg.hidden1, hidden2=cfg.hidden2,
                     dense_units=cfg.dense_units, head=head)


def _test_partition(cfg: RunConfig, dataset):
    _, test = split(dataset, cfg.train.split_fraction,
                    streams.derive(cfg.train.seed, streams.SPLIT))
    return test


def _emit_eval(outdir: Path, stem: str, report: EvalReport) -> None:
    _write_json(outdir / f"report_{stem}.json", report.to_json_dict())
    (outdir / f"histogram_{stem}.csv").write_text(report.histogram.to_csv(),
                                                  encoding="utf-8")
    save_histogram_figure(report.histogram, stem.replace("_", " "),
                          outdir / f"histogram_{stem}.png")


@click.group()
def main():
    """Bayesian BiLSTM somatic-variant calling toolchain."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="Key=value config file.")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Output dataset (.bvcd); falls back to paths.dataset.")
@click.option("--n", type=int, default=None, help="Number of examples.")
@click.option("--seed", type=int, default=None, help="Simulator seed.")
@click.option("--balance", is_flag=True,
              help="Undersample the majority class after simulation.")
@_fail_cleanly
def simulate(config_path, out_path, n, seed, balance):
    """Simulate a labeled tumor/normal dataset and write it as BVCD."""
    cfg = _resolved(config_path, {
        "sim.n": None if n is None else str(n),
        "sim.seed": None if seed is None else str(seed),
        "paths.dataset": out_path,
    })
    if not cfg.dataset_path:
        raise ContractError("no output path: pass --out or set paths.dataset")
    ds = simulate_dataset(cfg.sim, cfg.n_examples)
    neg, pos = ds.class_counts()
    click.echo(f"simulated {len(ds)} examples: {neg} negative, {pos} positive")
    if balance:
        ds = undersample(ds, streams.derive(cfg.sim.seed, streams.UNDERSAMPLE))
        neg, pos = ds.class_counts()
        click.echo(f"after undersampling: {neg} negative, {pos} positive")
    save_dataset(ds, cfg.dataset_path)
    click.echo(f"wrote {cfg.dataset_path}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="Key=value config file.")
@click.option("--data", "data_path", type=click.Path(), default=None,
              help="Input dataset (.bvcd); falls back to paths.dataset.")
@click.option("--head", type=click.Choice(["standard", "bayes"]),
              required=True, help="Model head to train.")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Output checkpoint (.bvc1); falls back to paths.checkpoint.")
@_fail_cleanly
def train(config_path, data_path, head, out_path):
    """Train one model on the train split and write a BVC1 checkpoint."""
    cfg = _resolved(config_path, {
        "paths.dataset": data_path,
        "paths.checkpoint": out_path,
    })
    if not cfg.dataset_path:
        raise ContractError("no dataset path: pass --data or set paths.dataset")
    if not cfg.checkpoint_path:
        raise ContractError("no output path: pass --out or set paths.checkpoint")
    dataset = load_dataset(cfg.dataset_path)
    train_ds, _ = split(dataset, cfg.train.split_fraction,
                        streams.derive(cfg.train.seed, streams.SPLIT))
    kind = HEAD_VARIATIONAL if head == "bayes" else HEAD_DETERMINISTIC
    spec = _spec_from(cfg, dataset, kind)
    model, history = train_model(train_ds, spec, cfg.train)
    save_checkpoint(model, cfg.checkpoint_path)
    log_path = Path(cfg.checkpoint_path).with_suffix(".train_log.csv")
    log_path.write_text(
        "\n".join([CSV_HEADER] + [h.csv_row() for h in history]) + "\n",
        encoding="utf-8")
    last = history[-1]
    click.echo(f"trained {head} head for {last.epoch} epochs on "
               f"{len(train_ds)} examples "
               f"(final total {last.total:.4f}, "
               f"train accuracy {last.train_accuracy:.3f})")
    click.echo(f"wrote {cfg.checkpoint_path} and {log_path}")


@main.command("eval")
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="Key=value config file.")
@click.option("--model", "model_path", type=click.Path(), default=None,
              help="Checkpoint (.bvc1); falls back to paths.checkpoint.")
@click.option("--data", "data_path", type=click.Path(), default=None,
              help="Dataset (.bvcd); falls back to paths.dataset.")
@click.option("--out", "outdir", type=click.Path(), default=None,
              help="Report directory; falls back to paths.report_dir.")
@_fail_cleanly
def cmd_eval(config_path, model_path, data_path, outdir):
    """Evaluate a checkpoint on the test split; write report and histogram."""
    cfg = _resolved(config_path, {
        "paths.checkpoint": model_path,
        "paths.dataset": data_path,
        "paths.report_dir": outdir,
    })
    _require_io_paths(cfg)
    model = load_checkpoint(cfg.checkpoint_path)
    test = _test_partition(cfg, load_dataset(cfg.dataset_path))
    n_mc = cfg.eval.n_mc if model.spec.is_variational else 1
    report = evaluate(model, test, n_mc, cfg.eval.tau,
                      streams.derive(cfg.train.seed, streams.EVAL_DRAWS))
    out = Path(cfg.report_dir)
    out.mkdir(parents=True, exist_ok=True)
    _emit_eval(out, "test", report)
    (out / "config.txt").write_text(render_config(cfg), encoding="utf-8")
    click.echo(f"test accuracy {report.accuracy:.4f}, "
               f"mean entropy {report.mean_entropy:.4f} nats, "
               f"uncertain fraction {report.uncertain_fraction:.4f}")
    click.echo(f"wrote reports to {out}")


@main.command("mask-eval")
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="Key=value config file.")
@click.option("--model", "model_path", type=click.Path(), default=None,
              help="Bayesian checkpoint (.bvc1); falls back to paths.checkpoint.")
@click.option("--data", "data_path", type=click.Path(), default=None,
              help="Dataset (.bvcd); falls back to paths.dataset.")
@click.option("--mask-rows", "mask_rows", type=str, default=None,
              help="Row range LO..HI to black out (defaults to eval.mask_*).")
@click.option("--out", "outdir", type=click.Path(), default=None,
              help="Report directory; falls back to paths.report_dir.")
@_fail_cleanly
def cmd_mask_eval(config_path, model_path, data_path, mask_rows, outdir):
    """Compare test-set confidence on unmasked vs. masked inputs."""
    overrides = {
        "paths.checkpoint": model_path,
        "paths.dataset": data_path,
        "paths.report_dir": outdir,
    }
    if mask_rows is not None:
        lo, hi = _parse_mask_rows(mask_rows)
        overrides["eval.mask_lo"] = str(lo)
        overrides["eval.mask_hi"] = str(hi)
    cfg = _resolved(config_path, overrides)
    _require_io_paths(cfg)
    model = load_checkpoint(cfg.checkpoint_path)
    if not model.spec.is_variational:
        raise ContractError(
            "mask-eval requires a Bayesian (variational-flipout) checkpoint")
    test = _test_partition(cfg, load_dataset(cfg.dataset_path))
    rows = (cfg.eval.mask_lo, cfg.eval.mask_hi)
    # Identical draw streams for both passes: the comparison is paired.
    report_in = evaluate(model, test, cfg.eval.n_mc, cfg.eval.tau,
                         streams.derive(cfg.train.seed, streams.EVAL_DRAWS))
    report_masked = evaluate(model, test, cfg.eval.n_mc, cfg.eval.tau,
                             streams.derive(cfg.train.seed, streams.EVAL_DRAWS),
                             mask_rows=rows)
    summary = ood_report(report_in, report_masked)

    out = Path(cfg.report_dir)
    out.mkdir(parents=True, exist_ok=True)
    _emit_eval(out, "indist", report_in)
    _emit_eval(out, "masked", report_masked)
    payload = summary.to_json_dict()
    payload["mask_rows"] = f"{rows[0]}..{rows[1]}"
    _write_json(out / "ood_summary.json", payload)
    save_comparison_figure(report_in.histogram, report_masked.histogram,
                           out / "histograms.png")
    (out / "config.txt").write_text(render_config(cfg), encoding="utf-8")
    click.echo(f"masked rows {rows[0]}..{rows[1]}: "
               f"mean entropy {report_in.mean_entropy:.4f} -> "
               f"{report_masked.mean_entropy:.4f} nats, "
               f"mid-bin mass {summary.mid_bin_mass_in:.4f} -> "
               f"{summary.mid_bin_mass_masked:.4f}")
    click.echo(f"wrote reports to {out}")


def _require_io_paths(cfg: RunConfig) -> None:
    if not cfg.checkpoint_path:
        raise ContractError("no checkpoint path: pass --model or set paths.checkpoint")
    if not cfg.dataset_path:
        raise ContractError("no dataset path: pass --data or set paths.dataset")
    if not cfg.report_dir:
        raise ContractError("no report directory: pass --out or set paths.report_dir")


if __name__ == "__main__":
    main()
