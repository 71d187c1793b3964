"""Command-line front end: run, eval, sweep-gamma, synth, oracle-eval, pq-diff, serve."""
import functools
import json
import logging
from pathlib import Path
from typing import List, Optional

import click
import pandas as pd
import yaml
from pydantic import ValidationError

from openvocab_panoptic import runner
from openvocab_panoptic.config import (
    PanopticFiles,
    RunManifest,
    SynthFile,
    apply_overrides,
    load_manifest,
    load_yaml,
)
from openvocab_panoptic.errors import OvrError
from openvocab_panoptic.log import configure_logging
from openvocab_panoptic.match_metrics import PqReport, pq_difference


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    raise SystemExit(1)


def reports_errors(fn):
    """Turn library failures into `error: ...` on stderr and exit code 1."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except FileNotFoundError as e:
            _fail(f"file not found: {e.filename or e}")
        except (OvrError, ValidationError, yaml.YAMLError, json.JSONDecodeError) as e:
            _fail(str(e))
        except OSError as e:
            _fail(f"{e.strerror or e}: {e.filename}" if e.filename else str(e))
    return wrapper


def config_options(coat: bool = True, ensemble_weights: bool = True):
    """Per-run override flags; subcommands that pin a setting leave its flags off."""
    options = []
    if coat:
        options += [
            click.option("--gamma", type=float, default=None, help="CLIP trust factor."),
            click.option("--disable-coat", is_flag=True, help="Skip the objectness adjustment."),
        ]
    if ensemble_weights:
        options += [
            click.option("--alpha-seen", type=float, default=None, help="CLIP exponent for seen categories."),
            click.option("--beta-unseen", type=float, default=None, help="CLIP exponent for unseen categories."),
        ]
    options += [
        click.option("--logit-scale", type=float, default=None, help="Temperature of the CLIP dot products."),
        click.option("--score-threshold", type=float, default=None, help="Fusion keep threshold."),
        click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True, help="Worker threads."),
    ]

    def decorate(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn
    return decorate


def _configured(manifest_path: Path, gamma=None, disable_coat=False, alpha_seen=None, beta_unseen=None,
                logit_scale=None, score_threshold=None) -> RunManifest:
    manifest = load_manifest(manifest_path)
    return apply_overrides(manifest, {
        "coat": {"gamma": gamma, "enabled": False if disable_coat else None},
        "ensemble": {"alpha_seen": alpha_seen, "beta_unseen": beta_unseen, "logit_scale": logit_scale},
        "fusion": {"score_threshold": score_threshold},
    })


def _echo_json(model) -> None:
    click.echo(model.model_dump_json(indent=2))


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log at DEBUG level to stderr.")
def main(verbose: bool) -> None:
    """Open-vocabulary panoptic inference and evaluation."""
    configure_logging(logging.DEBUG if verbose else logging.WARNING)


@main.command()
@click.argument("manifest", type=click.Path(path_type=Path))
@config_options()
@click.option("--output-dir", type=click.Path(path_type=Path), required=True)
@reports_errors
def run(manifest: Path, jobs: int, output_dir: Path, **overrides) -> None:
    """Run inference over every image of MANIFEST and write panoptic outputs."""
    result = runner.run_manifest(_configured(manifest, **overrides), jobs)
    runner.write_predictions(result, output_dir)
    if result.report is not None:
        _echo_json(result.report)


@main.command("eval")
@click.option("--pred", nargs=2, type=click.Path(path_type=Path), required=True, help="RASTER SIDECAR")
@click.option("--gt", nargs=2, type=click.Path(path_type=Path), required=True, help="RASTER SIDECAR")
@click.option("--vocab", "vocab_meta", type=click.Path(path_type=Path), default=None, help="Vocabulary metadata.")
@click.option("--semantic", type=click.Path(path_type=Path), default=None, help="Predicted semantic OVRT map.")
@reports_errors
def eval_cmd(pred, gt, vocab_meta: Optional[Path], semantic: Optional[Path]) -> None:
    """Evaluate a predicted panoptic pair against a ground-truth pair."""
    report = runner.evaluate_files(
        PanopticFiles(raster=pred[0], sidecar=pred[1]),
        PanopticFiles(raster=gt[0], sidecar=gt[1]),
        semantic=semantic,
        vocabulary=vocab_meta,
    )
    _echo_json(report)


def _parse_gammas(ctx, param, value: Optional[str]) -> List[float]:
    if value is None:
        return list(runner.DEFAULT_GAMMAS)
    try:
        return [float(g) for g in value.split(",") if g.strip()]
    except ValueError:
        raise click.BadParameter(f"not a comma-separated list of numbers: {value}")


@main.command("sweep-gamma")
@click.argument("manifest", type=click.Path(path_type=Path))
@click.option("--gammas", callback=_parse_gammas, default=None, help="Comma-separated trust factors.")
@config_options(coat=False)
@reports_errors
def sweep_gamma(manifest: Path, gammas: List[float], jobs: int, **overrides) -> None:
    """Print PQ/SQ/RQ for each trust factor as comma-separated rows."""
    table = runner.sweep_gamma(_configured(manifest, **overrides), gammas, jobs)
    click.echo(runner.sweep_to_csv(table), nl=False)


@main.command()
@click.argument("spec_file", type=click.Path(path_type=Path), required=False)
@click.option("--seed", type=int, default=None, help="Overrides the seed of SPEC_FILE.")
@click.option("--output-dir", type=click.Path(path_type=Path), required=True)
@reports_errors
def synth(spec_file: Optional[Path], seed: Optional[int], output_dir: Path) -> None:
    """Write a synthetic fixture and print the path of its manifest."""
    data = load_yaml(spec_file) if spec_file is not None else {}
    if seed is not None:
        data["seed"] = seed
    click.echo(str(runner.synthesize_fixture(SynthFile.model_validate(data), output_dir)))


@main.command("oracle-eval")
@click.argument("manifest", type=click.Path(path_type=Path))
@config_options(ensemble_weights=False)
@reports_errors
def oracle_eval(manifest: Path, jobs: int, **overrides) -> None:
    """Evaluate classification alone, with one perfect proposal per gt segment."""
    _echo_json(runner.oracle_evaluate(_configured(manifest, **overrides), jobs))


def _load_report(path: Path) -> PqReport:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    # eval writes {"panoptic": ..., "miou": ...}; run writes the bare report
    return PqReport.model_validate(data.get("panoptic", data))


@main.command("pq-diff")
@click.argument("report_a", type=click.Path(path_type=Path))
@click.argument("report_b", type=click.Path(path_type=Path))
@click.option("--top-k", type=click.IntRange(min=1), default=10, show_default=True)
@reports_errors
def pq_diff(report_a: Path, report_b: Path, top_k: int) -> None:
    """Per-category PQ change from REPORT_A to REPORT_B, seen and unseen."""
    diff = pq_difference(_load_report(report_a), _load_report(report_b), top_k)
    rows = [d.model_dump() for d in diff.seen + diff.unseen]
    table = pd.DataFrame(rows, columns=["category", "name", "seen", "pq_a", "pq_b", "delta"])
    click.echo(table.to_csv(index=False, float_format="%.6f", lineterminator="\n"), nl=False)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host: str, port: int) -> None:
    """Serve the HTTP API."""
    import uvicorn

    uvicorn.run("openvocab_panoptic.service:app", host=host, port=port, reload=False)


if __name__ == "__main__":
    main()
