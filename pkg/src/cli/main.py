"""
`mellm` command line: synth, flow, prompt, infer, eval, diversity, vis, instruction.

Errors end up as one JSON object on stderr, {"error": <code>, "message": <text>},
with exit status 2 for usage/config problems and 1 for everything else.
"""
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Optional, TypeVar

import click
import typer
from dotenv import find_dotenv, load_dotenv

from src.cli.config import RunConfig, load_run_config
from src.core.evalkit import (
    EmbeddingMatrix,
    EpeRecord,
    confusion_matrix,
    diversity_metrics,
    epe,
    epe_report,
    metrics_report,
    report_to_json,
    roi_epe,
    to_fixed_json,
)
from src.core.fgmu import (
    TASK_LABELS,
    LandmarkSet,
    build_instruction,
    frontal_landmarks,
    motion_prompt,
    roi_masks,
    roi_union_mask,
)
from src.core.flow_io import load_flo, read_image, save_flo, write_rgb
from src.core.flow_vis import flow_panel, flow_to_color, normalization_magnitude
from src.core.llm_client import ChatClient, read_jsonl, write_jsonl
from src.core.synthgen import (
    SAMPLE_FILES,
    SyntheticGenerator,
    list_sample_dirs,
    sample_dir_name,
    write_sample,
)
from src.core.tvl1_solver import TVL1Solver
from src.utils.errors import InvalidConfigError, MellmError, MetricError
from src.utils.logging import configure_logging, get_logger

logger = get_logger(__name__)

PRED_FLOW = "pred.flo"
PROMPT_FILE = "prompt.txt"

app = typer.Typer(
    name="mellm",
    help="Onset/apex micro-expression flow, motion prompts and evaluation.",
    add_completion=False,
    no_args_is_help=True,
    pretty_exceptions_enable=False,
)

T = TypeVar("T")
R = TypeVar("R")


def _map(fn: Callable[[T], R], items: Iterable[T], workers: int) -> list[R]:
    """Order-preserving map, threaded when workers > 1."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _settings(ctx: typer.Context, overrides: dict | None = None) -> RunConfig:
    return load_run_config(ctx.obj.get("config_path"), overrides)


def _emit(text: str, out: Optional[Path]) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")
    logger.info("Wrote %s", out)


def _sample_tree(samples: Optional[Path], config: RunConfig, required: str) -> list[Path]:
    root = samples or config.paths.input
    if root is None:
        raise InvalidConfigError("No input given: pass explicit files or --samples")
    dirs = list_sample_dirs(root, required)
    if not dirs:
        raise InvalidConfigError(f"No sample directories with {required} under {root}")
    return dirs


@app.callback()
def main_callback(
    ctx: typer.Context,
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="YAML run configuration"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Log progress at INFO level"),
):
    load_dotenv(find_dotenv(usecwd=True), override=False)
    configure_logging("INFO" if verbose else None)
    ctx.obj = {"config_path": config}


@app.command()
def synth(
    ctx: typer.Context,
    n: int = typer.Option(1, "--n", min=1, help="Number of samples"),
    seed: Optional[int] = typer.Option(None, "--seed", min=0, help="Seed of the first sample"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory"),
    width: Optional[int] = typer.Option(None, "--width"),
    height: Optional[int] = typer.Option(None, "--height"),
):
    """Emit N synthetic samples; sample i uses seed + i."""
    config = _settings(ctx, {"seed": seed, "synth": {"width": width, "height": height}, "paths": {"output": out}})
    if config.paths.output is None:
        raise InvalidConfigError("synth needs --out (or paths.output in the config)")

    generator = SyntheticGenerator(config.synth)
    for i in range(n):
        sample = generator.generate(config.seed + i)
        write_sample(sample, config.paths.output / sample_dir_name(i))
        logger.info("sample %d/%d (seed %d)", i + 1, n, config.seed + i)


@app.command()
def flow(
    ctx: typer.Context,
    onset: Optional[Path] = typer.Option(None, "--onset", help="Onset image"),
    apex: Optional[Path] = typer.Option(None, "--apex", help="Apex image"),
    flo: Optional[Path] = typer.Option(None, "--flo", help="External .flo to ingest"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output .flo (single pair)"),
    samples: Optional[Path] = typer.Option(None, "--samples", help="Sample tree; writes pred.flo per sample"),
    source: Optional[str] = typer.Option(None, "--source", help="builtin_tvl1 or external_flo"),
    flo_name: Optional[str] = typer.Option(None, "--flo-name", help="External flow file inside each sample"),
    workers: int = typer.Option(1, "--workers", min=1),
):
    """Estimate flow with the built-in TV-L1 solver, or validate and ingest an external .flo."""
    config = _settings(ctx, {"flow_source": source})
    solver = TVL1Solver(config.solver)

    if onset is not None or apex is not None or flo is not None:
        if out is None:
            raise InvalidConfigError("flow needs --out for a single pair")
        if config.flow_source == "external_flo":
            if flo is None:
                raise InvalidConfigError("external_flo needs --flo")
            save_flo(out, load_flo(flo))
        else:
            if onset is None or apex is None:
                raise InvalidConfigError("builtin_tvl1 needs --onset and --apex")
            save_flo(out, solver.estimate(read_image(onset), read_image(apex)).flow)
        logger.info("Wrote %s", out)
        return

    if config.flow_source == "external_flo":
        if flo_name is None:
            raise InvalidConfigError("external_flo over a sample tree needs --flo-name")
        dirs = _sample_tree(samples, config, flo_name)

        def estimate(directory: Path) -> None:
            save_flo(directory / PRED_FLOW, load_flo(directory / flo_name))
    else:
        dirs = _sample_tree(samples, config, SAMPLE_FILES["onset"])

        def estimate(directory: Path) -> None:
            result = solver.estimate(
                read_image(directory / SAMPLE_FILES["onset"]),
                read_image(directory / SAMPLE_FILES["apex"]),
            )
            save_flo(directory / PRED_FLOW, result.flow)
            logger.info("%s: final energy %.2f", directory.name, result.finest_energies[-1])

    _map(estimate, dirs, workers)


def _prompt_text(flow_path: Path, landmarks_path: Optional[Path], compensate: bool) -> str:
    field = load_flo(flow_path)
    if landmarks_path is not None:
        landmarks = LandmarkSet.load(landmarks_path)
    else:
        landmarks = frontal_landmarks(field.width, field.height)
    return motion_prompt(field, landmarks, compensate=compensate).rendered + "\n"


@app.command()
def prompt(
    ctx: typer.Context,
    flow_path: Optional[Path] = typer.Option(None, "--flow", help="Flow .flo file"),
    landmarks: Optional[Path] = typer.Option(None, "--landmarks", help="68-point `index,x,y` file"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Prompt text file (stdout if omitted)"),
    samples: Optional[Path] = typer.Option(None, "--samples", help="Sample tree; writes prompt.txt per sample"),
    flow_name: str = typer.Option(PRED_FLOW, "--flow-name", help="Flow file inside each sample"),
    compensate: bool = typer.Option(True, "--compensate/--no-compensate", help="Nasal-tip head compensation"),
    workers: int = typer.Option(1, "--workers", min=1),
):
    """Flow + landmarks -> structured motion prompt."""
    if flow_path is not None:
        _emit(_prompt_text(flow_path, landmarks, compensate), out)
        return

    config = _settings(ctx)
    dirs = _sample_tree(samples, config, flow_name)

    def describe(directory: Path) -> None:
        marks = directory / SAMPLE_FILES["landmarks"]
        text = _prompt_text(directory / flow_name, marks if marks.is_file() else None, compensate)
        (directory / PROMPT_FILE).write_text(text, encoding="utf-8")

    _map(describe, dirs, workers)


@app.command()
def instruction(
    ctx: typer.Context,
    task: Optional[str] = typer.Option(None, "--task", help="three_class or seven_class"),
    baseline_freeform: bool = typer.Option(False, "--baseline-freeform", help="Free-form baseline prompt"),
):
    """Print the task instruction sent along with every motion prompt."""
    config = _settings(ctx, {"task": task})
    sys.stdout.write(build_instruction(config.task, baseline_freeform) + "\n")


def _infer_inputs(prompts: Path) -> list[dict]:
    if prompts.is_dir():
        return [
            {"id": d.name, "prompt": (d / PROMPT_FILE).read_text(encoding="utf-8")}
            for d in list_sample_dirs(prompts, PROMPT_FILE)
        ]
    records = read_jsonl(prompts)
    for i, record in enumerate(records, start=1):
        if "id" not in record or "prompt" not in record:
            raise InvalidConfigError(f"{prompts}: record {i} needs 'id' and 'prompt'")
    return records


@app.command()
def infer(
    ctx: typer.Context,
    prompts: Path = typer.Option(..., "--prompts", help="JSON-lines {id, prompt, gt?} or a sample tree"),
    out: Path = typer.Option(..., "--out", "-o", help="Results JSON-lines"),
    task: Optional[str] = typer.Option(None, "--task"),
    baseline_freeform: bool = typer.Option(False, "--baseline-freeform"),
    base_url: Optional[str] = typer.Option(None, "--base-url"),
    model: Optional[str] = typer.Option(None, "--model"),
    max_in_flight: Optional[int] = typer.Option(None, "--max-in-flight", min=1),
    keyless: bool = typer.Option(False, "--keyless", help="Endpoint needs no API key"),
):
    """Send every prompt to the chat endpoint and store parsed results."""
    config = _settings(ctx, {
        "task": task,
        "endpoint": {
            "base_url": base_url,
            "model_name": model,
            "max_in_flight": max_in_flight,
            "keyless": True if keyless else None,
        },
    })
    records = _infer_inputs(prompts)
    text = build_instruction(config.task, baseline_freeform)

    client = ChatClient(config.endpoint)
    client.check_credentials()
    results = client.batch_infer(
        [(str(r["id"]), text, r["prompt"]) for r in records],
        task=config.task,
        gts=[r.get("gt") for r in records],
    )

    out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(out, results)
    failed = sum(1 for r in results if r.error is not None)
    logger.info("Wrote %d results to %s (%d failed)", len(results), out, failed)


def _epe_record(directory: Path, pred_name: str, gt_name: str, with_roi: bool) -> EpeRecord:
    pred = load_flo(directory / pred_name)
    gt = load_flo(directory / gt_name)
    roi = None
    if with_roi:
        marks = directory / SAMPLE_FILES["landmarks"]
        landmarks = LandmarkSet.load(marks) if marks.is_file() else frontal_landmarks(gt.width, gt.height)
        mask = roi_union_mask(roi_masks(landmarks, gt.width, gt.height))
        roi = roi_epe(pred, gt, mask)
    return EpeRecord(directory.name, epe(pred, gt), roi)


@app.command("eval")
def evaluate(
    ctx: typer.Context,
    results: Optional[Path] = typer.Option(None, "--results", help="JSON-lines {id, gt, pred}"),
    samples: Optional[Path] = typer.Option(None, "--samples", help="Sample tree for flow errors"),
    pred: Optional[Path] = typer.Option(None, "--pred", help="Predicted .flo (single pair)"),
    gt: Optional[Path] = typer.Option(None, "--gt", help="Ground-truth .flo (single pair)"),
    pred_name: str = typer.Option(PRED_FLOW, "--pred-name"),
    gt_name: str = typer.Option(SAMPLE_FILES["facial"], "--gt-name"),
    roi: bool = typer.Option(False, "--roi", help="Also report ROI end-point error"),
    task: Optional[str] = typer.Option(None, "--task"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Report JSON (stdout if omitted)"),
    workers: int = typer.Option(1, "--workers", min=1),
):
    """Classification metrics from results, or end-point errors of flows."""
    config = _settings(ctx, {"task": task})

    if results is not None:
        records = read_jsonl(results)
        pairs = []
        for record in records:
            if record.get("gt") is None:
                raise MetricError(f"Record {record.get('id')!r} has no ground-truth label")
            pairs.append((record["gt"], record.get("pred")))
        cm = confusion_matrix(pairs, TASK_LABELS[config.task])
        _emit(report_to_json(metrics_report(cm)), out)
        return

    if pred is not None or gt is not None:
        if pred is None or gt is None:
            raise InvalidConfigError("eval needs both --pred and --gt")
        record = EpeRecord(pred.stem, epe(load_flo(pred), load_flo(gt)))
        _emit(to_fixed_json(epe_report([record])), out)
        return

    dirs = _sample_tree(samples, config, pred_name)
    records = _map(lambda d: _epe_record(d, pred_name, gt_name, roi), dirs, workers)
    _emit(to_fixed_json(epe_report(records)), out)


@app.command()
def diversity(
    embeddings: Path = typer.Option(..., "--embeddings", help="Binary (int32 n, int32 d, float32 rows) or .csv"),
    out: Optional[Path] = typer.Option(None, "--out", "-o"),
):
    """Identity-diversity statistics of an embedding matrix."""
    _emit(report_to_json(diversity_metrics(EmbeddingMatrix.from_file(embeddings))), out)


@app.command()
def vis(
    flows: list[Path] = typer.Option(..., "--flow", help="Flow file; repeat for a side-by-side panel"),
    out: Path = typer.Option(..., "--out", "-o", help="PNG output"),
    max_magnitude: Optional[float] = typer.Option(None, "--max-magnitude", help="Saturation magnitude (px)"),
):
    """Colour-wheel rendering of one flow, or a titled panel of several."""
    fields = [(path.stem, load_flo(path)) for path in flows]
    out.parent.mkdir(parents=True, exist_ok=True)
    if len(fields) == 1:
        write_rgb(out, flow_to_color(fields[0][1], max_magnitude))
    else:
        if max_magnitude is None:
            shared = max(normalization_magnitude(f) for _, f in fields)
            max_magnitude = shared if shared > 0 else None
        flow_panel(fields, out, max_magnitude)
    logger.info("Wrote %s", out)


def _fail(code: str, message: str, status: int) -> int:
    sys.stderr.write(json.dumps({"error": code, "message": message}) + "\n")
    return status


def run(argv: list[str] | None = None) -> int:
    """Run the CLI and return its exit status instead of exiting."""
    command = typer.main.get_command(app)
    try:
        result = command.main(args=argv, prog_name="mellm", standalone_mode=False)
    except click.exceptions.UsageError as e:
        return _fail("usage_error", e.format_message(), 2)
    except click.exceptions.Abort:
        return _fail("aborted", "aborted", 1)
    except InvalidConfigError as e:
        return _fail(e.code, str(e), 2)
    except MellmError as e:
        return _fail(e.code, str(e), 1)
    except OSError as e:
        return _fail("io_error", str(e), 1)
    except ValueError as e:
        return _fail("invalid_value", str(e), 1)
    return result if isinstance(result, int) else 0


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
