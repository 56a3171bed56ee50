"""
Command-line entry point for CoLabel.

Each subcommand reads one JSON stage configuration, runs the stage and
writes its artifacts under ``--out``. Exit codes: 0 on success, 1 on
invalid input (usage, configuration, data), 2 on runtime failure.
"""

import argparse
import sys
from pathlib import Path
from typing import Callable, List, NoReturn, Optional

from rich.console import Console

from colabel.__about__ import __version__
from colabel.config import RuntimeConfig, load_config, load_json_config
from colabel.corroborate.models import IntegrationPlan, MemberStageConfig
from colabel.network.models import Variant
from colabel.pipeline import (
    AblateStageConfig,
    PipelineConfig,
    run_ablate,
    run_correct,
    run_eval,
    run_generate,
    run_integrate,
    run_pipeline,
    run_report,
    run_train,
    run_train_member,
)
from colabel.synth.models import GenerationConfig
from colabel.training.models import TrainStageConfig
from colabel.utils.exceptions import ColabelError
from colabel.utils.logging import get_logger, log_error, setup_logging

console = Console()
error_console = Console(stderr=True)

Handler = Callable[[argparse.Namespace, RuntimeConfig], int]

EPILOG = """
Examples:
  colabel generate --config configs/small/generate.json --out runs/small/data
  colabel integrate --config configs/small/integrate.json --data runs/small --out runs/small/integrated
  colabel train --config configs/small/train.json --variant FusionOnly --seed 3 --data runs/small --out runs/fo-3
  colabel eval --config configs/small/train.json --data runs/small --out runs/fo-3 --masks
  colabel report runs/small --out runs/small/report
  colabel pipeline --config configs/small/pipeline.json --out runs/small
"""


class _Parser(argparse.ArgumentParser):
    """Argument parser that exits with status 1 on usage errors."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _out(args: argparse.Namespace, runtime: RuntimeConfig, default: str) -> Path:
    return Path(args.out) if args.out else Path(runtime.output_root) / default


def _generate(args: argparse.Namespace, runtime: RuntimeConfig) -> int:
    out = _out(args, runtime, "data")
    written = run_generate(load_json_config(args.config, GenerationConfig), out, args.seed)
    console.print(f"[green]Generated {len(written)} datasets[/green] in {out}")
    return 0


def _integrate(args: argparse.Namespace, runtime: RuntimeConfig) -> int:
    out = _out(args, runtime, "integrated")
    path = run_integrate(load_json_config(args.config, IntegrationPlan), args.data, out, args.seed, runtime)
    console.print(f"[green]Integrated datasets[/green] in {out}; coverage report: {path}")
    return 0


def _train_member(args: argparse.Namespace, runtime: RuntimeConfig) -> int:
    out = _out(args, runtime, "member")
    path = run_train_member(load_json_config(args.config, MemberStageConfig), args.data, out, args.seed)
    console.print(f"[green]Trained member[/green]: {path}")
    return 0


def _train(args: argparse.Namespace, runtime: RuntimeConfig) -> int:
    out = _out(args, runtime, "train")
    variant = Variant(args.variant) if args.variant else None
    history = run_train(
        load_json_config(args.config, TrainStageConfig), args.data, out, variant, args.seed or 0, progress=True
    )
    accuracy = history.final("val_accuracy.model")
    shown = "n/a" if accuracy is None else f"{accuracy:.4f}"
    console.print(f"[green]Trained {history.variant}[/green] for {len(history.epochs)} epochs; "
                  f"final validation accuracy {shown}; run in {out}")
    return 0


def _eval(args: argparse.Namespace, runtime: RuntimeConfig) -> int:
    report = run_eval(load_json_config(args.config, TrainStageConfig), args.data, _out(args, runtime, "train"),
                      masks=args.masks)
    for scheme, value in report.schemes.items():
        console.print(f"{scheme}: {value:.4f}")
    return 0


def _correct(args: argparse.Namespace, runtime: RuntimeConfig) -> int:
    report = run_correct(load_json_config(args.config, TrainStageConfig), args.data, _out(args, runtime, "train"))
    for scheme, changed in report.changed.items():
        console.print(f"{scheme}: {changed} predictions changed, accuracy {report.schemes[scheme]:.4f}")
    return 0


def _ablate(args: argparse.Namespace, runtime: RuntimeConfig) -> int:
    out = _out(args, runtime, "ablate")
    summary = run_ablate(load_json_config(args.config, AblateStageConfig), args.data, out, args.seed, runtime)
    console.print(f"[green]Ablations finished[/green] in {out}: {', '.join(sorted(summary))}")
    return 0


def _report(args: argparse.Namespace, runtime: RuntimeConfig) -> int:
    report = run_report(args.runs, _out(args, runtime, "report"), args.variant)
    report.render(console)
    return 0


def _pipeline(args: argparse.Namespace, runtime: RuntimeConfig) -> int:
    config = load_json_config(args.config, PipelineConfig)
    path = run_pipeline(config, Path(args.config).parent, args.out, args.seed, args.stage, runtime)
    console.print(f"[green]Pipeline finished[/green]: {path}")
    return 0


def _add_common(parser: argparse.ArgumentParser, config: bool = True, data: bool = True) -> None:
    if config:
        parser.add_argument("--config", required=True, help="JSON stage configuration")
    parser.add_argument("--seed", type=int, default=None, help="Seed replacing the configuration's seed")
    parser.add_argument("--out", default=None, help="Output directory (default: $COLABEL_OUTPUT_ROOT/<stage>)")
    if data:
        parser.add_argument("--data", default=".", help="Directory that dataset paths are relative to")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="colabel",
        description="Corroborative labeling and interpretable multi-branch classification",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=EPILOG,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", metavar="command")

    def command(name: str, handler: Handler, help_text: str) -> argparse.ArgumentParser:
        sub = subparsers.add_parser(name, help=help_text, description=help_text)
        sub.set_defaults(handler=handler)
        return sub

    _add_common(command("generate", _generate, "Generate synthetic datasets and the knowledge base"), data=False)
    _add_common(command("integrate", _integrate, "Complete missing annotations with labeling teams"))
    _add_common(command("train-member", _train_member, "Train one labeling-team member"))

    train = command("train", _train, "Train a network variant")
    _add_common(train)
    train.add_argument("--variant", choices=[v.value for v in Variant], default=None)

    evaluate = command("eval", _eval, "Evaluate a training run (--out is the run directory)")
    _add_common(evaluate)
    evaluate.add_argument("--masks", action="store_true", help="Export attention masks as PNGs")

    _add_common(command("correct", _correct, "Retroactively correct a run's predictions (--out is the run directory)"))
    _add_common(command("ablate", _ablate, "Run the labeling ladder and network variant ablations"))

    report = command("report", _report, "Consolidate results into markdown and CSV tables")
    report.add_argument("runs", nargs="+", help="Run or output directories")
    report.add_argument("--out", default=None, help="Output directory")
    report.add_argument("--variant", action="append", choices=[v.value for v in Variant],
                        help="Variant column to include (repeatable)")

    pipeline = command("pipeline", _pipeline, "Run a pipeline configuration stage by stage")
    _add_common(pipeline, data=False)
    pipeline.add_argument("--stage", default=None, help="Run only this stage")
    return parser


def dispatch(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv``, run the subcommand and return the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return int(exit_.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1

    try:
        app_config = load_config()
        setup_logging(app_config.logging)
        logger = get_logger(__name__)
        logger.debug("Dispatching command", command=args.command)
        return args.handler(args, app_config.runtime)
    except ColabelError as e:
        log_error(e, {"command": args.command})
        error_console.print(f"[red]{type(e).__name__}[/red]: {e}")
        return e.exit_code
    except KeyboardInterrupt:
        error_console.print("Interrupted")
        return 2
    except Exception as e:
        log_error(e, {"command": args.command})
        error_console.print(f"[red]Fatal error[/red]: {e}")
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
