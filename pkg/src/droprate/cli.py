"""Command-line entry point.

    droprate train   --config cfg.json [--key=value ...]
    droprate compare --config cfg.json [--schedules a,b,...] [--key=value ...]
    droprate sample  CKPT [--prompt STR] [--max-new N] [--temperature X] [--top-k K] [--seed S]
    droprate bench   CKPT [--n-tokens N] [--repeats R] [--out CSV]
    droprate plot    CSV [--out SVG]

Exit codes: 0 success, 1 usage/config problems, 2 runtime failures
(divergence, bad checkpoints, I/O).
"""

from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .config import DEFAULT_COMPARE_LABELS, LABEL_TO_KIND, RunSpec, resolve
from .errors import (
    CheckpointError,
    ConfigError,
    CsvFormatError,
    DivergenceError,
    UsageError,
    VocabularyError,
)
from .model import GptModel
from .report import ComparisonReport, CompareRow, write_combined_csv
from .rng import PURPOSE_SAMPLE, RngState, stream_id
from .svgplot import plot_csv
from .trainer import (
    METRICS_CSV_HEADER,
    MetricsRecord,
    format_metrics_row,
    load_checkpoint,
    measure_inference_speed,
    train,
)

_OVERRIDE_RE = re.compile(r"^--([A-Za-z0-9_.]+)=(.*)$", re.DOTALL)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="droprate", description="Dynamic dropout scheduling laboratory for a minimal GPT.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one run and write metrics.csv, ckpt.bin, run.json")
    p_train.add_argument("--config", help="JSON config file with flat dotted keys")

    p_cmp = sub.add_parser("compare", help="train every requested schedule and emit the comparison report")
    p_cmp.add_argument("--config", help="JSON config file with flat dotted keys")
    p_cmp.add_argument("--schedules", default=",".join(DEFAULT_COMPARE_LABELS),
                       help="comma-separated schedule labels (default: %(default)s)")

    p_sample = sub.add_parser("sample", help="generate text from a checkpoint")
    p_sample.add_argument("ckpt")
    p_sample.add_argument("--prompt", default="\n")
    p_sample.add_argument("--max-new", type=int, default=200)
    p_sample.add_argument("--temperature", type=float, default=1.0)
    p_sample.add_argument("--top-k", type=int, default=None)
    p_sample.add_argument("--seed", type=int, default=0)

    p_bench = sub.add_parser("bench", help="measure generation throughput of a checkpoint")
    p_bench.add_argument("ckpt")
    p_bench.add_argument("--n-tokens", type=int, default=500)
    p_bench.add_argument("--repeats", type=int, default=3)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--out", default="bench.csv")

    p_plot = sub.add_parser("plot", help="render the combined comparison CSV as an SVG chart")
    p_plot.add_argument("csv")
    p_plot.add_argument("--out", default="plot.svg")

    return parser


def _split_overrides(extras: list[str]) -> list[str]:
    overrides = []
    for item in extras:
        m = _OVERRIDE_RE.match(item)
        if not m:
            raise UsageError(f"unrecognized argument {item!r} (overrides look like --key=value)")
        overrides.append(f"{m.group(1)}={m.group(2)}")
    return overrides


def _load_dataset(spec: RunSpec) -> data_mod.SplitDataset:
    if spec.corpus is None:
        raise UsageError("a corpus path is required (set 'corpus' in the config or pass --corpus=PATH)")
    try:
        text = data_mod.load_corpus(spec.corpus)
    except OSError as e:
        raise ConfigError(f"corpus: {e}") from None
    return data_mod.build(text, spec.val_fraction)


class _CsvSink:
    """Streams MetricsRecords to a CSV file and echoes them to stdout."""

    def __init__(self, path: Path, quiet: bool = False):
        self._fh = open(path, "w", encoding="utf-8")
        self._fh.write(METRICS_CSV_HEADER + "\n")
        self._quiet = quiet

    def __call__(self, r: MetricsRecord) -> None:
        self._fh.write(format_metrics_row(r) + "\n")
        self._fh.flush()
        if not self._quiet:
            print(f"iter {r.iter}: train {r.train_loss:.4f}, val {r.val_loss:.4f}, "
                  f"p {r.dropout_p:.4f}, {r.elapsed:.1f}s")

    def close(self) -> None:
        self._fh.close()


def _run_one(spec: RunSpec, ds: data_mod.SplitDataset, out_dir: Path, quiet: bool = False):
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = spec.train_config(vocab_size=ds.vocab.size)
    (out_dir / "run.json").write_text(spec.run_json(vocab_size=ds.vocab.size), encoding="utf-8")
    sink = _CsvSink(out_dir / "metrics.csv", quiet=quiet)
    try:
        result = train(cfg, ds, sink, checkpoint_path=str(out_dir / "ckpt.bin"))
    finally:
        sink.close()
    return result


def cmd_train(args, overrides: list[str]) -> int:
    spec = resolve(args.config, overrides)
    ds = _load_dataset(spec)
    out_dir = spec.out_dir
    result = _run_one(spec, ds, out_dir)
    print(f"done: final train loss {result.final_train_loss:.4f}, best val loss {result.best_val_loss:.4f}, "
          f"{result.total_train_seconds / 60:.2f} min")
    print(f"artifacts in {out_dir}")
    return 0


def cmd_compare(args, overrides: list[str]) -> int:
    labels = [s.strip() for s in args.schedules.split(",") if s.strip()]
    if len(labels) < 2:
        raise UsageError(f"comparison needs at least 2 schedules, got {labels}")
    unknown = [s for s in labels if s not in LABEL_TO_KIND]
    if unknown:
        raise UsageError(f"unknown schedule label(s) {unknown}, expected {', '.join(LABEL_TO_KIND)}")

    base = resolve(args.config, overrides)
    ds = _load_dataset(base)
    out_dir = base.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    report = ComparisonReport(rows=[])
    per_schedule: dict[str, list[MetricsRecord]] = {}
    prompt = ds.vocab.encode(ds.vocab.chars[0])
    failure: DivergenceError | None = None

    for label in labels:
        spec = base.with_values(schedule__kind=label, label=label)
        print(f"=== schedule {label} ===")
        try:
            result = _run_one(spec, ds, out_dir / label, quiet=True)
        except DivergenceError as e:
            report.aborted = f"schedule {label} diverged at iteration {e.iteration}"
            failure = e
            break
        model = _model_from_ckpt(result.checkpoint_path)
        ais = measure_inference_speed(model, prompt, base["bench.n_tokens"],
                                      RngState(base.seed, stream_id(PURPOSE_SAMPLE)))
        per_schedule[label] = result.metrics
        report.rows.append(CompareRow(
            schedule=label,
            ftl=result.final_train_loss,
            bvl=result.best_val_loss,
            ttt_minutes=result.total_train_seconds / 60.0,
            ais=ais,
        ))
        print(f"{label}: FTL {result.final_train_loss:.4f}, BVL {result.best_val_loss:.4f}, "
              f"TTT {result.total_train_seconds / 60.0:.2f} min, AIS {ais:.2f} tok/s")

    write_combined_csv(out_dir / "combined.csv", per_schedule)
    (out_dir / "report.md").write_text(report.markdown(), encoding="utf-8")
    (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    if per_schedule:
        plot_csv(out_dir / "combined.csv", out_dir / "plot.svg")
    print(report.markdown(), end="")
    if failure is not None:
        raise failure
    return 0


def _model_from_ckpt(path: str) -> GptModel:
    ckpt = load_checkpoint(path)
    model = GptModel(ckpt.config, params=ckpt.restore_params())
    model.update_dropout(ckpt.current_dropout)
    model.dropout_update_count = 0
    return model


def cmd_sample(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    if ckpt.vocab is None:
        raise CheckpointError(f"{args.ckpt}: checkpoint carries no vocabulary, cannot encode the prompt")
    model = _model_from_ckpt(args.ckpt)
    prompt_ids = ckpt.vocab.encode(args.prompt)
    rng = RngState(args.seed, stream_id(PURPOSE_SAMPLE))
    out = model.generate(prompt_ids, args.max_new, temperature=args.temperature, top_k=args.top_k, rng=rng)
    print(ckpt.vocab.decode(out))
    return 0


def cmd_bench(args) -> int:
    if args.n_tokens < 500:
        raise UsageError(f"--n-tokens must be >= 500, got {args.n_tokens}")
    if args.repeats < 3:
        raise UsageError(f"--repeats must be >= 3, got {args.repeats}")
    ckpt = load_checkpoint(args.ckpt)
    model = _model_from_ckpt(args.ckpt)
    prompt = ckpt.vocab.encode(ckpt.vocab.chars[0]) if ckpt.vocab is not None else np.array([0])

    rates = []
    for i in range(args.repeats):
        rng = RngState(args.seed, stream_id(PURPOSE_SAMPLE, i))
        tps = measure_inference_speed(model, prompt, args.n_tokens, rng)
        rates.append(tps)
        print(f"repeat {i + 1}: {tps:.2f} tokens/sec")
    print(f"summary: mean {sum(rates) / len(rates):.2f}, min {min(rates):.2f}, max {max(rates):.2f} tokens/sec")

    out = Path(args.out)
    new_file = not out.exists()
    with open(out, "a", encoding="utf-8") as fh:
        if new_file:
            fh.write("ckpt,n_tokens,repeat,tokens_per_sec\n")
        for i, tps in enumerate(rates):
            fh.write(f"{args.ckpt},{args.n_tokens},{i + 1},{tps:.2f}\n")
    return 0


def cmd_plot(args) -> int:
    try:
        plot_csv(args.csv, args.out)
    except OSError as e:
        raise ConfigError(f"plot: {e}") from None
    print(f"wrote {args.out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args, extras = parser.parse_known_args(argv)
        if args.command in ("train", "compare"):
            overrides = _split_overrides(extras)
        elif extras:
            raise UsageError(f"unrecognized arguments: {' '.join(extras)}")
        else:
            overrides = []

        if args.command == "train":
            return cmd_train(args, overrides)
        if args.command == "compare":
            return cmd_compare(args, overrides)
        if args.command == "sample":
            return cmd_sample(args)
        if args.command == "bench":
            return cmd_bench(args)
        if args.command == "plot":
            return cmd_plot(args)
        raise UsageError(f"unknown command {args.command!r}")
    except (UsageError, ConfigError, VocabularyError, CsvFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (DivergenceError, CheckpointError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
