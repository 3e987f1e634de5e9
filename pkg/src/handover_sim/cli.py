"""Command line: simulate, metrics, stats and report subcommands."""

from __future__ import annotations

import argparse
import glob
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .config import EpisodeConfig, apply_overrides, from_dict
from .core import SCHEMA_VERSION, ConfigError
from .engine import read_trace, run_experiment, write_trace
from .eval import (
    compute_cycle_metrics,
    cronbach_alpha,
    cronbach_to_dict,
    format_percent,
    metrics_to_csv,
    paired_episode_means,
    read_likert_csv,
    read_metrics_csv,
    repetition_decay,
    score_likert,
    success_rates,
    wilcoxon_signed_rank,
    wilcoxon_to_dict,
)

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


@dataclass(frozen=True)
class ExperimentConfig:
    repetitions: int = 1
    seed_base: int = 0
    modes: tuple[str, ...] | None = None
    paired: bool = False
    out_dir: str = "out"

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError("experiment.repetitions must be >= 1", "experiment.repetitions")
        for m in self.modes or ():
            if m not in ("vision", "voice"):
                raise ConfigError(f"unknown mode {m!r}", "experiment.modes")


def load_config(path: str | None, overrides: Sequence[str] = ()) -> tuple[EpisodeConfig, ExperimentConfig]:
    data: dict[str, Any] = {}
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}", "config") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}", "config") from None
        if not isinstance(data, dict):
            raise ConfigError("config root must be an object", "config")
    data = apply_overrides(data, list(overrides))
    exp = from_dict(ExperimentConfig, data.pop("experiment", {}), "experiment")
    return EpisodeConfig.from_dict(data), exp


def _dump(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _rates_table(rates: dict) -> str:
    c = rates["counts"]
    rows = [
        ("grasp", rates["grasp"], c["grasp_attempts"] - c["grasp_successes"], c["grasp_attempts"]),
        ("handover", rates["handover"], c["handover_attempts"] - c["handovers"], c["handover_attempts"]),
        ("cycle", rates["cycle"], c["cycles"] - c["cycles_succeeded"], c["cycles"]),
        ("full assembly", rates["full_assembly"], c["episodes"] - c["full_successes"], c["episodes"]),
    ]
    lines = [f"{'':<14}{'fails/total':>14}{'success':>10}"]
    lines += [f"{name:<14}{f'{fails}/{total}':>14}{format_percent(r):>10}" for name, r, fails, total in rows]
    return "\n".join(lines)


# --- subcommands ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    overrides = list(args.set or [])
    if args.episodes is not None:
        overrides.append(f"experiment.repetitions={args.episodes}")
    if args.seed is not None:
        overrides.append(f"experiment.seed_base={args.seed}")
    if args.mode is not None:
        overrides.append(f'experiment.modes=["{args.mode}"]')
    if args.paired:
        overrides.append("experiment.paired=true")
    if args.out is not None:
        overrides.append(f"experiment.out_dir={json.dumps(args.out)}")
    cfg, exp = load_config(args.config, overrides)
    results = run_experiment(cfg, exp.repetitions, exp.seed_base, exp.modes, exp.paired)
    out = Path(exp.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary: dict[str, Any] = {"schema_version": SCHEMA_VERSION, "repetitions": exp.repetitions,
                               "seed_base": exp.seed_base, "modes": {}}
    for mode, traces in results.traces.items():
        for tr in traces:
            write_trace(tr, out / f"trace_{mode}_{tr.config.seed:06d}.jsonl")
        summary["modes"][mode] = success_rates(traces)
    (out / "summary.json").write_text(_dump(summary), encoding="utf-8")
    for mode, rates in summary["modes"].items():
        print(f"[{mode}] {len(results.traces[mode])} episodes -> {out}")
        print(_rates_table(rates))
    return EXIT_OK


def _expand(patterns: Sequence[str]) -> list[Path]:
    paths: list[Path] = []
    for pat in patterns:
        p = Path(pat)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.jsonl")))
        else:
            paths.extend(Path(x) for x in sorted(glob.glob(pat)))
    return paths


def _load_traces(patterns: Sequence[str]):
    paths = _expand(patterns)
    if not paths:
        print("error: no trace files found", file=sys.stderr)
        return None
    traces = []
    for p in paths:
        try:
            traces.append(read_trace(p))
        except (OSError, ValueError, KeyError, ConfigError) as exc:
            print(f"warning: skipping {p}: {exc}", file=sys.stderr)
    if not traces:
        print("error: no readable traces", file=sys.stderr)
        return None
    return traces


def cmd_metrics(args) -> int:
    traces = _load_traces(args.traces)
    if traces is None:
        return EXIT_RUNTIME
    rows = [m for t in traces for m in compute_cycle_metrics(t)]
    text = metrics_to_csv(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    print(_rates_table(success_rates(traces)), file=sys.stderr)
    return EXIT_OK


def cmd_stats(args) -> int:
    report: dict[str, Any] = {}
    if args.likert:
        matrix = score_likert(read_likert_csv(args.likert))
        modes = sorted({m for _, m in matrix.rows})
        report["likert"] = {}
        for mode in modes:
            idx = [i for i, (_, m) in enumerate(matrix.rows) if m == mode]
            values = matrix.values[idx]
            if np.isnan(values).any():
                raise ValueError(f"questionnaire for mode {mode!r} has missing item responses")
            res = cronbach_alpha(values)
            report["likert"][mode] = {
                **cronbach_to_dict(res, matrix.items),
                "item_medians": dict(zip(matrix.items, np.median(values, axis=0).tolist())),
            }
    if args.metrics:
        if len(args.metrics) != 2:
            raise ValueError("paired statistics need exactly two metrics CSV files")
        a, b = (read_metrics_csv(p) for p in args.metrics)
        report["wilcoxon"] = {}
        for attr, name in (("handover_time", "handover_time_s"), ("cycle_time", "cycle_time_s")):
            pairs = paired_episode_means(a, b, attr)
            res = wilcoxon_signed_rank([(x, y) for _, x, y in pairs])
            report["wilcoxon"][name] = {
                **wilcoxon_to_dict(res), "n_pairs": len(pairs),
                "mean_a": float(np.mean([x for _, x, _ in pairs])) if pairs else None,
                "mean_b": float(np.mean([y for _, _, y in pairs])) if pairs else None,
            }
    if not report:
        raise ValueError("give two metrics CSV files and/or --likert FILE")
    text = _dump(report)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_report(args) -> int:
    traces = _load_traces(args.traces)
    if traces is None:
        return EXIT_RUNTIME
    lines = []
    by_mode: dict[str, list] = {}
    for t in traces:
        by_mode.setdefault(t.config.human.mode, []).append(t)
    for mode, ts in sorted(by_mode.items()):
        rates = success_rates(ts)
        metrics = [m for t in ts for m in compute_cycle_metrics(t)]
        ok = [m for m in metrics if m.succeeded]
        lines.append(f"== {mode}: {len(ts)} episodes, {len(metrics)} cycles")
        lines.append(_rates_table(rates))
        legs = ts[0].config.legs
        if rates["cycle"] is not None:
            lines.append(f"cycle rate ^ {legs} = {format_percent(repetition_decay(rates['cycle'], legs))}"
                         f" (observed full assembly {format_percent(rates['full_assembly'])})")
        if ok:
            ho = [m.handover_time for m in ok if m.handover_time is not None]
            lines.append(f"handover time  mean {np.mean(ho):.3f} s  sd {np.std(ho, ddof=1) if len(ho) > 1 else 0.0:.3f} s")
            lines.append(f"cycle time     mean {np.mean([m.cycle_time for m in ok]):.2f} s")
            for attr, label in (("h_idle_ratio", "H-IDLE"), ("r_idle_ratio", "R-IDLE"), ("c_act_ratio", "C-ACT")):
                lines.append(f"{label:<14} mean {format_percent(float(np.mean([getattr(m, attr) for m in ok])))}")
        lines.append("")
    text = "\n".join(lines)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="handover-sim", description=__doc__)
    parser.add_argument("--version", action="version",
                        version=f"handover-sim {__version__} (trace schema {SCHEMA_VERSION})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run episodes and write one JSON Lines trace per episode")
    p.add_argument("--config", help="JSON config (episode settings plus an 'experiment' block)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a dotted config key")
    p.add_argument("--episodes", type=int, help="episodes per mode")
    p.add_argument("--seed", type=int, help="seed of the first episode")
    p.add_argument("--mode", choices=("vision", "voice"))
    p.add_argument("--paired", action="store_true", help="run vision and voice on the same seeds")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("metrics", help="per-cycle metrics CSV from traces")
    p.add_argument("traces", nargs="+", help="trace files, globs or directories")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("stats", help="paired Wilcoxon tests and questionnaire reliability")
    p.add_argument("metrics", nargs="*", help="two metrics CSV files to pair by episode")
    p.add_argument("--likert", help="long-format questionnaire CSV")
    p.add_argument("--out", help="JSON path (default stdout)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("report", help="text summary of a batch of traces")
    p.add_argument("traces", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        where = f" [{exc.key}]" if exc.key else ""
        print(f"config error{where}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report and exit nonzero
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())


__all__ = ["main", "build_parser", "load_config", "ExperimentConfig"]
