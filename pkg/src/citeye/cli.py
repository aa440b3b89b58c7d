"""Command-line entry point: ``citeye {synth,featurize,run,verify,report}``.

Exit codes: 0 success, 2 invalid input or configuration, 3 training failure
(partial results are still written), 4 oracle checks failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import synth
from .config import ConfigError, RunConfig, load_config
from .errors import CiteyeError, InputValidationError, InvalidSpec, TooFewParticipants
from .features import FEATURE_NAMES, featurize, read_features_csv, write_features_csv
from .harness import TaskSpec, make_split_plan, run_condition, task_data
from .ingest import load_session

log = logging.getLogger("citeye")

EXIT_OK, EXIT_INPUT, EXIT_TRAINING, EXIT_VERIFY = 0, 2, 3, 4


def _dump(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")


def _synth_spec(value: str) -> synth.EffectSpec:
    if value in synth.PRESETS:
        return synth.PRESETS[value]()
    p = Path(value)
    if not p.exists():
        raise ConfigError(f"synth spec {value!r} is neither a preset ({', '.join(synth.PRESETS)}) nor a file")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, p, exc.lineno) from None
    spec = synth.EffectSpec.from_dict(doc.get("spec", doc))
    spec.validate()
    return spec


def _generate(cfg: RunConfig, directory: Path) -> dict:
    spec = _synth_spec(cfg.synth)
    return synth.generate_to(directory, spec, cfg.participants, cfg.trials_per_condition, cfg.seed)


def _feature_table(cfg: RunConfig, out: Path):
    """Features for the configured input, plus the dataset id when known."""
    source = cfg.input_source()
    if source == "features":
        return read_features_csv(cfg.features), cfg.dataset
    if source == "synth":
        paths = _generate(cfg, out / "synth")
        samples, events, trials = paths["samples"], paths["events"], paths["trials"]
    else:
        samples, events, trials = cfg.samples, cfg.events, cfg.trials
    records, stats = load_session(samples, events, trials)
    log.info("loaded %d trials (%d samples, %d discarded rows)", stats["trials"], stats["samples"], stats["samples_discarded"])
    dataset = cfg.dataset or (records[0].dataset_id.value if records else None)
    return featurize(records, cfg.feature_config()), dataset


# ---------------------------------------------------------------- commands


def cmd_synth(cfg: RunConfig) -> int:
    if not cfg.synth:
        raise ConfigError("synth needs --synth PRESET|SPEC.json")
    out = Path(cfg.out)
    paths = _generate(cfg, out)
    print(f"wrote {', '.join(sorted(Path(p).name for p in paths.values()))} to {out}")
    return EXIT_OK


def cmd_featurize(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    frame, _ = _feature_table(cfg, out)
    path = out / "features.csv"
    write_features_csv(frame, path)
    cells = frame[list(FEATURE_NAMES)]
    missing = cells.isna()
    print(f"rows {len(frame)}  participants {frame['participant_id'].nunique()}  -> {path}")
    print(f"missing cells {int(missing.values.sum())} of {missing.size} ({missing.values.mean():.1%})")
    worst = missing.mean().sort_values(ascending=False, kind="stable").head(3)
    if worst.iloc[0] > 0:
        print("most missing: " + ", ".join(f"{n} {v:.1%}" for n, v in worst.items()))
    return EXIT_OK


def cmd_run(cfg: RunConfig, dry_run: bool = False) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    frame, dataset = _feature_table(cfg, out)
    spec = TaskSpec(cfg.task_enum, cfg.group_enum, dataset or "unknown", cfg.seed)
    data = task_data(frame, spec.task, spec.group)
    plan = make_split_plan(data, spec.seed)
    if dry_run:
        print(json.dumps(plan.to_dict(), indent=2, sort_keys=True))
        return EXIT_OK

    run_config = {
        "task": spec.task.value,
        "feature_group": spec.group.value,
        "dataset": spec.dataset_id,
        "seed": spec.seed,
        "search_n": cfg.search_n,
        "n_estimators_max": cfg.n_estimators_max,
    }
    try:
        report = run_condition(frame, spec, cfg.search_n, cfg.n_jobs, cfg.n_estimators_max, plan=plan)
    except CiteyeError as exc:
        _dump({"config": run_config, "failed": True, "error": f"{type(exc).__name__}: {exc}"}, out / "report.json")
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    doc = report.to_dict()
    doc["config"] = run_config
    _dump(doc, out / "report.json")
    _dump(report.importance.to_dict(), out / "importance.json")
    print(_table_line(doc))
    if report.failed:
        bad = [r.fold for r in report.replications if r.failed]
        print(f"replication(s) {bad} failed; partial results in {out / 'report.json'}", file=sys.stderr)
        return EXIT_TRAINING
    return EXIT_OK


def cmd_verify(cfg: RunConfig, golden: str | None = None) -> int:
    from .verify import run_all

    results = run_all(seed=cfg.seed, golden=golden)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"failing checks: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def _table_line(doc: dict) -> str:
    top = ", ".join(f"{d['name']} ({d['count']})" for d in doc.get("importance_table", []))
    mean, std = doc.get("mean_accuracy"), doc.get("std_accuracy")
    acc = "failed" if mean is None or (isinstance(mean, float) and np.isnan(mean)) else f"{mean:.3f} ({std:.3f})"
    return (
        f"{doc.get('dataset', '?'):<12} {doc.get('task', '?'):<12} {doc.get('feature_group', '?'):<6} "
        f"n={doc.get('n_features', '?'):<3} baseline {doc.get('baseline', float('nan')):.3f}  acc {acc}  top: {top}"
    )


def cmd_report(paths: list[str], out: str | None = None) -> int:
    lines = []
    for p in paths:
        try:
            doc = json.loads(Path(p).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputValidationError(f"cannot read report: {exc}", p) from None
        if doc.get("failed") and "replications" not in doc:
            lines.append(f"{p}: failed ({doc.get('error')})")
        else:
            lines.append(_table_line(doc))
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "table.txt").write_text(text, encoding="utf-8")
    return EXIT_OK


# ---------------------------------------------------------------- parsing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--samples")
    p.add_argument("--events")
    p.add_argument("--trials")
    p.add_argument("--synth", help="synth preset (null, planted) or spec JSON")
    p.add_argument("--participants", type=int)
    p.add_argument("--trials-per-condition", dest="trials_per_condition", type=int)
    p.add_argument("--dataset", help="dataset id recorded in the report")
    p.add_argument("--interpolate", choices=["on", "off"], help="blink-gap interpolation (default: per dataset)")
    p.add_argument("--duration-mode", dest="duration_mode", choices=["mean", "sum"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="citeye", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic recording")
    _common(p)
    p.add_argument("--synth", help="preset (null, planted) or spec JSON")
    p.add_argument("--participants", type=int)
    p.add_argument("--trials-per-condition", dest="trials_per_condition", type=int)

    p = sub.add_parser("featurize", help="raw CSVs -> features.csv")
    _common(p)
    _inputs(p)

    p = sub.add_parser("run", help="evaluate one condition -> report.json, importance.json")
    _common(p)
    _inputs(p)
    p.add_argument("--features", help="features.csv instead of raw CSVs")
    p.add_argument("--task", choices=["binary", "three_class"])
    p.add_argument("--group", choices=["all", "eye", "pupil"])
    p.add_argument("--search-n", dest="search_n", type=int)
    p.add_argument("--n-jobs", dest="n_jobs", type=int)
    p.add_argument("--max-rounds", dest="n_estimators_max", type=int)
    p.add_argument("--dry-run", action="store_true", help="print the split plan and stop")

    p = sub.add_parser("verify", help="run the built-in oracle checks")
    _common(p)
    p.add_argument("--golden", help="golden model file (default: bundled)")

    p = sub.add_parser("report", help="summarise report.json files as a table")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out")
    return parser


_CONFIG_KEYS = {f for f in RunConfig.__dataclass_fields__}


def _overrides(args: argparse.Namespace) -> dict:
    out = {k: v for k, v in vars(args).items() if k in _CONFIG_KEYS}
    if getattr(args, "interpolate", None) is not None:
        out["interpolate"] = args.interpolate == "on"
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "report":
            return cmd_report(args.reports, args.out)
        cfg = load_config(args.config, _overrides(args))
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "featurize":
            return cmd_featurize(cfg)
        if args.command == "run":
            return cmd_run(cfg, args.dry_run)
        if args.command == "verify":
            return cmd_verify(cfg, args.golden)
    except (InputValidationError, InvalidSpec, TooFewParticipants, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CiteyeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
