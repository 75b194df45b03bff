"""Command-line interface: ``synth``, ``analyze``, ``bench`` and ``eval-values``.

Exit codes: 0 success, 2 input or configuration error, 3 internal invariant
violation (including a report that fails its own schema).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

from .config import RunConfig, load_config
from .io import (InputError, read_ground_truth, read_json, read_montage, read_recording, write_json,
                 write_recording)
from .metrics import detection_metrics, value_errors
from .pipeline import analyze
from .recording import ClinicalTolerances, ConfigurationError
from .report import SchemaValidationError, template_set_from_dict
from .synth import SynthSpec, synthesize

log = logging.getLogger("eegguard")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INTERNAL = 3

RECORDING_STEM = "recording"
TRUTH_SUFFIX = ".truth.json"
RECORDING_SUFFIXES = (".json", ".csv", ".edf", ".eegr")


def _dumps(doc) -> str:
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def load_templates(cfg: RunConfig, base: Path | None = None):
    """Tier templates named by ``cfg.report.template_set``; ``None`` keeps the defaults."""
    path = cfg.report.template_set
    if path is None:
        return None
    path = Path(path)
    if not path.is_absolute() and base is not None:
        path = base / path
    return template_set_from_dict(read_json(path))


def _config(path: str | None, seed: int | None) -> tuple[RunConfig, Path | None]:
    cfg = load_config(path) if path else RunConfig()
    if seed is not None:
        cfg = RunConfig.from_dict({**cfg.to_dict(), "seed": seed})
    return cfg, Path(path).parent if path else None


# -- subcommands ---------------------------------------------------------------

def cmd_synth(spec_path, out_dir) -> dict:
    """Synthesize the recording described by a spec document into ``out_dir``."""
    spec = SynthSpec.from_dict(read_json(spec_path))
    rec, truth = synthesize(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sidecar = write_recording(rec, out / f"{RECORDING_STEM}.json")
    write_json(out / f"{RECORDING_STEM}{TRUTH_SUFFIX}", truth.to_dict())
    return {"recording": str(sidecar), "truth": str(out / f"{RECORDING_STEM}{TRUTH_SUFFIX}"),
            "events": len(truth.events)}


def cmd_analyze(input_path, montage_path, config_path, out_dir, seed: int | None = None,
                timestamp: str | None = None) -> dict:
    """Run the pipeline on one recording; writes report, narrative and provenance."""
    cfg, base = _config(config_path, seed)
    rec = read_recording(input_path)
    if montage_path:
        rec = rec.replace(montage=read_montage(montage_path, rec.channels))
    result = analyze(rec, cfg, timestamp=timestamp, templates=load_templates(cfg, base))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(result.report.to_json(), encoding="utf-8")
    (out / "narrative.txt").write_text(result.narrative.text + "\n", encoding="utf-8")
    write_json(out / "provenance.json", result.provenance)
    return {"findings": len(result.report.findings), "latency_s": result.latency_s,
            "impression": result.report.overall_impression}


def _bench_items(data_dir: Path) -> list[tuple[Path, Path]]:
    items = []
    for truth in sorted(data_dir.rglob(f"*{TRUTH_SUFFIX}")):
        stem = truth.name[:-len(TRUTH_SUFFIX)]
        for suffix in RECORDING_SUFFIXES:
            candidate = truth.with_name(stem + suffix)
            if candidate.exists():
                items.append((candidate, truth))
                break
        else:
            raise InputError(f"{truth}: no recording next to the ground-truth file")
    if not items:
        raise InputError(f"{data_dir}: no '*{TRUTH_SUFFIX}' files found")
    return items


def cmd_bench(data_dir, out_path, config_path: str | None = None) -> dict:
    """Detection metrics over every recording/ground-truth pair under ``data_dir``."""
    cfg, base = _config(config_path, None)
    templates = load_templates(cfg, base)
    runs, names, reports = [], [], []
    for rec_path, truth_path in _bench_items(Path(data_dir)):
        rec = read_recording(rec_path)
        truth = read_ground_truth(truth_path)
        result = analyze(rec, cfg, templates=templates)
        pred = [f.onset_s.value for f in result.report.findings]
        runs.append((pred, [e.onset_s for e in truth.events], rec.duration_s))
        names.append(str(rec_path.relative_to(data_dir)))
        reports.append({"recording": names[-1], "latency_s": result.latency_s})
    metrics = detection_metrics(runs, names=names)
    doc = metrics.to_dict()
    doc["recordings"] = reports
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    write_json(out_path, doc)
    return doc


def cmd_eval_values(pred_path, truth_path, config_path: str | None = None) -> dict:
    """Mean absolute error per value kind, flagging values beyond tolerance."""
    tolerances = _config(config_path, None)[0].tolerances if config_path else ClinicalTolerances()
    report = read_json(pred_path)
    if not isinstance(report, dict) or "findings" not in report:
        raise InputError(f"{pred_path}: not a report document")
    return value_errors(report, read_ground_truth(truth_path), tolerances)


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eegguard", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a recording and its ground truth")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("analyze", help="analyze one recording")
    p.add_argument("--input", required=True)
    p.add_argument("--montage")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--timestamp", help="ISO timestamp copied into the outputs")

    p = sub.add_parser("bench", help="detection metrics over a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")

    p = sub.add_parser("eval-values", help="value errors of a report against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--config")
    p.add_argument("--out", help="also write the table to this file")
    return parser


def _run(args) -> int:
    if args.command == "synth":
        info = cmd_synth(args.spec, args.out)
        print(f"wrote {info['recording']} ({info['events']} events)")
    elif args.command == "analyze":
        start = time.perf_counter()
        info = cmd_analyze(args.input, args.montage, args.config, args.out, args.seed, args.timestamp)
        print(f"{info['findings']} finding(s), impression {info['impression']}")
        print(f"latency_s {time.perf_counter() - start:.3f}")
    elif args.command == "bench":
        doc = cmd_bench(args.data, args.out, args.config)
        print(f"fa_per_24h {doc['fa_per_24h']:.3f} sensitivity {doc['sensitivity']} "
              f"mean_latency_s {doc['mean_latency_s']}")
    elif args.command == "eval-values":
        table = cmd_eval_values(args.pred, args.truth, args.config)
        if args.out:
            write_json(args.out, table)
        sys.stdout.write(_dumps(table))
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except SchemaValidationError as exc:
        print(f"error: report failed schema validation: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (InputError, ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - anything else is a bug
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
