"""Command line entry point: ``ipidcd {fit,detect,simulate,calibrate,evaluate,report}``.

Exit status is 0 when the run completes without an alarm, 2 when any alarm
was raised and 1 on error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from .config import ConfigError, load_config
from .detect import DetectorError
from .evaluate import (
    CalibrationConfig,
    CalibrationError,
    calibrate_threshold,
    calibrate_threshold_mc,
    efficiency_report,
)
from .io import IngestError, emit_report, ingest_csv, write_counts_csv
from .model import ChangeSpec, IpidModel, ModelError, mle_fit
from .scenario import ScenarioOutput, resolve_baseline, run_scenario, synthetic_days

log = logging.getLogger("ipidcd")

EXIT_OK, EXIT_ERROR, EXIT_ALARM = 0, 1, 2


def _pairs(items, flag):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(flag, f"expected MODALITY=PATH, got {item!r}")
        k, v = item.split("=", 1)
        out.setdefault(k.strip(), []).append(v.strip())
    return out


def _apply_io_flags(cfg, args):
    changes = {}
    if getattr(args, "round_counts", False):
        changes["round_counts"] = True
    if getattr(args, "fill_gaps", None):
        changes["fill_gaps"] = args.fill_gaps
    if getattr(args, "interval_seconds", None):
        changes["interval_seconds"] = args.interval_seconds
    return replace(cfg, **changes) if changes else cfg


def _ingest(cfg, path, name):
    return ingest_csv(path, name, integer=cfg.family.is_poisson, round_counts=cfg.round_counts,
                      fill_gaps=cfg.fill_gaps, interval_seconds=cfg.interval_seconds)


def _load_baselines(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return {k: tuple(v) for k, v in doc["modalities"].items()}


def _emit(output, args):
    fmts = ["json", "csv"] if args.format == "both" else [args.format]
    for f in fmts:
        for p in emit_report(output, f, args.out):
            log.info("wrote %s", p)


def cmd_fit(args):
    cfg = _apply_io_flags(load_config(args.config), args)
    train = _pairs(args.train, "--train")
    if not train:
        raise ConfigError("--train", "at least one MODALITY=PATH is required")
    fitted = {}
    for name, paths in train.items():
        fitted[name] = list(mle_fit(cfg.family, cfg.partition, [_ingest(cfg, p, name) for p in paths]))
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump({"modalities": fitted}, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(json.dumps({"modalities": fitted}, sort_keys=True))
    return EXIT_OK


def _detect(cfg, streams, baselines, args):
    out = run_scenario(cfg, streams, baselines)
    _emit(out, args)
    for a in out.alarms:
        print(f"alarm modality={a.modality} day={a.day} index={a.index} statistic={a.statistic:.6g}")
    print("day verdicts: " + (", ".join(out.day_verdicts) if out.day_verdicts else "n/a"))
    return EXIT_ALARM if out.any_alarm else EXIT_OK


def cmd_detect(args):
    cfg = _apply_io_flags(load_config(args.config), args)
    inputs = _pairs(args.input, "--input")
    if not inputs:
        raise ConfigError("--input", "at least one MODALITY=PATH is required")
    streams = {}
    for name, paths in inputs.items():
        if len(paths) != 1:
            raise ConfigError("--input", f"modality {name!r} given {len(paths)} files; pass one per modality")
        streams[name] = _ingest(cfg, paths[0], name)
    baselines = _load_baselines(args.baseline) if args.baseline else None
    return _detect(cfg, streams, baselines, args)


def cmd_simulate(args):
    cfg = load_config(args.config)
    day_len = cfg.day_length or cfg.partition.period
    names = args.modality or sorted(cfg.modalities) or ["counts"]
    mults = {k: float(v[-1]) for k, v in _pairs(args.event_multiplier, "--event-multiplier").items()}
    os.makedirs(args.out, exist_ok=True)
    streams = {}
    for j, name in enumerate(names):
        base = cfg.baseline_for(name)
        if base is None:
            raise ConfigError(f"modality.{name}.baseline", "simulate needs an explicit baseline")
        model = IpidModel(cfg.family, cfg.partition, base)
        mult = mults.get(name, args.default_multiplier)
        seq = synthetic_days(model, args.days, day_len, [args.seed, j], event_day=args.event_day,
                             event_start=args.event_start, multiplier=mult)
        write_counts_csv(seq, os.path.join(args.out, f"{name}.csv"))
        if args.train_days:
            train = synthetic_days(model, args.train_days, day_len, [args.seed, j, 1])
            write_counts_csv(train, os.path.join(args.out, f"train_{name}.csv"))
        streams[name] = seq
    return _detect(cfg, streams, None, args)


def _detector_for(cfg, baseline_path, name):
    baselines = _load_baselines(baseline_path) if baseline_path else None
    base = resolve_baseline(cfg, name, baselines)
    model = IpidModel(cfg.family, cfg.partition, base)
    return cfg.detector(model, name)


def cmd_calibrate(args):
    cfg = load_config(args.config)
    beta = args.beta if args.beta is not None else cfg.beta
    if beta is None:
        raise ConfigError("--beta", "required when the config gives an explicit threshold")
    doc = {"beta": beta, "log_beta": calibrate_threshold(beta)}
    if args.mc:
        det = _detector_for(cfg, args.baseline, args.modality)
        cc = CalibrationConfig(beta, "mc", reps=args.reps, horizon=args.horizon, tolerance=args.tolerance,
                               seed=args.seed)
        doc["mc"] = calibrate_threshold_mc(det, cc)
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def _parse_change(text, model):
    kind, _, rest = text.partition(":")
    if kind == "single":
        e, lam = rest.split(":")
        return ChangeSpec.single_batch(int(e), float(lam))
    if kind == "all":
        return ChangeSpec.all_batches([float(x) for x in rest.split(",")])
    if kind == "scale":
        return ChangeSpec.all_batches([float(rest) * t for t in model.baseline])
    raise ConfigError("--change", "expected single:E:LAMBDA, all:L1,...,LE or scale:M")


def cmd_evaluate(args):
    cfg = load_config(args.config)
    det = _detector_for(cfg, args.baseline, args.modality)
    change = _parse_change(args.change, det.model)
    rep = efficiency_report(det, change, args.betas, args.reps, seed=args.seed)
    emit_report(rep, "json", args.out)
    if args.format in ("csv", "both"):
        emit_report(rep, "csv", args.out)
    print(json.dumps({"slope_fit": rep.slope_fit, "theory_slope": rep.theory_slope, "pass": rep.passed}))
    return EXIT_OK


def cmd_report(args):
    with open(args.input, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("type") == "scenario":
        doc = ScenarioOutput.from_dict(doc)
    _emit(doc, args)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # usage errors must not collide with the alarm exit status
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ipidcd", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def io_flags(sp):
        sp.add_argument("--round-counts", action="store_true", help="round non-integer counts instead of failing")
        sp.add_argument("--fill-gaps", choices=["none", "zero", "hold"])
        sp.add_argument("--interval-seconds", type=float, help="sampling interval for timestamp,value files")

    def out_flags(sp):
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--format", choices=["json", "csv", "both"], default="both")

    sp = sub.add_parser("fit", help="fit per-batch baselines from training CSVs")
    sp.add_argument("--config", required=True)
    sp.add_argument("--train", action="append", metavar="MODALITY=PATH")
    sp.add_argument("--out", required=True, help="baseline JSON file")
    io_flags(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("detect", help="run detectors on count CSVs")
    sp.add_argument("--config", required=True)
    sp.add_argument("--input", action="append", metavar="MODALITY=PATH")
    sp.add_argument("--baseline", help="baseline JSON written by 'fit'")
    io_flags(sp)
    out_flags(sp)
    sp.set_defaults(func=cmd_detect)

    sp = sub.add_parser("simulate", help="sample synthetic days, write CSVs and detect")
    sp.add_argument("--config", required=True)
    sp.add_argument("--modality", action="append")
    sp.add_argument("--days", type=int, default=4)
    sp.add_argument("--event-day", type=int)
    sp.add_argument("--event-start", type=int, default=1, help="in-day sample where the event begins")
    sp.add_argument("--event-multiplier", action="append", metavar="MODALITY=FACTOR")
    sp.add_argument("--default-multiplier", type=float, default=2.0)
    sp.add_argument("--train-days", type=int, default=1, help="also write train_<modality>.csv")
    sp.add_argument("--seed", type=int, default=0)
    out_flags(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("calibrate", help="turn a false-alarm budget into a threshold")
    sp.add_argument("--config", required=True)
    sp.add_argument("--beta", type=float)
    sp.add_argument("--mc", action="store_true", help="also calibrate by Monte Carlo bisection")
    sp.add_argument("--modality")
    sp.add_argument("--baseline")
    sp.add_argument("--reps", type=int, default=1000)
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--tolerance", type=float, default=0.1)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("evaluate", help="Monte Carlo efficiency report")
    sp.add_argument("--config", required=True)
    sp.add_argument("--change", required=True, help="single:E:LAMBDA, all:L1,...,LE or scale:M")
    sp.add_argument("--betas", type=float, nargs="+", default=[1e2, 1e3, 1e4])
    sp.add_argument("--reps", type=int, default=1000)
    sp.add_argument("--modality")
    sp.add_argument("--baseline")
    sp.add_argument("--seed", type=int, default=0)
    out_flags(sp)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("report", help="re-render a JSON report")
    sp.add_argument("--in", dest="input", required=True)
    out_flags(sp)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, IngestError, ModelError, CalibrationError, DetectorError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
