"""``bodyct`` command line: ingest, label, split, stats, eval, prep, dict."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from bodyct import corpus as corpus_mod
from bodyct import dataset, labeltable, metrics, volprep
from bodyct.config import ConfigError, PipelineConfig, resolve_input
from bodyct.rba import dictionary as rdict
from bodyct.rba.engine import label_corpus
from bodyct.systems import SYSTEMS, label_id

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

_EXPECTED_ERRORS = (
    OSError,
    ConfigError,
    corpus_mod.CorpusError,
    rdict.DictionaryError,
    labeltable.LabelTableError,
    dataset.SplitError,
    metrics.MetricsError,
    volprep.GeometryError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit_error(command: str, kind: str, message: str) -> None:
    rec = {"status": "error", "command": command, "error": kind, "message": message}
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)


def _write_run_files(out_dir: Path, name: str, cfg: PipelineConfig, audit: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{name}.config.yaml").write_text(cfg.dumps(), encoding="utf-8")
    (out_dir / f"{name}.audit.json").write_text(json.dumps(audit, indent=2, sort_keys=True) + "\n",
                                                encoding="utf-8")


def _require(value, flag: str):
    if value is None:
        raise ConfigError(f"{flag} is required (flag or config file)")
    return value


def _load_rules(cfg: PipelineConfig):
    path = resolve_input(cfg.paths.dictionary)
    return rdict.load_default() if path is None else rdict.load(path)


def _read_corpus(cfg: PipelineConfig, fmt: str | None):
    path = resolve_input(_require(cfg.paths.corpus, "--corpus"))
    return corpus_mod.parse_corpus(path, fmt)


def _write_errors(path: Path, errors) -> None:
    import csv
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["line", "report_id", "field", "message"])
        for e in errors:
            w.writerow([e.line, e.report_id or "", e.field, e.message])


# -- subcommands ---------------------------------------------------------------

def cmd_ingest(cfg: PipelineConfig, args) -> dict:
    parsed = _read_corpus(cfg, args.format)
    result = corpus_mod.apply_filters(parsed.reports, cfg.findings.headers, cfg.findings.terminators)
    out = cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    corpus_mod.write_reports(out / "ingested.jsonl", result.reports, result.eligible)
    corpus_mod.write_audit(out / "filter_audit.csv", result.audit)
    _write_errors(out / "ingest_errors.csv", parsed.errors)
    for e in parsed.errors:
        print(f"warning: {e}", file=sys.stderr)
    counts = result.counts()
    print(f"ingested {len(parsed.reports)} records ({len(parsed.errors)} malformed); "
          f"kept {len(result.reports)} for labeling")
    return {"records": len(parsed.reports), "malformed": len(parsed.errors),
            "kept": len(result.reports), "dispositions": counts}


def cmd_label(cfg: PipelineConfig, args) -> dict:
    rules = _load_rules(cfg)
    parsed = _read_corpus(cfg, args.format)
    filtered = corpus_mod.apply_filters(parsed.reports, cfg.findings.headers, cfg.findings.terminators)
    result = label_corpus(filtered.reports, rules, filtered.eligible, jobs=cfg.jobs)
    rows = labeltable.rows_from_labelsets(result.labelsets)
    out = cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    labeltable.write_csv(out / "labels.csv", rows)
    labeltable.write_jsonl(out / "labels.jsonl", rows)
    labeltable.write_audit(out / "label_audit.csv", result.labelsets)
    for e in result.errors:
        print(f"warning: {e}", file=sys.stderr)
    unusable = sum(1 for ls in result.labelsets if ls.unusable)
    print(f"labeled {len(result.labelsets)} reports into {len(rows)} rows "
          f"({unusable} reports unusable for every system)")
    return {"reports": len(result.labelsets), "rows": len(rows), "unusable_reports": unusable,
            "errors": result.errors, "malformed_records": len(parsed.errors)}


def cmd_split(cfg: PipelineConfig, args) -> dict:
    rows = labeltable.read_csv(resolve_input(_require(cfg.paths.labels, "--labels")))
    split = dataset.split_by_patient(rows, cfg.split.seed, cfg.split.ratios)
    out = cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    split.write(out / "split.csv")
    counts = dataset.split_counts(split)
    print("patients per subset: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    return {"patients": len(split), "counts": dict(counts)}


def cmd_stats(cfg: PipelineConfig, args) -> dict:
    rows = labeltable.read_csv(resolve_input(_require(cfg.paths.labels, "--labels")))
    out = cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    systems = SYSTEMS if args.system in (None, "all") else (args.system,)
    if args.stats_kind == "prevalence":
        split = dataset.SplitAssignment.read(resolve_input(_require(cfg.paths.split, "--split")),
                                             cfg.split.ratios)
        tables = [dataset.prevalence_table(rows, split, s) for s in systems]
        dataset.write_prevalence(out / "prevalence.csv", tables)
        print(dataset.format_prevalence(tables))
        return {"systems": list(systems)}
    tables = [dataset.cooccurrence(rows, s) for s in systems]
    name = "cooccurrence.csv" if len(systems) > 1 else f"cooccurrence_{systems[0]}.csv"
    dataset.write_cooccurrence(out / name, tables)
    for t in tables:
        print(f"{t.system}: N={t.n_patients}")
        for k, combo, n, pct in t.cells():
            print(f"  [{k}] {dataset.combination_name(combo)}: {n} ({pct:.2f}%)")
    return {"systems": list(systems), "patients": {t.system: t.n_patients for t in tables}}


def _reference_map(rows):
    """(report_id, label_id) -> 0/1 over usable rows only."""
    ref = {}
    for r in rows:
        if not r.usable:
            continue
        for lab, v in r.labels.items():
            ref[(r.report_id, label_id(r.system, lab))] = v
    return ref


def cmd_eval(cfg: PipelineConfig, args) -> dict:
    reference = labeltable.read_csv(resolve_input(_require(cfg.paths.reference, "--reference")))
    out = cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    if args.eval_kind == "labels":
        predicted = labeltable.read_csv(resolve_input(_require(cfg.paths.labels, "--labels")))
        pred_ids = {r.report_id for r in predicted}
        ref_ids = {r.report_id for r in reference}
        if pred_ids != ref_ids:
            diff = sorted(pred_ids ^ ref_ids)
            raise metrics.MetricsError(
                f"report ids differ between labels and reference ({len(diff)}): " + ", ".join(diff[:20]))
        by_key = {(r.report_id, r.system): r for r in predicted}
        pred_map: dict[str, dict[str, int]] = {}
        ref_map: dict[str, dict[str, int]] = {}
        for r in reference:
            if not r.usable:
                continue
            mine = by_key.get((r.report_id, r.system))
            pred_map.setdefault(r.report_id, {})
            ref_map.setdefault(r.report_id, {})
            for lab, v in r.labels.items():
                lid = label_id(r.system, lab)
                ref_map[r.report_id][lid] = v
                pred_map[r.report_id][lid] = mine.labels.get(lab, 0) if mine and mine.usable else 0
        res = metrics.agreement(pred_map, ref_map)
        metrics.write_agreement(out / "agreement.csv", res)
        for a in res:
            print(f"{a.label_id:<45} n_pos={a.n_positive_reference:<5} acc={a.accuracy:.4f} f={a.f_score:.4f}")
        return {"labels": len(res), "items": len(ref_map)}
    preds = metrics.read_predictions(resolve_input(_require(cfg.paths.predictions, "--predictions")))
    res = metrics.evaluate_predictions(preds, _reference_map(reference), cfg.eval.method, cfg.eval.alpha,
                                       cfg.eval.seed, cfg.eval.resamples, jobs=cfg.jobs)
    metrics.write_roc(out / "roc.csv", res)
    for r in res:
        print(f"{r.label_id:<45} auc={r.auc:.4f} [{r.ci_low:.4f}, {r.ci_high:.4f}] {r.flag}")
    return {"labels": len(res), "method": cfg.eval.method}


def cmd_prep(cfg: PipelineConfig, args) -> dict:
    system = _require(args.system, "--system")
    out_path = Path(_require(args.out, "--out"))
    vol = volprep.read_volume(resolve_input(_require(cfg.paths.volume, "--volume")))
    mask = volprep.read_volume(resolve_input(_require(cfg.paths.mask, "--mask")))
    policy = volprep.IntensityPolicy({k: tuple(v) for k, v in cfg.prep.clip.items()})
    offset = cfg.prep.kidney_offset
    offset = offset if offset in ("auto", "none") else float(offset)
    patch, spec, degenerate, vol2 = volprep.prepare(vol, mask, system, cfg.prep.spline_order, offset, policy)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    lo, hi = policy.range_for(system)
    origin = tuple(o + a * s for o, a, s in zip(vol2.origin, spec.start, vol2.spacing))
    volprep.write_volume(out_path, volprep.VolumeGrid(patch, vol2.spacing, origin), extra={
        "intensity_policy": {"system": system, "clip": [lo, hi], "normalization": "patch zero-mean unit-sd"},
        "patch": spec.to_dict(),
        "degenerate": degenerate,
    })
    print(f"wrote {out_path} shape={patch.shape} start={spec.start} rule={spec.offset_rule}")
    return {"patch": spec.to_dict(), "degenerate": degenerate, "output": str(out_path)}


def cmd_dict(cfg: PipelineConfig, args) -> dict:
    rules = _load_rules(cfg)
    report = rdict.validate_dictionary(rules)
    if args.dict_kind == "dump":
        sys.stdout.write(rdict.dumps(rules))
    else:
        print(f"rules: {report.rule_count}")
        print(f"keywords: {report.keyword_count}")
        for s in rules.systems:
            n = sum(len(c.keywords) for c in s.classes)
            print(f"  {s.id}: {len(s.classes)} classes, {n} disease keywords, "
                  f"{len(s.organ_keywords)} organ keywords, "
                  f"{len(s.blocklist) + len(s.blocklist_organ_specific)} blocklist terms")
        for w in report.warnings:
            print(f"warning: {w}")
        for e in report.errors:
            print(f"error: {e}")
    if args.dict_kind == "validate" and not report.ok:
        raise rdict.DictionaryError(f"{len(report.errors)} validation errors")
    return {"rules": report.rule_count, "keywords": report.keyword_count, "valid": report.ok}


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bodyct", description="Weak labels from body CT reports, splits, patches and ROC statistics.")
    p.add_argument("--config", help="pipeline config file (YAML)")
    p.add_argument("--jobs", type=int, default=None, help="worker threads")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_help="output directory"):
        sp.add_argument("--out", default=None, help=out_help)
        # SUPPRESS keeps a global --jobs from being reset by the subparser default
        sp.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker threads")
        return sp

    ing = common(sub.add_parser("ingest", help="parse a corpus and apply exclusion filters"))
    ing.add_argument("--corpus")
    ing.add_argument("--format", choices=("jsonl", "csv", "tsv"))

    lab = common(sub.add_parser("label", help="label reports with the rule dictionary"))
    lab.add_argument("--corpus")
    lab.add_argument("--dictionary")
    lab.add_argument("--format", choices=("jsonl", "csv", "tsv"))

    spl = common(sub.add_parser("split", help="patient-level train/validation/test split"))
    spl.add_argument("--labels")
    spl.add_argument("--seed", type=int)
    spl.add_argument("--ratios", help="comma-separated train,validation,test")

    st = sub.add_parser("stats", help="prevalence and co-occurrence tables")
    st_sub = st.add_subparsers(dest="stats_kind", required=True, parser_class=_Parser)
    prev = common(st_sub.add_parser("prevalence"))
    prev.add_argument("--labels")
    prev.add_argument("--split")
    prev.add_argument("--system", choices=SYSTEMS + ("all",))
    co = common(st_sub.add_parser("cooccurrence"))
    co.add_argument("--labels")
    co.add_argument("--system", choices=SYSTEMS + ("all",))

    ev = sub.add_parser("eval", help="label agreement or ROC statistics")
    ev_sub = ev.add_subparsers(dest="eval_kind", required=True, parser_class=_Parser)
    el = common(ev_sub.add_parser("labels"))
    el.add_argument("--labels")
    el.add_argument("--reference")
    er = common(ev_sub.add_parser("roc"))
    er.add_argument("--predictions")
    er.add_argument("--reference")
    er.add_argument("--method", choices=(metrics.DELONG, metrics.BOOTSTRAP))
    er.add_argument("--alpha", type=float)
    er.add_argument("--seed", type=int)
    er.add_argument("--resamples", type=int)

    pr = sub.add_parser("prep", help="resample a volume and extract an organ patch")
    pr.add_argument("--system", choices=SYSTEMS)
    pr.add_argument("--volume")
    pr.add_argument("--mask")
    pr.add_argument("--out", help="patch output path (raw, with .json sidecar)")
    pr.add_argument("--spline-order", type=int, choices=(0, 1, 2, 3))
    pr.add_argument("--kidney-offset", help="'auto', 'none' or a fixed anterior shift in mm")

    dc = sub.add_parser("dict", help="inspect the rule dictionary")
    dc.add_argument("dict_kind", choices=("stats", "validate", "dump"))
    dc.add_argument("--dictionary")
    return p


def _resolve_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    paths = cfg.paths
    for attr in ("corpus", "dictionary", "labels", "reference", "split", "predictions", "volume", "mask"):
        value = getattr(args, attr, None)
        if value is not None:
            setattr(paths, attr, value)
    if args.command != "prep" and getattr(args, "out", None) is not None:
        paths.output_dir = args.out
    if getattr(args, "seed", None) is not None:
        if args.command == "split":
            cfg.split.seed = args.seed
        else:
            cfg.eval.seed = args.seed
    if getattr(args, "ratios", None) is not None:
        try:
            cfg.split.ratios = tuple(float(x) for x in args.ratios.split(","))
        except ValueError as exc:
            raise ConfigError(f"--ratios must be comma-separated numbers: {args.ratios!r}") from exc
    for attr, target in (("method", "method"), ("alpha", "alpha"), ("resamples", "resamples")):
        if getattr(args, attr, None) is not None:
            setattr(cfg.eval, target, getattr(args, attr))
    if getattr(args, "spline_order", None) is not None:
        cfg.prep.spline_order = args.spline_order
    if getattr(args, "kidney_offset", None) is not None:
        cfg.prep.kidney_offset = args.kidney_offset
    if args.jobs is not None:
        cfg.jobs = args.jobs
    return cfg


COMMANDS = {
    "ingest": cmd_ingest,
    "label": cmd_label,
    "split": cmd_split,
    "stats": cmd_stats,
    "eval": cmd_eval,
    "prep": cmd_prep,
    "dict": cmd_dict,
}


def run_subcommand(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        _emit_error(argv[0] if argv else "", "usage", str(exc))
        return EXIT_USAGE
    command = args.command
    name = command + "".join(f"_{getattr(args, k)}" for k in ("stats_kind", "eval_kind")
                             if getattr(args, k, None))
    try:
        cfg = _resolve_config(args)
        audit = COMMANDS[command](cfg, args)
    except _EXPECTED_ERRORS as exc:
        _emit_error(command, type(exc).__name__, str(exc))
        return EXIT_FAILURE
    if command == "prep":
        _write_run_files(Path(args.out).parent, f"{Path(args.out).name}.prep", cfg, audit)
    elif command != "dict":
        _write_run_files(cfg.output_dir(), name, cfg, audit)
    return EXIT_OK


def main() -> None:
    sys.exit(run_subcommand())


if __name__ == "__main__":
    main()
