"""Report ingestion, findings extraction and the exclusion filters.

Records come in either as JSON lines or as a delimited table with a header
row. Each record maps to one :class:`Report`; the filters then decide, per
organ system, whether the report is labelable.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from bodyct.systems import ABDOMINAL_SYSTEMS, SYSTEMS, check_system

PROTOCOLS = (
    "chest",
    "abdomen",
    "chest_abdomen",
    "abdomen_pelvis",
    "chest_abdomen_pelvis",
    "other",
)

KEPT = "kept"
EXCLUDED_INCOMPLETE = "excluded_incomplete"
EXCLUDED_DUPLICATE = "excluded_duplicate"
EXCLUDED_NONBODY = "excluded_nonbody"
EXCLUDED_PROTOCOL = "excluded_protocol"

DEFAULT_HEADERS = ("FINDINGS", "FINDINGS:")
DEFAULT_TERMINATORS = ("IMPRESSION", "IMPRESSION:")

_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n"}


class CorpusError(Exception):
    """Raised when a corpus file cannot be read at all."""


@dataclass(frozen=True)
class Report:
    report_id: str
    patient_id: str
    study_date: str
    protocol: str
    body_flag: bool
    raw_text: str
    findings: str = ""

    def to_record(self) -> dict:
        return {
            "report_id": self.report_id,
            "patient_id": self.patient_id,
            "study_date": self.study_date,
            "protocol": self.protocol,
            "body": self.body_flag,
            "text": self.raw_text,
            "findings": self.findings,
        }


@dataclass(frozen=True)
class RecordError:
    line: int
    report_id: str | None
    field: str
    message: str

    def __str__(self) -> str:
        rid = self.report_id or "<unknown>"
        return f"line {self.line}: record {rid}: {self.field}: {self.message}"


@dataclass(frozen=True)
class FilterOutcome:
    report_id: str
    organ_system: str
    disposition: str
    reason: str = ""


@dataclass
class ParseResult:
    reports: list[Report] = field(default_factory=list)
    errors: list[RecordError] = field(default_factory=list)

    def __iter__(self) -> Iterator[Report]:
        return iter(self.reports)

    def __len__(self) -> int:
        return len(self.reports)


def _as_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _record_to_report(rec: dict, line: int) -> tuple[Report | None, list[RecordError]]:
    rid = rec.get("report_id")
    rid = str(rid) if rid not in (None, "") else None
    errors = []
    for key in ("report_id", "patient_id", "text"):
        if rec.get(key) in (None, ""):
            errors.append(RecordError(line, rid, key, "missing required field"))
    protocol = rec.get("protocol") or "other"
    if protocol not in PROTOCOLS:
        errors.append(RecordError(line, rid, "protocol", f"unknown protocol {protocol!r}"))
    body = rec.get("body", True)
    try:
        body = _as_bool(True if body in (None, "") else body)
    except ValueError as exc:
        errors.append(RecordError(line, rid, "body", str(exc)))
    if errors:
        return None, errors
    report = Report(
        report_id=rid,
        patient_id=str(rec["patient_id"]),
        study_date=str(rec.get("study_date") or ""),
        protocol=protocol,
        body_flag=body,
        raw_text=str(rec["text"]),
        findings=str(rec.get("findings") or ""),
    )
    return report, []


def _sniff_format(path: Path) -> str:
    return "jsonl" if path.suffix.lower() in (".jsonl", ".ndjson", ".json") else "csv"


def _iter_records(path: Path, fmt: str) -> Iterator[tuple[int, dict | None, str | None]]:
    with open(path, encoding="utf-8", newline="") as fh:
        if fmt == "jsonl":
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    yield lineno, None, f"invalid JSON: {exc.msg}"
                    continue
                if not isinstance(rec, dict):
                    yield lineno, None, "record is not an object"
                    continue
                yield lineno, rec, None
        else:
            delimiter = "\t" if fmt == "tsv" else ","
            reader = csv.DictReader(fh, delimiter=delimiter)
            for rec in reader:
                # header is line 1; multi-line quoted cells shift this, which is fine
                yield reader.line_num, rec, None


def parse_corpus(path, fmt: str | None = None) -> ParseResult:
    """Read every record of a corpus file.

    Bad records land in ``result.errors`` with their line number; they are
    never silently skipped.
    """
    path = Path(path)
    fmt = fmt or _sniff_format(path)
    if fmt not in ("jsonl", "csv", "tsv"):
        raise CorpusError(f"unsupported corpus format {fmt!r}")
    result = ParseResult()
    seen: set[str] = set()
    try:
        for lineno, rec, problem in _iter_records(path, fmt):
            if problem is not None:
                result.errors.append(RecordError(lineno, None, "record", problem))
                continue
            report, errors = _record_to_report(rec, lineno)
            if errors:
                result.errors.extend(errors)
                continue
            if report.report_id in seen:
                result.errors.append(
                    RecordError(lineno, report.report_id, "report_id", "duplicate report_id")
                )
                continue
            seen.add(report.report_id)
            result.reports.append(report)
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusError(f"cannot read corpus {path}: {exc}") from exc
    return result


def _header_pattern(words: Sequence[str]) -> re.Pattern:
    # "FINDINGS" and "FINDINGS:" both reduce to the bare word plus optional colon
    bare = sorted({w.rstrip(":").strip() for w in words if w.strip()}, key=len, reverse=True)
    alt = "|".join(re.escape(w) for w in bare)
    return re.compile(rf"(?<![A-Za-z0-9])(?:{alt})(?![A-Za-z0-9])[ \t]*:?", re.IGNORECASE)


def find_findings_span(
    raw_text: str,
    headers: Sequence[str] = DEFAULT_HEADERS,
    terminators: Sequence[str] = DEFAULT_TERMINATORS,
) -> tuple[int, int] | None:
    """Character span of the findings section, whitespace-trimmed, or None if absent."""
    head = _header_pattern(headers).search(raw_text)
    if head is None:
        return None
    start = head.end()
    term = _header_pattern(terminators).search(raw_text, start) if terminators else None
    end = term.start() if term else len(raw_text)
    while start < end and raw_text[start].isspace():
        start += 1
    while end > start and raw_text[end - 1].isspace():
        end -= 1
    return start, end


def extract_findings(
    report: Report,
    headers: Sequence[str] = DEFAULT_HEADERS,
    terminators: Sequence[str] = DEFAULT_TERMINATORS,
) -> Report:
    span = find_findings_span(report.raw_text, headers, terminators)
    findings = "" if span is None else report.raw_text[span[0]:span[1]]
    return replace(report, findings=findings)


def is_incomplete(report: Report) -> bool:
    return not report.findings.strip()


def _norm_findings(text: str) -> str:
    return " ".join(text.lower().split())


def _keep_key(report: Report):
    # undated reports sort after dated ones
    return (report.study_date == "", report.study_date, report.report_id)


def dedupe(reports: Iterable[Report]) -> tuple[list[Report], list[FilterOutcome]]:
    """Drop repeated (patient, normalized findings) reports, keeping the earliest.

    Returned ``kept`` preserves input order; the keep decision itself depends
    only on study_date then report_id.
    """
    reports = list(reports)
    winners: dict[tuple[str, str], Report] = {}
    for rep in reports:
        key = (rep.patient_id, _norm_findings(rep.findings))
        best = winners.get(key)
        if best is None or _keep_key(rep) < _keep_key(best):
            winners[key] = rep
    kept, dropped = [], []
    for rep in reports:
        winner = winners[(rep.patient_id, _norm_findings(rep.findings))]
        if winner.report_id == rep.report_id:
            kept.append(rep)
        else:
            dropped.append(
                FilterOutcome(rep.report_id, "*", EXCLUDED_DUPLICATE, f"duplicate of {winner.report_id}")
            )
    return kept, dropped


def protocol_filter(report: Report, organ_system: str) -> FilterOutcome:
    check_system(organ_system)
    if not report.body_flag:
        return FilterOutcome(report.report_id, organ_system, EXCLUDED_NONBODY, "non-body report")
    if report.protocol == "chest" and organ_system in ABDOMINAL_SYSTEMS:
        return FilterOutcome(
            report.report_id, organ_system, EXCLUDED_PROTOCOL, "chest protocol excludes abdominal organs"
        )
    return FilterOutcome(report.report_id, organ_system, KEPT, "")


@dataclass
class FilterResult:
    reports: list[Report]  # complete, unique, body reports with findings filled in
    eligible: dict[str, tuple[str, ...]]  # report_id -> organ systems it is kept for
    audit: list[FilterOutcome]

    def kept_for(self, system: str) -> list[Report]:
        return [r for r in self.reports if system in self.eligible[r.report_id]]

    def counts(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for o in self.audit:
            per = out.setdefault(o.organ_system, {})
            per[o.disposition] = per.get(o.disposition, 0) + 1
        return out


def apply_filters(
    reports: Iterable[Report],
    headers: Sequence[str] = DEFAULT_HEADERS,
    terminators: Sequence[str] = DEFAULT_TERMINATORS,
    systems: Sequence[str] = SYSTEMS,
) -> FilterResult:
    """Run the full exclusion flow and emit one audit row per (report, system).

    Precedence when several causes apply: incomplete, duplicate, non-body,
    protocol.
    """
    reports = [extract_findings(r, headers, terminators) for r in reports]
    first_cause: dict[str, tuple[str, str]] = {}
    complete = []
    for r in reports:
        if is_incomplete(r):
            first_cause[r.report_id] = (EXCLUDED_INCOMPLETE, "missing or empty findings section")
        else:
            complete.append(r)
    unique, dropped = dedupe(complete)
    for o in dropped:
        first_cause[o.report_id] = (o.disposition, o.reason)

    audit: list[FilterOutcome] = []
    eligible: dict[str, tuple[str, ...]] = {}
    survivors = []
    unique_ids = {r.report_id for r in unique}
    for r in reports:
        if r.report_id not in unique_ids:
            disp, reason = first_cause[r.report_id]
            audit.extend(FilterOutcome(r.report_id, s, disp, reason) for s in systems)
            continue
        outcomes = [protocol_filter(r, s) for s in systems]
        audit.extend(outcomes)
        ok = tuple(o.organ_system for o in outcomes if o.disposition == KEPT)
        if ok:
            survivors.append(r)
            eligible[r.report_id] = ok
    return FilterResult(survivors, eligible, audit)


def write_reports(path, reports: Iterable[Report], eligible: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in reports:
            rec = r.to_record()
            if eligible is not None:
                rec["systems"] = list(eligible[r.report_id])
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def write_audit(path, audit: Iterable[FilterOutcome]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["report_id", "organ_system", "disposition", "reason"])
        for o in audit:
            w.writerow([o.report_id, o.organ_system, o.disposition, o.reason])
