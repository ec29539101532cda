"""Per-(report, organ system) label rows and their on-disk formats.

The delimited table has one row per report and organ system. Disease columns
that do not belong to the row's system are left blank. One report is one CT
volume, so ``report_id`` doubles as the volume id downstream.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from bodyct.systems import DISEASES, NORMAL, SYSTEMS, check_system, labels_for

LABEL_COLUMNS: tuple[str, ...] = tuple(
    dict.fromkeys([c for s in SYSTEMS for c in DISEASES[s]] + [NORMAL])
)
HEADER = ("report_id", "patient_id", "system", "status", "usable") + LABEL_COLUMNS + ("evidence",)


class LabelTableError(Exception):
    pass


@dataclass(frozen=True)
class LabelRow:
    report_id: str
    patient_id: str
    system: str
    status: str
    labels: dict[str, int]
    usable: bool
    evidence: tuple[str, ...] = field(default=(), compare=False)

    def positives(self) -> frozenset[str]:
        return frozenset(c for c in DISEASES[self.system] if self.labels.get(c))


def rows_from_labelsets(labelsets: Iterable) -> list[LabelRow]:
    rows = []
    for ls in labelsets:
        for system in SYSTEMS:
            sl = ls.systems.get(system)
            if sl is None:
                continue
            rows.append(LabelRow(
                report_id=ls.report_id,
                patient_id=ls.patient_id,
                system=system,
                status=sl.status,
                labels=sl.label_values(),
                usable=sl.usable,
                evidence=tuple(e.pointer() for e in sl.evidence),
            ))
    return rows


def write_csv(path, rows: Iterable[LabelRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for r in rows:
            own = set(labels_for(r.system))
            cells = [str(r.labels.get(c, 0)) if c in own else "" for c in LABEL_COLUMNS]
            w.writerow([r.report_id, r.patient_id, r.system, r.status, int(r.usable), *cells,
                        ";".join(r.evidence)])


def write_jsonl(path, rows: Iterable[LabelRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in rows:
            rec = {
                "report_id": r.report_id,
                "patient_id": r.patient_id,
                "system": r.system,
                "status": r.status,
                "usable": r.usable,
                "labels": {c: r.labels.get(c, 0) for c in labels_for(r.system)},
                "evidence": list(r.evidence),
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_csv(path) -> list[LabelRow]:
    path = Path(path)
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise LabelTableError(f"cannot read label table {path}: {exc}") from exc
    rows = []
    with fh:
        reader = csv.DictReader(fh)
        missing = {"report_id", "patient_id", "system"} - set(reader.fieldnames or ())
        if missing:
            raise LabelTableError(f"{path}: missing columns {sorted(missing)}")
        for rec in reader:
            line = reader.line_num
            try:
                system = check_system(rec["system"])
                labels = {c: int(rec.get(c) or 0) for c in labels_for(system)}
            except ValueError as exc:
                raise LabelTableError(f"{path}:{line}: {exc}") from exc
            usable_cell = rec.get("usable")
            if usable_cell in (None, ""):
                usable = labels[NORMAL] == 1 or any(labels[c] for c in DISEASES[system])
            else:
                usable = usable_cell.strip() in ("1", "true", "True")
            status = rec.get("status") or ("no_apparent_disease" if labels[NORMAL] else "has_findings")
            ev = rec.get("evidence") or ""
            rows.append(LabelRow(rec["report_id"], rec["patient_id"], system, status, labels, usable,
                                 tuple(e for e in ev.split(";") if e)))
    return rows


def write_audit(path, labelsets: Iterable) -> None:
    """One line per fired piece of evidence: which sentence and keyword produced a label."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["report_id", "system", "label", "role", "sentence_index", "keyword", "sentence"])
        for ls in labelsets:
            for system in SYSTEMS:
                sl = ls.systems.get(system)
                if sl is None:
                    continue
                for e in sl.evidence:
                    w.writerow([ls.report_id, system, e.label, e.role, e.sentence, e.keyword,
                                ls.sentences[e.sentence]])
