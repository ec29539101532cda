"""Patient-level splits, prevalence tables and disease co-occurrence tables."""

from __future__ import annotations

import csv
import hashlib
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from bodyct.labeltable import LabelRow
from bodyct.systems import DISEASES, NORMAL, check_system

SUBSETS = ("train", "validation", "test")
DEFAULT_RATIOS = (0.70, 0.15, 0.15)
ALL_PATIENTS = "all_patients"


class SplitError(ValueError):
    pass


def _check_ratios(ratios: Sequence[float]) -> tuple[float, float, float]:
    if len(ratios) != 3:
        raise SplitError(f"need three ratios (train, validation, test), got {len(ratios)}")
    if any(not math.isfinite(r) or r <= 0 for r in ratios):
        raise SplitError(f"ratios must be positive, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios must sum to 1, got {sum(ratios)!r}")
    return tuple(float(r) for r in ratios)


def unit_hash(patient_id: str, seed: int) -> float:
    """Keyed hash of a patient id mapped onto [0, 1)."""
    key = (seed % 2**64).to_bytes(8, "little")
    digest = hashlib.blake2b(patient_id.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "big") / 2.0**64


def subset_for(patient_id: str, seed: int, ratios: Sequence[float] = DEFAULT_RATIOS) -> str:
    u = unit_hash(patient_id, seed)
    edge = 0.0
    for name, r in zip(SUBSETS, ratios):
        edge += r
        if u < edge:
            return name
    return SUBSETS[-1]


@dataclass
class SplitAssignment:
    seed: int
    ratios: tuple[float, float, float]
    subsets: dict[str, str] = field(default_factory=dict)

    def __getitem__(self, patient_id: str) -> str:
        return self.subsets[patient_id]

    def __contains__(self, patient_id: str) -> bool:
        return patient_id in self.subsets

    def __len__(self) -> int:
        return len(self.subsets)

    def fractions(self) -> dict[str, float]:
        n = len(self.subsets)
        counts = {s: 0 for s in SUBSETS}
        for sub in self.subsets.values():
            counts[sub] += 1
        return {s: (counts[s] / n if n else 0.0) for s in SUBSETS}

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["patient_id", "subset", "seed"])
            for pid in sorted(self.subsets):
                w.writerow([pid, self.subsets[pid], self.seed])

    @classmethod
    def read(cls, path, ratios: Sequence[float] = DEFAULT_RATIOS) -> "SplitAssignment":
        subsets = {}
        seeds = set()
        with open(path, encoding="utf-8", newline="") as fh:
            for rec in csv.DictReader(fh):
                if rec["subset"] not in SUBSETS:
                    raise SplitError(f"{path}: unknown subset {rec['subset']!r}")
                subsets[rec["patient_id"]] = rec["subset"]
                seeds.add(int(rec["seed"]))
        if len(seeds) > 1:
            raise SplitError(f"{path}: mixed seeds {sorted(seeds)}")
        return cls(seeds.pop() if seeds else 0, tuple(ratios), subsets)


def split_by_patient(
    patients: Iterable[str] | Iterable[LabelRow],
    seed: int,
    ratios: Sequence[float] = DEFAULT_RATIOS,
) -> SplitAssignment:
    """Assign every distinct patient to train/validation/test by hashing.

    Assignment of a patient never depends on which other patients are
    present, so growing the corpus leaves existing assignments untouched.
    """
    ratios = _check_ratios(ratios)
    ids = {p.patient_id if isinstance(p, LabelRow) else str(p) for p in patients}
    return SplitAssignment(seed, ratios, {pid: subset_for(pid, seed, ratios) for pid in sorted(ids)})


@dataclass
class PrevalenceTable:
    system: str
    # label -> column -> (patients, volumes); columns are "all" plus SUBSETS
    cells: dict[str, dict[str, tuple[int, int]]]

    COLUMNS = ("all",) + SUBSETS

    def rows(self):
        for label, per in self.cells.items():
            yield label, [per[c] for c in self.COLUMNS]


def prevalence_table(rows: Iterable[LabelRow], split: SplitAssignment, system: str) -> PrevalenceTable:
    check_system(system)
    usable = [r for r in rows if r.system == system and r.usable]
    missing = sorted({r.patient_id for r in usable if r.patient_id not in split})
    if missing:
        raise SplitError(f"patients missing from split: {', '.join(missing[:10])}"
                         + (" ..." if len(missing) > 10 else ""))
    labels = (ALL_PATIENTS,) + DISEASES[system] + (NORMAL,)
    patients = {lab: {c: set() for c in PrevalenceTable.COLUMNS} for lab in labels}
    volumes = {lab: {c: set() for c in PrevalenceTable.COLUMNS} for lab in labels}
    for r in usable:
        sub = split[r.patient_id]
        hits = [ALL_PATIENTS] + [lab for lab in labels[1:] if r.labels.get(lab)]
        for lab in hits:
            for col in ("all", sub):
                patients[lab][col].add(r.patient_id)
                volumes[lab][col].add(r.report_id)
    cells = {
        lab: {c: (len(patients[lab][c]), len(volumes[lab][c])) for c in PrevalenceTable.COLUMNS}
        for lab in labels
    }
    return PrevalenceTable(system, cells)


def write_prevalence(path, tables: Sequence[PrevalenceTable]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["system", "label"]
        for c in PrevalenceTable.COLUMNS:
            head += [f"{c}_patients", f"{c}_volumes"]
        w.writerow(head)
        for t in tables:
            for label, cells in t.rows():
                w.writerow([t.system, label, *[x for pv in cells for x in pv]])


def format_prevalence(tables: Sequence[PrevalenceTable]) -> str:
    """Render as "patients (volumes)" text, one block per system."""
    lines = []
    for t in tables:
        lines.append(t.system)
        lines.append(f"  {'label':<30}" + "".join(f"{c:>16}" for c in PrevalenceTable.COLUMNS))
        for label, cells in t.rows():
            lines.append(f"  {label:<30}" + "".join(f"{f'{p} ({v})':>16}" for p, v in cells))
    return "\n".join(lines)


@dataclass
class CooccurrenceTable:
    system: str
    n_patients: int
    # (abnormality count, disease combination) -> distinct patients
    counts: dict[tuple[int, tuple[str, ...]], int]

    def percent(self, key) -> float:
        return 100.0 * self.counts[key] / self.n_patients if self.n_patients else 0.0

    def cells(self):
        for key in self.counts:
            k, combo = key
            yield k, combo, self.counts[key], self.percent(key)

    def column_totals(self) -> dict[int, int]:
        out = {k: 0 for k in range(len(DISEASES[self.system]) + 1)}
        for (k, _), n in self.counts.items():
            out[k] += n
        return out


def patient_positives(rows: Iterable[LabelRow], system: str) -> dict[str, frozenset[str]]:
    """Union of positive disease classes per patient over usable volumes."""
    out: dict[str, set[str]] = defaultdict(set)
    for r in rows:
        if r.system != system or not r.usable:
            continue
        out[r.patient_id].update(r.positives())
    return {p: frozenset(v) for p, v in out.items()}


def cooccurrence(rows: Iterable[LabelRow], system: str) -> CooccurrenceTable:
    check_system(system)
    order = {c: i for i, c in enumerate(DISEASES[system])}
    per_patient = patient_positives(rows, system)
    counts: dict[tuple[int, tuple[str, ...]], int] = defaultdict(int)
    for combo in per_patient.values():
        key = tuple(sorted(combo, key=order.__getitem__))
        counts[(len(key), key)] += 1
    ordered = dict(sorted(counts.items(), key=lambda kv: (kv[0][0], [order[c] for c in kv[0][1]])))
    return CooccurrenceTable(system, len(per_patient), ordered)


def combination_name(combo: Sequence[str]) -> str:
    return "+".join(combo) if combo else "none"


def write_cooccurrence(path, tables: Sequence[CooccurrenceTable]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["system", "abnormalities", "combination", "n", "percent", "N"])
        for t in tables:
            for k, combo, n, pct in t.cells():
                w.writerow([t.system, k, combination_name(combo), n, f"{pct:.4f}", t.n_patients])


def split_counts(split: SplitAssignment) -> Mapping[str, int]:
    counts = {s: 0 for s in SUBSETS}
    for sub in split.subsets.values():
        counts[sub] += 1
    return counts

