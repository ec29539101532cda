from __future__ import annotations

import json
import random

import pytest

from bodyct.corpus import (
    EXCLUDED_DUPLICATE,
    EXCLUDED_INCOMPLETE,
    EXCLUDED_NONBODY,
    EXCLUDED_PROTOCOL,
    KEPT,
    CorpusError,
    Report,
    apply_filters,
    dedupe,
    extract_findings,
    find_findings_span,
    parse_corpus,
    protocol_filter,
)
from bodyct.systems import SYSTEMS


def rep(rid, pid="p1", text="FINDINGS: liver lesion.", date="2019-01-01", protocol="abdomen", body=True):
    return Report(rid, pid, date, protocol, body, text)


def write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")


def test_parse_preserves_order(tmp_path):
    p = tmp_path / "c.jsonl"
    write_jsonl(p, [{"report_id": f"r{i}", "patient_id": "p", "text": "x"} for i in (1, 2, 3)])
    res = parse_corpus(p)
    assert [r.report_id for r in res.reports] == ["r1", "r2", "r3"]
    assert res.errors == []
    assert all(r.findings == "" for r in res.reports)


def test_parse_missing_patient_is_reported(tmp_path):
    p = tmp_path / "c.jsonl"
    write_jsonl(p, [{"report_id": "r1", "patient_id": "p", "text": "x"}, {"report_id": "r2", "text": "y"}])
    res = parse_corpus(p)
    assert [r.report_id for r in res.reports] == ["r1"]
    (err,) = res.errors
    assert err.line == 2 and err.report_id == "r2" and err.field == "patient_id"


def test_parse_empty_file(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text("")
    res = parse_corpus(p)
    assert res.reports == [] and res.errors == []


def test_parse_bad_json_and_protocol(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text('{"report_id": "a", "patient_id": "p", "text": "t", "protocol": "brain"}\n{not json\n')
    res = parse_corpus(p)
    assert res.reports == []
    assert sorted((e.line, e.field) for e in res.errors) == [(1, "protocol"), (2, "record")]


def test_parse_duplicate_id(tmp_path):
    p = tmp_path / "c.jsonl"
    write_jsonl(p, [{"report_id": "a", "patient_id": "p", "text": "t"}] * 2)
    res = parse_corpus(p)
    assert len(res.reports) == 1 and len(res.errors) == 1


def test_parse_csv(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text('report_id,patient_id,study_date,protocol,body,text\n'
                 'r1,p1,2020-01-01,chest,true,"FINDINGS: No effusion."\n'
                 'r2,p1,2020-01-02,abdomen,0,"FINDINGS: x"\n')
    res = parse_corpus(p)
    assert [(r.report_id, r.protocol, r.body_flag) for r in res.reports] == [
        ("r1", "chest", True), ("r2", "abdomen", False)]


def test_parse_unreadable(tmp_path):
    with pytest.raises(CorpusError):
        parse_corpus(tmp_path / "missing.jsonl")


def test_extract_findings_between_headers():
    r = extract_findings(rep("a", text="HISTORY: x FINDINGS: liver lesion. IMPRESSION: y"))
    assert r.findings == "liver lesion."


def test_findings_header_case_insensitive():
    assert extract_findings(rep("a", text="findings\nFatty liver.\nimpression: ok")).findings == "Fatty liver."


def test_no_header_is_incomplete():
    res = apply_filters([rep("a", text="HISTORY: pain. IMPRESSION: normal.")])
    assert {o.disposition for o in res.audit} == {EXCLUDED_INCOMPLETE}
    assert res.reports == []


def test_empty_section_is_incomplete():
    r = extract_findings(rep("a", text="FINDINGS:\nIMPRESSION: fine"))
    assert r.findings == ""
    res = apply_filters([r])
    assert {o.disposition for o in res.audit} == {EXCLUDED_INCOMPLETE}


def test_findings_is_substring():
    text = "EXAM: CT\nFINDINGS:\n  The liver is normal.  \nIMPRESSION: none"
    a, b = find_findings_span(text)
    assert text[a:b] == "The liver is normal."


def test_dedupe_keeps_earliest():
    kept, dropped = dedupe([extract_findings(rep("b", date="2020-02-01")), extract_findings(rep("a", date="2020-03-01"))])
    assert [r.report_id for r in kept] == ["b"]
    assert dropped[0].report_id == "a" and dropped[0].disposition == EXCLUDED_DUPLICATE


def test_dedupe_ties_by_report_id():
    kept, _ = dedupe([extract_findings(rep("z")), extract_findings(rep("m"))])
    assert [r.report_id for r in kept] == ["m"]


def test_dedupe_normalizes_whitespace_and_case():
    a = extract_findings(rep("a", text="FINDINGS: Liver   lesion."))
    b = extract_findings(rep("b", text="FINDINGS:\nliver\nLESION."))
    kept, dropped = dedupe([a, b])
    assert len(kept) == 1 and len(dropped) == 1


def test_dedupe_different_patients_or_words():
    a = extract_findings(rep("a", pid="p1"))
    b = extract_findings(rep("b", pid="p2"))
    c = extract_findings(rep("c", pid="p1", text="FINDINGS: liver lesions."))
    kept, dropped = dedupe([a, b, c])
    assert len(kept) == 3 and dropped == []


def test_dedupe_idempotent_and_order_independent():
    rng = random.Random(3)
    reports = []
    for i in range(60):
        reports.append(extract_findings(rep(
            f"r{i:02d}", pid=f"p{rng.randrange(5)}", date=f"2020-01-{rng.randrange(1, 9):02d}",
            text=f"FINDINGS: text {rng.randrange(4)}.")))
    kept, _ = dedupe(reports)
    again, dropped = dedupe(kept)
    assert again == kept and dropped == []
    for _ in range(5):
        shuffled = reports[:]
        rng.shuffle(shuffled)
        assert {r.report_id for r in dedupe(shuffled)[0]} == {r.report_id for r in kept}


@pytest.mark.parametrize("protocol,system,expected", [
    ("chest", "liver_gallbladder", EXCLUDED_PROTOCOL),
    ("chest", "kidneys_ureters", EXCLUDED_PROTOCOL),
    ("chest", "lungs_pleura", KEPT),
    ("abdomen_pelvis", "lungs_pleura", KEPT),
    ("chest_abdomen_pelvis", "liver_gallbladder", KEPT),
])
def test_protocol_filter(protocol, system, expected):
    assert protocol_filter(rep("a", protocol=protocol), system).disposition == expected


@pytest.mark.parametrize("system", SYSTEMS)
def test_nonbody_excluded_everywhere(system):
    assert protocol_filter(rep("a", body=False), system).disposition == EXCLUDED_NONBODY


def test_disposition_partition():
    reports = [
        rep("a"),
        rep("b", text="no header"),
        rep("c", date="2021-01-01"),  # duplicate of a
        rep("d", pid="p2", body=False),
        rep("e", pid="p3", protocol="chest"),
    ]
    res = apply_filters(reports)
    for system in SYSTEMS:
        per = [o for o in res.audit if o.organ_system == system]
        assert sorted(o.report_id for o in per) == ["a", "b", "c", "d", "e"]
    assert res.eligible == {"a": SYSTEMS, "e": ("lungs_pleura",)}
    disp = {(o.report_id, o.organ_system): o.disposition for o in res.audit}
    assert disp[("c", "lungs_pleura")] == EXCLUDED_DUPLICATE
    assert disp[("e", "liver_gallbladder")] == EXCLUDED_PROTOCOL
