from __future__ import annotations

import dataclasses

import pytest

from bodyct.rba import dictionary as rd
from bodyct.systems import DISEASES, SYSTEMS


def _replace_class(rules, system_id, class_id, **changes):
    systems = []
    for s in rules.systems:
        if s.id == system_id:
            classes = tuple(dataclasses.replace(c, **changes) if c.id == class_id else c for c in s.classes)
            s = dataclasses.replace(s, classes=classes)
        systems.append(s)
    return dataclasses.replace(rules, systems=tuple(systems))


def test_default_is_valid(rules):
    rep = rd.validate_dictionary(rules)
    assert rep.ok, rep.errors
    assert rep.warnings == []


def test_default_counts(rules):
    # a few dozen rules, several hundred keywords
    assert 25 <= rules.rule_count <= 40
    assert 400 <= rules.keyword_count <= 700


def test_label_menus(rules):
    for sid in SYSTEMS:
        assert tuple(c.id for c in rules.system(sid).classes) == DISEASES[sid]


def test_roundtrip(rules):
    again = rd.loads(rd.dumps(rules))
    assert again == rules
    assert rd.dumps(again) == rd.dumps(rules)


def test_collision_between_classes(rules):
    liver = rules.system("liver_gallbladder")
    fatty = liver.disease("fatty")
    g = dataclasses.replace(fatty.groups[0], keywords=fatty.groups[0].keywords + ("lesion",))
    bad = _replace_class(rules, "liver_gallbladder", "fatty", groups=(g,) + fatty.groups[1:])
    rep = rd.validate_dictionary(bad)
    assert not rep.ok
    assert any("'lesion'" in e and "collides" in e for e in rep.errors)


def test_empty_group(rules):
    nod = rules.system("lungs_pleura").disease("nodule")
    g = dataclasses.replace(nod.groups[0], keywords=())
    rep = rd.validate_dictionary(_replace_class(rules, "lungs_pleura", "nodule", groups=(g,) + nod.groups[1:]))
    assert any("empty keyword group" in e for e in rep.errors)


def test_negation_collision(rules):
    rep = rd.validate_dictionary(dataclasses.replace(rules, negation=rules.negation + ("nodule",)))
    assert any("'nodule'" in e and "negation" in e for e in rep.errors)


def test_empty_negation_warns(rules):
    rep = rd.validate_dictionary(dataclasses.replace(rules, negation=()))
    assert rep.ok
    assert any("negation" in w for w in rep.warnings)


def test_schema_version_mismatch(rules):
    data = rules.to_dict()
    data["schema_version"] = 99
    with pytest.raises(rd.DictionaryError, match="schema_version"):
        rd.from_dict(data)


def test_yaml_no_is_a_string(rules):
    assert "no" in rules.negation


def test_load_missing_file(tmp_path):
    with pytest.raises((rd.DictionaryError, OSError)):
        rd.load(tmp_path / "nope.yaml")
