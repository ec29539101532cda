"""Rule dictionary: schema, loading, serialization and validation."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from bodyct.systems import DISEASES, SYSTEMS

SCHEMA_VERSION = 1

# rules that exist once per organ system besides the keyword-group rules
PER_SYSTEM_RULES = ("no_apparent_disease", "uncertain")

_TOKEN = re.compile(r"[a-z0-9]+")


class DictionaryError(Exception):
    """The dictionary file is malformed or fails validation."""


def keyword_tokens(keyword: str) -> tuple[str, ...]:
    return tuple(_TOKEN.findall(keyword.lower()))


@dataclass(frozen=True)
class KeywordGroup:
    name: str
    keywords: tuple[str, ...]
    organ_specific: bool = False


@dataclass(frozen=True)
class DiseaseClass:
    id: str
    groups: tuple[KeywordGroup, ...]

    @property
    def keywords(self) -> tuple[str, ...]:
        return tuple(k for g in self.groups for k in g.keywords)


@dataclass(frozen=True)
class OrganSystem:
    id: str
    organ_keywords: tuple[str, ...]
    classes: tuple[DiseaseClass, ...]
    blocklist: tuple[str, ...] = ()
    blocklist_organ_specific: tuple[str, ...] = ()

    def disease(self, class_id: str) -> DiseaseClass:
        for c in self.classes:
            if c.id == class_id:
                return c
        raise KeyError(class_id)


@dataclass(frozen=True)
class RuleDictionary:
    systems: tuple[OrganSystem, ...]
    negation: tuple[str, ...]
    uncertainty: tuple[str, ...]
    pseudo_negation: tuple[str, ...] = ()
    schema_version: int = SCHEMA_VERSION
    note: str = ""

    def system(self, system_id: str) -> OrganSystem:
        for s in self.systems:
            if s.id == system_id:
                return s
        raise KeyError(system_id)

    @property
    def rule_count(self) -> int:
        groups = sum(len(c.groups) for s in self.systems for c in s.classes)
        return groups + len(PER_SYSTEM_RULES) * len(self.systems)

    @property
    def keyword_count(self) -> int:
        return len(self.all_keywords())

    def all_keywords(self) -> set[tuple[str, str]]:
        """Distinct (role, keyword) pairs; a term used in two systems counts twice."""
        out: set[tuple[str, str]] = set()
        for kind, words in (("negation", self.negation), ("uncertainty", self.uncertainty),
                            ("pseudo_negation", self.pseudo_negation)):
            out.update((kind, w.lower()) for w in words)
        for s in self.systems:
            out.update((f"{s.id}:organ", w.lower()) for w in s.organ_keywords)
            out.update((f"{s.id}:blocklist", w.lower()) for w in s.blocklist + s.blocklist_organ_specific)
            for c in s.classes:
                out.update((f"{s.id}:{c.id}", w.lower()) for w in c.keywords)
        return out

    def to_dict(self) -> dict:
        systems = {}
        for s in self.systems:
            systems[s.id] = {
                "organ_keywords": list(s.organ_keywords),
                "blocklist": {
                    "requires_organ": list(s.blocklist),
                    "organ_specific": list(s.blocklist_organ_specific),
                },
                "classes": {
                    c.id: {
                        g.name: {"organ_specific": g.organ_specific, "keywords": list(g.keywords)}
                        for g in c.groups
                    }
                    for c in s.classes
                },
            }
        d = {
            "schema_version": self.schema_version,
            "negation": list(self.negation),
            "pseudo_negation": list(self.pseudo_negation),
            "uncertainty": list(self.uncertainty),
            "systems": systems,
        }
        if self.note:
            d["note"] = self.note
        return d


def _strs(value, where: str) -> tuple[str, ...]:
    if value is None:
        return ()
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise DictionaryError(f"{where}: expected a list of strings")
    return tuple(value)


def from_dict(data: dict) -> RuleDictionary:
    if not isinstance(data, dict):
        raise DictionaryError("dictionary root must be a mapping")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise DictionaryError(
            f"schema_version mismatch: file has {version!r}, this build reads {SCHEMA_VERSION}"
        )
    raw_systems = data.get("systems")
    if not isinstance(raw_systems, dict):
        raise DictionaryError("systems: expected a mapping")
    systems = []
    for sid, sdata in raw_systems.items():
        if not isinstance(sdata, dict):
            raise DictionaryError(f"systems.{sid}: expected a mapping")
        block = sdata.get("blocklist") or {}
        classes = []
        for cid, groups in (sdata.get("classes") or {}).items():
            if not isinstance(groups, dict):
                raise DictionaryError(f"systems.{sid}.classes.{cid}: expected a mapping of keyword groups")
            kgroups = []
            for gname, g in groups.items():
                if not isinstance(g, dict):
                    raise DictionaryError(f"systems.{sid}.classes.{cid}.{gname}: expected a mapping")
                kgroups.append(KeywordGroup(
                    name=gname,
                    keywords=_strs(g.get("keywords"), f"systems.{sid}.classes.{cid}.{gname}.keywords"),
                    organ_specific=bool(g.get("organ_specific", False)),
                ))
            classes.append(DiseaseClass(cid, tuple(kgroups)))
        # mapping order carries no meaning: known classes take the canonical label order
        known = DISEASES.get(sid, ())
        classes.sort(key=lambda c: known.index(c.id) if c.id in known else len(known))
        systems.append(OrganSystem(
            id=sid,
            organ_keywords=_strs(sdata.get("organ_keywords"), f"systems.{sid}.organ_keywords"),
            classes=tuple(classes),
            blocklist=_strs(block.get("requires_organ"), f"systems.{sid}.blocklist.requires_organ"),
            blocklist_organ_specific=_strs(block.get("organ_specific"), f"systems.{sid}.blocklist.organ_specific"),
        ))
    systems.sort(key=lambda s: SYSTEMS.index(s.id) if s.id in SYSTEMS else len(SYSTEMS))
    return RuleDictionary(
        systems=tuple(systems),
        negation=_strs(data.get("negation"), "negation"),
        uncertainty=_strs(data.get("uncertainty"), "uncertainty"),
        pseudo_negation=_strs(data.get("pseudo_negation"), "pseudo_negation"),
        schema_version=version,
        note=str(data.get("note") or ""),
    )


def loads(text: str) -> RuleDictionary:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise DictionaryError(f"cannot parse dictionary: {exc}") from exc
    return from_dict(data)


def load(path) -> RuleDictionary:
    return loads(Path(path).read_text(encoding="utf-8"))


def dumps(rules: RuleDictionary) -> str:
    return yaml.safe_dump(rules.to_dict(), sort_keys=False, allow_unicode=True, width=100)


def load_default() -> RuleDictionary:
    text = resources.files("bodyct.data").joinpath("default_dictionary.yaml").read_text(encoding="utf-8")
    return loads(text)


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    rule_count: int = 0
    keyword_count: int = 0

    @property
    def ok(self) -> bool:
        return not self.errors

    def raise_if_invalid(self) -> None:
        if self.errors:
            raise DictionaryError("invalid dictionary:\n  " + "\n  ".join(self.errors))


def validate_dictionary(rules: RuleDictionary) -> ValidationReport:
    rep = ValidationReport(rule_count=rules.rule_count, keyword_count=rules.keyword_count)
    ids = [s.id for s in rules.systems]
    for sid in SYSTEMS:
        if sid not in ids:
            rep.errors.append(f"missing organ system {sid}")
    for sid in ids:
        if sid not in DISEASES:
            rep.errors.append(f"unknown organ system {sid}")
    if not rules.negation:
        rep.warnings.append("negation keyword set is empty: negation detection disabled")
    negs = {keyword_tokens(k): k for k in rules.negation}
    single_negs = {toks[0]: k for toks, k in negs.items() if len(toks) == 1}
    for kind, words in (("negation", rules.negation), ("uncertainty", rules.uncertainty),
                        ("pseudo_negation", rules.pseudo_negation)):
        for w in words:
            if not keyword_tokens(w):
                rep.errors.append(f"{kind}: keyword {w!r} has no word characters")

    for s in rules.systems:
        if not s.organ_keywords:
            rep.errors.append(f"{s.id}: empty organ keyword set")
        expected = DISEASES.get(s.id)
        got = tuple(c.id for c in s.classes)
        if expected is not None and got != expected:
            rep.errors.append(f"{s.id}: classes {list(got)} do not match required {list(expected)}")
        owner: dict[tuple[str, ...], str] = {}
        for c in s.classes:
            if not c.groups:
                rep.errors.append(f"{s.id}.{c.id}: no keyword groups")
            for g in c.groups:
                if not g.keywords:
                    rep.errors.append(f"{s.id}.{c.id}.{g.name}: empty keyword group")
                for k in g.keywords:
                    toks = keyword_tokens(k)
                    if not toks:
                        rep.errors.append(f"{s.id}.{c.id}: keyword {k!r} has no word characters")
                        continue
                    prev = owner.get(toks)
                    if prev is not None and prev != c.id:
                        rep.errors.append(f"{s.id}: keyword {k!r} collides between classes {prev} and {c.id}")
                    owner[toks] = c.id
                    if toks in negs:
                        rep.errors.append(f"{s.id}.{c.id}: keyword {k!r} collides with negation keyword")
                    else:
                        inner = [single_negs[t] for t in toks if t in single_negs]
                        if inner:
                            rep.errors.append(f"{s.id}.{c.id}: keyword {k!r} contains negation keyword {inner[0]!r}")
        for k in s.organ_keywords + s.blocklist + s.blocklist_organ_specific:
            if not keyword_tokens(k):
                rep.errors.append(f"{s.id}: keyword {k!r} has no word characters")
        for k in s.blocklist + s.blocklist_organ_specific:
            cls = owner.get(keyword_tokens(k))
            if cls is not None:
                rep.errors.append(f"{s.id}: blocklist keyword {k!r} is also a keyword of class {cls}")
    return rep
