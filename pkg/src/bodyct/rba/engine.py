"""Sentence-level keyword matching and report-level label aggregation."""

from __future__ import annotations

import re
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from bodyct.corpus import Report, extract_findings, protocol_filter, KEPT
from bodyct.rba.dictionary import (
    DictionaryError,
    RuleDictionary,
    keyword_tokens,
    validate_dictionary,
)
from bodyct.rba.sentences import tokenize_sentences
from bodyct.systems import NORMAL, SYSTEMS

POSITIVE = "positive"
NEGATED = "negated"
ABSENT = "absent"

HAS_FINDINGS = "has_findings"
NO_APPARENT_DISEASE = "no_apparent_disease"
UNCERTAIN = "uncertain"

_WORD = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class Hit:
    keyword: str
    start: int  # token index, inclusive
    end: int  # token index, exclusive
    class_id: str | None = None
    group: str | None = None
    organ_specific: bool = False


@dataclass
class SentenceMatch:
    index: int
    text: str
    organ_hits: list[Hit] = field(default_factory=list)
    disease_hits: list[Hit] = field(default_factory=list)
    negation_hits: list[Hit] = field(default_factory=list)
    uncertainty_hits: list[Hit] = field(default_factory=list)
    blocklist_hits: list[Hit] = field(default_factory=list)
    pseudo_negation_hits: list[Hit] = field(default_factory=list)
    suppressed_negation_hits: list[Hit] = field(default_factory=list)

    @property
    def mentions_system(self) -> bool:
        return bool(self.organ_hits) or any(
            h.organ_specific for h in self.disease_hits + self.blocklist_hits
        )

    def localized(self, hit: Hit) -> bool:
        return hit.organ_specific or bool(self.organ_hits)


class _Matcher:
    """Token-sequence index over one organ system's keywords."""

    def __init__(self, rules: RuleDictionary, system_id: str):
        s = rules.system(system_id)
        self.class_order = tuple(c.id for c in s.classes)
        self.index: dict[str, list] = defaultdict(list)

        def add(kind, words, **extra):
            for w in words:
                toks = keyword_tokens(w)
                self.index[toks[0]].append((toks, kind, Hit(w, 0, 0, **extra)))

        add("organ", s.organ_keywords)
        for c in s.classes:
            for g in c.groups:
                add("disease", g.keywords, class_id=c.id, group=g.name, organ_specific=g.organ_specific)
        add("blocklist", s.blocklist)
        add("blocklist", s.blocklist_organ_specific, organ_specific=True)
        add("negation", rules.negation)
        add("uncertainty", rules.uncertainty)
        add("pseudo", rules.pseudo_negation)

    def match(self, sentence: str, index: int = 0) -> SentenceMatch:
        toks = _WORD.findall(sentence.lower())
        m = SentenceMatch(index=index, text=sentence)
        pseudo_spans = []
        negs = []
        for i, tok in enumerate(toks):
            for ktoks, kind, proto in self.index.get(tok, ()):
                n = len(ktoks)
                if tuple(toks[i:i + n]) != ktoks:
                    continue
                hit = Hit(proto.keyword, i, i + n, proto.class_id, proto.group, proto.organ_specific)
                if kind == "organ":
                    m.organ_hits.append(hit)
                elif kind == "disease":
                    m.disease_hits.append(hit)
                elif kind == "blocklist":
                    m.blocklist_hits.append(hit)
                elif kind == "uncertainty":
                    m.uncertainty_hits.append(hit)
                elif kind == "pseudo":
                    m.pseudo_negation_hits.append(hit)
                    pseudo_spans.append((i, i + n))
                else:
                    negs.append(hit)
        for h in negs:
            # "no" inside "no interval change" is not a negation
            if any(a <= h.start and h.end <= b for a, b in pseudo_spans):
                m.suppressed_negation_hits.append(h)
            else:
                m.negation_hits.append(h)
        return m


_MATCHERS: dict[tuple[int, str], tuple[RuleDictionary, _Matcher]] = {}


def _matcher(rules: RuleDictionary, system_id: str) -> _Matcher:
    # keyed by identity: hashing the whole dictionary per sentence is too slow
    key = (id(rules), system_id)
    hit = _MATCHERS.get(key)
    if hit is None or hit[0] is not rules:
        hit = (rules, _Matcher(rules, system_id))
        _MATCHERS[key] = hit
    return hit[1]


def match_sentence(sentence: str, rules: RuleDictionary, system: str, index: int = 0) -> SentenceMatch:
    return _matcher(rules, system).match(sentence, index)


def decide_sentence(match: SentenceMatch, class_order: Sequence[str]) -> dict[str, str]:
    """Vote per class: positive, negated or absent.

    A class needs a disease hit that is localized (organ keyword in the
    sentence, or an organ-specific keyword). Any negation in the sentence
    makes the vote ``negated``; otherwise any uncertainty makes it ``absent``.
    """
    votes = {c: ABSENT for c in class_order}
    for h in match.disease_hits:
        if not match.localized(h):
            continue
        if match.negation_hits:
            if votes[h.class_id] != POSITIVE:
                votes[h.class_id] = NEGATED
        elif not match.uncertainty_hits:
            votes[h.class_id] = POSITIVE
    return votes


def sentence_vetoes(match: SentenceMatch) -> list[tuple[str, Hit]]:
    """Reasons this sentence forbids "no apparent disease" for its system.

    Un-negated localized blocklist terms veto, and so does a localized disease
    mention that is only uncertain (the system is then neither clearly normal
    nor clearly positive).
    """
    if match.negation_hits:
        return []
    out = [("blocklist", h) for h in match.blocklist_hits if match.localized(h)]
    if match.uncertainty_hits:
        out += [("uncertain", h) for h in match.disease_hits if match.localized(h)]
    return out


@dataclass(frozen=True)
class Evidence:
    label: str
    role: str  # positive, negated, blocklist, uncertain, organ
    sentence: int
    keyword: str

    def pointer(self) -> str:
        return f"{self.label}:{self.role}@s{self.sentence}:{self.keyword}"


@dataclass
class SystemLabels:
    system: str
    decisions: dict[str, bool]  # disease class -> positive?
    status: str
    evidence: list[Evidence] = field(default_factory=list)

    @property
    def no_apparent_disease(self) -> bool:
        return self.status == NO_APPARENT_DISEASE

    @property
    def usable(self) -> bool:
        if self.status == NO_APPARENT_DISEASE:
            return True
        return self.status == HAS_FINDINGS and any(self.decisions.values())

    def label_values(self) -> dict[str, int]:
        out = {c: int(v) for c, v in self.decisions.items()}
        out[NORMAL] = int(self.no_apparent_disease)
        return out


@dataclass
class LabelSet:
    report_id: str
    patient_id: str
    systems: dict[str, SystemLabels]
    sentences: list[str] = field(default_factory=list)

    @property
    def unusable(self) -> bool:
        return not any(s.usable for s in self.systems.values())


def label_sentences(sentences: Sequence[str], rules: RuleDictionary, system: str) -> SystemLabels:
    matcher = _matcher(rules, system)
    classes = matcher.class_order
    positive = {c: False for c in classes}
    evidence: list[Evidence] = []
    mentioned = False
    vetoed = False
    for i, sent in enumerate(sentences):
        m = matcher.match(sent, i)
        if m.mentions_system:
            mentioned = True
        votes = decide_sentence(m, classes)
        for h in m.disease_hits:
            v = votes[h.class_id]
            if v != ABSENT and m.localized(h):
                evidence.append(Evidence(h.class_id, v, i, h.keyword))
                if v == POSITIVE:
                    positive[h.class_id] = True
        for role, h in sentence_vetoes(m):
            vetoed = True
            evidence.append(Evidence(NORMAL, role, i, h.keyword))
        if m.organ_hits and not m.disease_hits and not m.blocklist_hits:
            evidence.append(Evidence(NORMAL, "organ", i, m.organ_hits[0].keyword))
    if not mentioned:
        status = UNCERTAIN
    elif any(positive.values()) or vetoed:
        status = HAS_FINDINGS
    else:
        status = NO_APPARENT_DISEASE
    return SystemLabels(system, positive, status, evidence)


def label_report(
    report: Report,
    rules: RuleDictionary,
    systems: Sequence[str] = SYSTEMS,
) -> LabelSet:
    sentences = tokenize_sentences(report.findings)
    per = {s: label_sentences(sentences, rules, s) for s in systems}
    return LabelSet(report.report_id, report.patient_id, per, sentences)


@dataclass
class LabelingResult:
    labelsets: list[LabelSet]
    errors: list[str]


def require_valid(rules: RuleDictionary) -> None:
    report = validate_dictionary(rules)
    if not report.ok:
        raise DictionaryError("invalid dictionary:\n  " + "\n  ".join(report.errors))


def label_corpus(
    reports: Iterable[Report],
    rules: RuleDictionary,
    eligible: dict[str, Sequence[str]] | None = None,
    jobs: int = 1,
) -> LabelingResult:
    """Label every report; per-report failures are collected, not raised.

    ``eligible`` restricts each report to the organ systems that survived
    filtering. Without it the protocol filter is applied here.
    """
    require_valid(rules)
    reports = list(reports)

    def one(rep: Report):
        try:
            if not rep.findings:
                rep = extract_findings(rep)
            if eligible is not None:
                systems = tuple(eligible.get(rep.report_id, ()))
            else:
                systems = tuple(s for s in SYSTEMS if protocol_filter(rep, s).disposition == KEPT)
            return label_report(rep, rules, systems), None
        except Exception as exc:  # noqa: BLE001 - a bad report must not abort the batch
            return None, f"{rep.report_id}: {type(exc).__name__}: {exc}"

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, reports))
    else:
        results = [one(r) for r in reports]
    labelsets = [ls for ls, _ in results if ls is not None]
    errors = [e for _, e in results if e is not None]
    return LabelingResult(labelsets, errors)
