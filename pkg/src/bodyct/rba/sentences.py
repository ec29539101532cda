"""Sentence splitting tuned for radiology findings.

A period, ``!`` or ``?`` ends a sentence when followed by whitespace or the
end of text, with these exceptions:

* the period sits inside a number (``1.2``) - never followed by whitespace,
  so it is skipped naturally;
* the word before the period is a title or Latin abbreviation (``Dr.``,
  ``e.g.``) - never a boundary;
* the word is a unit abbreviation (``cm.``, ``mm.``) - a boundary only when
  the next word starts with an uppercase letter;
* the token is a bare list number (``1.``) opening a sentence.

A line break directly followed by a list number also starts a new sentence.
"""

from __future__ import annotations

import re

TITLE_ABBREVIATIONS = frozenset(
    {"dr", "drs", "mr", "mrs", "ms", "prof", "st", "e.g", "i.e", "eg", "ie", "vs", "approx", "cf", "fig", "no"}
)
UNIT_ABBREVIATIONS = frozenset({"cm", "mm", "ml", "cc", "hu", "sec", "min", "in", "ft", "mg", "kg"})

_TERMINAL = re.compile(r"[.!?]+(?=\s|$)")
_LIST_BREAK = re.compile(r"\n[ \t]*(?=\d{1,2}[.)]\s)")
_WORD_BEFORE = re.compile(r"([A-Za-z][A-Za-z.]*|\d+)$")
_NEXT_WORD = re.compile(r"\s*(\S)")


def _is_boundary(text: str, start: int, end: int, sent_start: int) -> bool:
    """Decide whether the punctuation run text[start:end] closes a sentence."""
    if text[start:end] != ".":
        return True
    m = _WORD_BEFORE.search(text, sent_start, start)
    if m is None:
        return True
    word = m.group(1)
    low = word.lower()
    if word.isdigit():
        # "1." at the head of a sentence is a list marker
        return text[sent_start:m.start()].strip() != ""
    if low in TITLE_ABBREVIATIONS and not (low == "no" and _next_is_upper(text, end)):
        return False
    if low in UNIT_ABBREVIATIONS:
        return _next_is_upper(text, end)
    return True


def _next_is_upper(text: str, pos: int) -> bool:
    m = _NEXT_WORD.match(text, pos)
    return m is None or m.group(1).isupper()


def sentence_spans(text: str) -> list[tuple[int, int]]:
    """Character spans of each sentence, whitespace-trimmed, in order."""
    spans = []
    cuts = []
    sent_start = 0
    breaks = {m.start() for m in _LIST_BREAK.finditer(text)}
    pos = 0
    while True:
        m = _TERMINAL.search(text, pos)
        stop = m.start() if m else len(text)
        nxt = min((b for b in breaks if sent_start < b < stop), default=None)
        if nxt is not None:
            cuts.append((sent_start, nxt))
            sent_start = nxt
            pos = nxt
            continue
        if m is None:
            break
        if _is_boundary(text, m.start(), m.end(), sent_start):
            cuts.append((sent_start, m.end()))
            sent_start = m.end()
        pos = m.end()
    cuts.append((sent_start, len(text)))
    for a, b in cuts:
        while a < b and text[a].isspace():
            a += 1
        while b > a and text[b - 1].isspace():
            b -= 1
        if a < b:
            spans.append((a, b))
    return spans


def tokenize_sentences(text: str) -> list[str]:
    return [text[a:b] for a, b in sentence_spans(text)]
