from bodyct.rba.dictionary import (
    DictionaryError,
    RuleDictionary,
    ValidationReport,
    dumps,
    load,
    load_default,
    loads,
    validate_dictionary,
)
from bodyct.rba.engine import (
    LabelSet,
    SentenceMatch,
    SystemLabels,
    decide_sentence,
    label_corpus,
    label_report,
    match_sentence,
)
from bodyct.rba.sentences import sentence_spans, tokenize_sentences

__all__ = [
    "DictionaryError",
    "LabelSet",
    "RuleDictionary",
    "SentenceMatch",
    "SystemLabels",
    "ValidationReport",
    "decide_sentence",
    "dumps",
    "label_corpus",
    "label_report",
    "load",
    "load_default",
    "loads",
    "match_sentence",
    "sentence_spans",
    "tokenize_sentences",
    "validate_dictionary",
]
