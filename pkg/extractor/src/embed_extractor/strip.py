"""Leading-boilerplate stripping for the text side.

Same documented rule the analysis tooling uses: remove the longest
matching leading phrase among "I hear the sound of" / "I hear that" /
"I hear", once, case-insensitively, requiring a word boundary after the
phrase, then trim leading whitespace.
"""
from __future__ import annotations

STRIP_PHRASES = ("I hear the sound of", "I hear that", "I hear")


def strip_prefix(sentence: str) -> str:
    lower = sentence.lower()
    for phrase in STRIP_PHRASES:
        p = phrase.lower()
        if lower.startswith(p):
            end = len(p)
            if end < len(sentence) and sentence[end].isalnum():
                continue
            return sentence[end:].lstrip()
    return sentence
