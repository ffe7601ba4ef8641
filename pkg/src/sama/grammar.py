"""Closed instruction grammar and word-level tokenizer.

The vocabulary is read from ``data/instruction_grammar_v1.txt`` so the text
shipped with the package is the single source of truth.
"""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

TOKEN_RE = re.compile(r"[a-z]+|[\[\].\-]")
BOS = "<bos>"

TASK_TOKENS = {
    "cube_inpaint": "[Complete the missing regions in the video.]",
    "speed_perturb": "[Restore the video to normal playback speed.]",
    "tube_shuffle": "[Restore the correct spatio-temporal order of the video segments.]",
}


class VocabularyError(KeyError):
    """A word outside the closed grammar vocabulary."""


class GrammarError(ValueError):
    """A token sequence that is not a sentence of the grammar."""


def tokenize(text: str) -> list[str]:
    return TOKEN_RE.findall(text.lower())


@lru_cache(maxsize=None)
def _grammar() -> tuple[int, dict[str, tuple[str, ...]], tuple[str, ...]]:
    text = resources.files("sama").joinpath("data/instruction_grammar_v1.txt").read_text()
    version = None
    classes: dict[str, tuple[str, ...]] = {}
    literals: set[str] = set()
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("version"):
            version = int(line.split()[1])
        elif line.startswith("terminals"):
            name, words = line[len("terminals"):].split(":", 1)
            classes[name.strip()] = tuple(words.split())
        for lit in re.findall(r'"([^"]*)"', line):
            literals.update(tokenize(lit))
    if version is None:
        raise GrammarError("grammar file lacks a version line")
    words = set(literals)
    for ws in classes.values():
        words.update(ws)
    vocab = (BOS,) + tuple(sorted(words))
    return version, classes, vocab


def grammar_version() -> int:
    return _grammar()[0]


def word_class(name: str) -> tuple[str, ...]:
    return _grammar()[1][name]


def vocabulary() -> tuple[str, ...]:
    return _grammar()[2]


def vocab_size() -> int:
    return len(vocabulary())


@lru_cache(maxsize=None)
def _index() -> dict[str, int]:
    return {w: i for i, w in enumerate(vocabulary())}


def encode(text: str) -> list[int]:
    """Token ids for ``text`` with ``<bos>`` prepended."""
    idx = _index()
    ids = [idx[BOS]]
    for w in tokenize(text):
        if w not in idx:
            raise VocabularyError(f"word {w!r} is not in the instruction vocabulary")
        ids.append(idx[w])
    return ids


# ------------------------------------------------------------------ parsing


class _Parser:
    def __init__(self, toks: list[str]):
        self.toks = toks
        self.i = 0
        _, self.classes, _ = _grammar()

    def peek(self, k: int = 0):
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else None

    def lit(self, *words: str) -> bool:
        if self.toks[self.i:self.i + len(words)] == list(words):
            self.i += len(words)
            return True
        return False

    def cls(self, name: str) -> bool:
        if self.peek() in self.classes[name]:
            self.i += 1
            return True
        return False

    def try_(self, fn) -> bool:
        save = self.i
        if fn():
            return True
        self.i = save
        return False

    # productions
    def motion(self):
        return (self.lit("moves") and self.cls("DIR")) or self.lit("stays", "still")

    def obj(self):
        return self.lit("a") and self.cls("COLOR") and self.cls("SHAPE") and self.motion()

    def caption(self):
        if self.lit("an", "empty", "scene"):
            return True
        if not self.try_(self.obj):
            return False
        while True:
            save = self.i
            if not (self.lit("and") and self.obj()):
                self.i = save
                return True

    def recolor(self):
        return (self.lit("change", "the") and self.cls("COLOR") and self.cls("SHAPE")
                and self.lit("to") and self.cls("COLOR"))

    def remove(self):
        return self.lit("remove", "the") and self.cls("COLOR") and self.cls("SHAPE")

    def add(self):
        return self.lit("add", "a") and self.cls("COLOR") and self.cls("SHAPE")

    def style(self):
        return self.lit("invert", "the", "colors", "of", "the") and self.cls("MEDIUM")

    def task(self):
        for tok in TASK_TOKENS.values():
            if self.lit(*tokenize(tok)):
                return True
        return False

    def prompt(self):
        self.try_(self.task)
        if self.i == len(self.toks):
            return True
        start = self.i
        for body in (self.caption, self.recolor, self.remove, self.add, self.style):
            if self.try_(body) and self.i == len(self.toks):
                return True
            self.i = start
        return False


def parses(text: str) -> bool:
    """True iff ``text`` is a sentence of the instruction grammar."""
    return _Parser(tokenize(text)).prompt()
