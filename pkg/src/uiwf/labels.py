"""Three-level chain labels (software -> view -> context) and their registry.

Class identity is the exact display string, case-sensitive: the manifest is
human-edited and any mismatch must fail loudly rather than be normalized away.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable

LEVELS = ("s", "sv", "svc")


class UnknownClassError(ValueError):
    """Raised when a (software, view) pair is not in the registry."""


class UnknownLevelError(ValueError):
    """Raised for a hierarchy level outside {s, sv, svc}."""


class ContextValue(enum.Enum):
    MENU = "Menu"
    SELECTED_TEXT = "SelectedText"
    NONE = "None"

    @classmethod
    def from_string(cls, s: str) -> "ContextValue":
        for v in cls:
            if v.value == s:
                return v
        raise ValueError(f"unknown context value: {s!r}")

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class ChainLabel:
    """A validated software/view/context triple."""

    software: str
    view: str
    context: ContextValue

    def key(self, level: str):
        return project(self, level)


def project(label: ChainLabel, level: str):
    """Truncate a chain label to the requested hierarchy level.

    Returns the software string for level "s", a (software, view) tuple for
    "sv" and the full (software, view, context) triple for "svc".
    """
    if level == "s":
        return label.software
    if level == "sv":
        return (label.software, label.view)
    if level == "svc":
        return (label.software, label.view, label.context)
    raise UnknownLevelError(f"unknown hierarchy level: {level!r}")


class LabelRegistry:
    """Registry of valid (software, view) pairs.

    The registry is data, not code: it is loaded from a UTF-8 text file with
    one ``software<TAB>view`` pair per line. Context values are appended
    programmatically, so the svc level always has 3x the sv cardinality.
    """

    def __init__(self, pairs: Iterable[tuple[str, str]]):
        self._pairs: list[tuple[str, str]] = []
        seen = set()
        for software, view in pairs:
            if (software, view) in seen:
                continue
            seen.add((software, view))
            self._pairs.append((software, view))
        self._pair_set = seen
        self._software: list[str] = []
        for software, _ in self._pairs:
            if software not in self._software:
                self._software.append(software)

    @classmethod
    def from_file(cls, path: str | Path) -> "LabelRegistry":
        pairs = []
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(
                    f"{path}:{lineno}: expected 'software<TAB>view', got {line!r}"
                )
            pairs.append((parts[0], parts[1]))
        return cls(pairs)

    @classmethod
    def default(cls) -> "LabelRegistry":
        ref = resources.files("uiwf.data") / "default_registry.txt"
        with resources.as_file(ref) as path:
            return cls.from_file(path)

    @property
    def software_classes(self) -> list[str]:
        return list(self._software)

    @property
    def sv_pairs(self) -> list[tuple[str, str]]:
        return list(self._pairs)

    @property
    def svc_triples(self) -> list[tuple[str, str, ContextValue]]:
        return [(s, v, c) for (s, v) in self._pairs for c in ContextValue]

    def num_classes(self, level: str) -> int:
        if level == "s":
            return len(self._software)
        if level == "sv":
            return len(self._pairs)
        if level == "svc":
            return 3 * len(self._pairs)
        raise UnknownLevelError(f"unknown hierarchy level: {level!r}")

    def contains(self, software: str, view: str) -> bool:
        return (software, view) in self._pair_set

    def validate(self, label: ChainLabel) -> ChainLabel:
        if not self.contains(label.software, label.view):
            raise UnknownClassError(
                f"unregistered software/view pair: ({label.software!r}, {label.view!r})"
            )
        return label


def validate(label: ChainLabel, registry: LabelRegistry) -> ChainLabel:
    return registry.validate(label)
