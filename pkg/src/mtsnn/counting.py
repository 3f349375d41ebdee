"""Exact scalar-operation counting for numerical kernels.

A single counting scope may be active per process.  While active, every
instrumented kernel reports the number of scalar multiplications, additions
and comparisons it performs, attributed to a tag.  The tag is either the
label installed with :func:`tag` (innermost wins) or the kernel's own op
name.  Counts are exact integers derived from the arithmetic definition of
each kernel; divisions count as multiplications (multiply by reciprocal)
and transcendental calls (exp, log, sqrt) are not counted.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass


@dataclass
class TagCounts:
    multiplications: int = 0
    additions: int = 0
    comparisons: int = 0

    def __add__(self, other: "TagCounts") -> "TagCounts":
        return TagCounts(
            self.multiplications + other.multiplications,
            self.additions + other.additions,
            self.comparisons + other.comparisons,
        )


class OpCounts:
    """Per-tag operation counts collected by one counting scope."""

    def __init__(self) -> None:
        self.by_tag: dict[str, TagCounts] = {}

    def add(self, op_tag: str, mults: int = 0, adds: int = 0, cmps: int = 0) -> None:
        entry = self.by_tag.setdefault(op_tag, TagCounts())
        entry.multiplications += int(mults)
        entry.additions += int(adds)
        entry.comparisons += int(cmps)

    def total(self) -> TagCounts:
        out = TagCounts()
        for entry in self.by_tag.values():
            out = out + entry
        return out

    def __add__(self, other: "OpCounts") -> "OpCounts":
        merged = OpCounts()
        for src in (self, other):
            for name, entry in src.by_tag.items():
                merged.add(name, entry.multiplications, entry.additions, entry.comparisons)
        return merged

    def as_dict(self) -> dict[str, dict[str, int]]:
        return {
            name: {
                "multiplications": entry.multiplications,
                "additions": entry.additions,
                "comparisons": entry.comparisons,
            }
            for name, entry in sorted(self.by_tag.items())
        }


_active: OpCounts | None = None
_label: str | None = None


@contextmanager
def op_counter():
    """Open a counting scope and yield its :class:`OpCounts`.

    Scopes cannot be nested; sequential scopes are independent and their
    counts are additive via ``OpCounts.__add__``.
    """
    global _active
    if _active is not None:
        raise RuntimeError("op_counter scopes cannot be nested")
    counts = OpCounts()
    _active = counts
    try:
        yield counts
    finally:
        _active = None


@contextmanager
def tag(label: str):
    """Attribute counts recorded inside this context to `label`."""
    global _label
    prev = _label
    _label = label
    try:
        yield
    finally:
        _label = prev


def record(op_tag: str, *, mults: int = 0, adds: int = 0, cmps: int = 0) -> None:
    """Report counts from a kernel; no-op when no scope is active."""
    if _active is None:
        return
    _active.add(_label if _label is not None else op_tag, mults, adds, cmps)


def counting_active() -> bool:
    return _active is not None
