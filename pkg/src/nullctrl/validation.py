"""Report objects returned by the hypothesis and class-membership checks.

Checks never raise on failure; they append an entry and keep going so a
single call reports every violated relation at once.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any


@dataclass
class Check:
    name: str
    passed: bool
    detail: dict[str, Any] = field(default_factory=dict)
    witness: Any = None

    def to_dict(self) -> dict[str, Any]:
        out = {"name": self.name, "passed": bool(self.passed), "detail": self.detail}
        if self.witness is not None:
            out["witness"] = self.witness
        return out


@dataclass
class ValidationReport:
    title: str
    checks: list[Check] = field(default_factory=list)

    def add(self, name: str, passed: bool, witness: Any = None, **detail: Any) -> Check:
        chk = Check(name, bool(passed), detail, witness)
        self.checks.append(chk)
        return chk

    def extend(self, other: "ValidationReport", prefix: str = "") -> None:
        for chk in other.checks:
            self.checks.append(Check(prefix + chk.name, chk.passed, chk.detail, chk.witness))

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> Check:
        for chk in self.checks:
            if chk.name == name:
                return chk
        raise KeyError(name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "title": self.title,
            "ok": self.ok,
            "checks": [c.to_dict() for c in self.checks],
        }

    def summary(self) -> str:
        lines = [f"{self.title}: {'PASS' if self.ok else 'FAIL'}"]
        for c in self.checks:
            lines.append(f"  [{'ok' if c.passed else '!!'}] {c.name}")
        return "\n".join(lines)
