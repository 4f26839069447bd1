"""Check records and report serialization (JSON, CSV, text)."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

CSV_COLUMNS = ("check", "anchor", "value", "reference", "residual", "tol", "pass")


def _num(x):
    if x is None:
        return None
    if isinstance(x, complex):
        x = abs(x)
    x = float(x)
    return x if math.isfinite(x) else repr(x)


@dataclass
class Check:
    """One verified claim: computed value, reference, residual against a tolerance.

    ``mode`` is ``"max"`` (pass when residual <= tol) or ``"min"`` (pass when
    residual >= tol, used for lower bounds such as eigenvalue floors).
    """

    check: str
    anchor: str
    value: float | None
    reference: float | None
    residual: float
    tol: float
    mode: str = "max"
    passed: bool = field(init=False)

    def __post_init__(self):
        self.value = _num(self.value)
        self.reference = _num(self.reference)
        self.residual = _num(self.residual)
        self.tol = float(self.tol)
        r = self.residual
        if not isinstance(r, float):
            self.passed = False
        elif self.mode == "max":
            self.passed = bool(r <= self.tol)
        elif self.mode == "min":
            self.passed = bool(r >= self.tol)
        else:
            raise ValueError(f"unknown check mode {self.mode!r}")

    @classmethod
    def boolean(cls, check: str, anchor: str, ok: bool, value=None, reference=None) -> "Check":
        """Pass/fail claim recorded with residual 0 (pass) or 1 (fail) against tol 0.5."""
        return cls(check, anchor, value, reference, 0.0 if ok else 1.0, 0.5)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Check":
        out = cls(d["check"], d["anchor"], d["value"], d["reference"], d["residual"], d["tol"],
                  d.get("mode", "max"))
        if out.passed != d["pass"]:
            raise ValueError(f"record {d['check']!r} has an inconsistent pass flag")
        return out


@dataclass
class Report:
    suite: str
    seed: int
    checks: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)

    def add(self, check: Check) -> Check:
        self.checks.append(check)
        return check

    def extend(self, checks) -> None:
        self.checks.extend(checks)

    @property
    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> dict:
        return {"total": len(self.checks), "passed": len(self.checks) - len(self.failures),
                "failed": len(self.failures)}

    def to_dict(self) -> dict:
        return {"suite": self.suite, "seed": self.seed, "summary": self.summary(),
                "checks": [c.to_dict() for c in self.checks], "artifacts": self.artifacts}

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        return cls(d["suite"], int(d["seed"]), [Check.from_dict(c) for c in d["checks"]],
                   d.get("artifacts", {}))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Report":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for c in self.checks:
            w.writerow([c.check, c.anchor, _fmt(c.value), _fmt(c.reference), _fmt(c.residual),
                        _fmt(c.tol), "true" if c.passed else "false"])
        return buf.getvalue()

    def to_text(self) -> str:
        s = self.summary()
        lines = [f"suite {self.suite} (seed {self.seed}): {s['passed']}/{s['total']} passed"]
        for c in self.checks:
            cmp = ">=" if c.mode == "min" else "<="
            lines.append(f"  [{'PASS' if c.passed else 'FAIL'}] {c.check}: residual {_fmt(c.residual)} "
                         f"{cmp} {_fmt(c.tol)}  ({c.anchor})")
        return "\n".join(lines) + "\n"

    def render(self, fmt: str) -> str:
        if fmt == "json":
            return self.to_json()
        if fmt == "csv":
            return self.to_csv()
        if fmt == "text":
            return self.to_text()
        raise ValueError(f"unknown format {fmt!r}")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def emit(report: Report, path, fmt: str = "json") -> Path:
    """Write ``report`` to ``path``; raises ``OSError`` for an unwritable path."""
    path = Path(path)
    text = report.render(fmt)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc.strerror or exc}") from exc
    return path


def merge(reports) -> Report:
    """Concatenate reports ordered by suite name."""
    reports = sorted(reports, key=lambda r: r.suite)
    out = Report("all", reports[0].seed if reports else 0)
    for r in reports:
        for c in r.checks:
            d = c.to_dict()
            d["check"] = f"{r.suite}/{c.check}"
            out.checks.append(Check.from_dict(d))
        for k, v in r.artifacts.items():
            out.artifacts[f"{r.suite}/{k}"] = v
    return out
