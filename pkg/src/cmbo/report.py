"""Structured validation-run records, serializable to tidy CSV.

A DiagnosticsReport collects named scalar results, per-sample rows, and
pass/fail checks for one validation run.  Every emitted CSV carries a header
row and a manifest reference column so outputs can be traced to the run that
produced them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

__all__ = ["DiagnosticsReport"]

_OPS = {
    "<=": lambda v, t: v <= t,
    ">=": lambda v, t: v >= t,
    "<": lambda v, t: v < t,
    ">": lambda v, t: v > t,
}


@dataclass
class DiagnosticsReport:
    """Errors, fitted constants and convergence ratios of one validation run."""

    name: str
    scalars: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    checks: list = field(default_factory=list)

    def record(self, **scalars) -> "DiagnosticsReport":
        self.scalars.update(scalars)
        return self

    def add_row(self, **row) -> None:
        self.rows.append(dict(row))

    def check(self, label: str, value: float, op: str, threshold: float) -> bool:
        """Record a pass/fail comparison; returns whether it passed."""
        ok = bool(_OPS[op](value, threshold))
        self.checks.append(
            {"label": label, "value": float(value), "op": op, "threshold": float(threshold), "passed": ok}
        )
        return ok

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def failures(self) -> list[str]:
        return [
            f"{c['label']}: {c['value']:.6g} {c['op']} {c['threshold']:.6g} FAILED"
            for c in self.checks
            if not c["passed"]
        ]

    def summary_lines(self) -> list[str]:
        out = []
        for c in self.checks:
            status = "pass" if c["passed"] else "FAIL"
            out.append(
                f"[{status}] {self.name}/{c['label']}: {c['value']:.6g} {c['op']} {c['threshold']:.6g}"
            )
        return out

    def to_csv(self, path, manifest: str = "") -> None:
        """One section of scalars, one of checks, then the per-sample rows."""
        with open(path, "w") as fh:
            fh.write("section,key,value,op,threshold,passed,manifest\n")
            for k in sorted(self.scalars):
                fh.write(f"scalar,{k},{self.scalars[k]:.17g},,,,{manifest}\n")
            for c in self.checks:
                fh.write(
                    f"check,{c['label']},{c['value']:.17g},{c['op']},"
                    f"{c['threshold']:.17g},{c['passed']},{manifest}\n"
                )
        if self.rows:
            keys = sorted({k for r in self.rows for k in r})
            rows_path = str(path)
            rows_path = rows_path[:-4] + "_rows.csv" if rows_path.endswith(".csv") else rows_path + "_rows.csv"
            with open(rows_path, "w") as fh:
                fh.write(",".join(keys) + ",manifest\n")
                for r in self.rows:
                    fh.write(",".join(_fmt(r.get(k, "")) for k in keys) + f",{manifest}\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)
