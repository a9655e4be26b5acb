"""Side-by-side summaries of probe reports and their directional checks."""

# Copyright (c) MSP Pretrain Development Team.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import os
import typing as t
from dataclasses import dataclass, field

from msp_pretrain.exceptions import EmptyInputError
from msp_pretrain.fileio import atomic_writing

from .leakage import LeakageReport
from .linear import ProbeResult

SUMMARY_HEADER = "report,kind,key,value,delta"

Report = t.Union[ProbeResult, LeakageReport]


@dataclass(frozen=True)
class SummaryRow:
    report: int
    kind: str
    key: str
    value: float
    delta: float


@dataclass(frozen=True)
class DirectionalCheck:
    name: str
    observed: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.observed >= self.threshold


@dataclass
class Comparison:
    rows: list[SummaryRow] = field(default_factory=list)
    checks: list[DirectionalCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_csv(self) -> str:
        lines = [SUMMARY_HEADER]
        lines += [f"{r.report},{r.kind},{r.key},{r.value!r},{r.delta!r}" for r in self.rows]
        return "\n".join(lines) + "\n"

    def write_csv(self, path: str | os.PathLike[str], log=None) -> None:
        with atomic_writing(os.fspath(path), log=log) as f:
            f.write(self.to_csv())

    def to_text(self) -> str:
        """An aligned table of the rows, then one line per check."""
        header = ("#", "kind", "key", "value", "delta")
        cells = [header] + [
            (str(r.report), r.kind, r.key, f"{r.value:.4f}", f"{r.delta:+.4f}") for r in self.rows
        ]
        widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
        for check in self.checks:
            status = "PASS" if check.passed else "FAIL"
            lines.append(f"{status} {check.name}: {check.observed:+.4f} (needs >= {check.threshold:+.4f})")
        return "\n".join(lines) + "\n"


def _rows_of(report: Report) -> list[tuple[str, str, float]]:
    if isinstance(report, ProbeResult):
        return [("probe", report.arm, report.overall_acc)]
    return [("leakage", f"f={row.keep_fraction:g}", row.mean_recall) for row in report.rows]


def compare_runs(
    reports: t.Sequence[Report],
    accuracy_margin: float = 0.03,
    leakage_margin: float = 0.05,
) -> Comparison:
    """Tabulate ``reports`` and evaluate the directional checks that apply.

    Deltas are against the first report of the same kind and key (for probe
    rows, the first probe report). Checks:

    - probe: mean pretrained accuracy minus mean scratch accuracy is at
      least ``accuracy_margin``, when both arms are present;
    - leakage: recall drops by at least ``leakage_margin`` at every step to
      a sparser keep fraction, per leakage report.
    """
    if not reports:
        msg = "compare needs at least one report"
        raise EmptyInputError(msg)
    out = Comparison()
    baselines: dict[tuple[str, str], float] = {}
    for i, report in enumerate(reports):
        for kind, key, value in _rows_of(report):
            base_key = (kind, "") if kind == "probe" else (kind, key)
            base = baselines.setdefault(base_key, value)
            out.rows.append(SummaryRow(i, kind, key, value, value - base))

    probes = [r for r in reports if isinstance(r, ProbeResult)]
    by_arm: dict[str, list[float]] = {}
    for p in probes:
        by_arm.setdefault(p.arm, []).append(p.overall_acc)
    if "pretrained" in by_arm and "scratch" in by_arm:
        gain = sum(by_arm["pretrained"]) / len(by_arm["pretrained"]) - sum(by_arm["scratch"]) / len(
            by_arm["scratch"]
        )
        out.checks.append(DirectionalCheck("pretrained beats scratch", gain, accuracy_margin))

    for i, report in enumerate(reports):
        if isinstance(report, LeakageReport):
            for hi, lo, drop in report.drops():
                out.checks.append(
                    DirectionalCheck(f"report {i} recall drop f={hi:g} -> f={lo:g}", drop, leakage_margin)
                )
    return out
