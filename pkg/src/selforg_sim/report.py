# ABOUTME: Run reports: per-fragment criterion series, churn figures and the verdict.
# ABOUTME: Written as JSON-lines records, a plottable CSV summary, or both.

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from selforg_sim.criteria.base import CompositeCriterion, GlobalCriterion, ker_d, ker_t
from selforg_sim.model import Trace, canonical
from selforg_sim.monitors import KernelKind, OrgClass, TraceEvaluation, Verdict

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("fragment_index", "begin_gamma", "end_gamma", "kernel_size", "churn_events")
FORMATS = ("records", "csv-summary", "both")


@dataclass(frozen=True)
class FragmentSummary:
    index: int
    begin_gamma: float
    end_gamma: float
    kernel_size: int
    churn_events: int

    def to_dict(self) -> dict:
        return {
            "fragment_index": self.index,
            "begin_gamma": self.begin_gamma,
            "end_gamma": self.end_gamma,
            "kernel_size": self.kernel_size,
            "churn_events": self.churn_events,
        }


@dataclass
class RunReport:
    """The outcome of one run: verdict, per-fragment series and churn figures.

    gamma_series interleaves begin and end values, two entries per fragment.
    """

    scenario: str
    verdict: Verdict
    fragments: list[FragmentSummary]
    churn_rate: float
    churn_events: int
    events: int
    part_verdicts: dict[str, Verdict] = field(default_factory=dict)
    trace_path: Path | None = None
    notes: dict[str, Any] = field(default_factory=dict)
    demon_promise_kept: bool = True

    @property
    def fragment_count(self) -> int:
        return len(self.fragments)

    @property
    def gamma_series(self) -> list[float]:
        return [v for f in self.fragments for v in (f.begin_gamma, f.end_gamma)]

    @property
    def org_class(self) -> OrgClass:
        """The weakest class over the main verdict and any per-part verdicts.

        A trace the demon was not allowed to produce gets no class at all.
        """
        if not self.demon_promise_kept:
            return OrgClass.NONE
        verdicts = [self.verdict, *self.part_verdicts.values()]
        return min((v.org_class for v in verdicts), key=lambda k: k.rank)

    def meets(self, expected: OrgClass | str) -> bool:
        return self.org_class.rank >= OrgClass(expected).rank


def fragment_summaries(
    t: Trace,
    gc: GlobalCriterion | CompositeCriterion,
    kernel_kind: KernelKind = KernelKind.TOPOLOGICAL,
    evaluation: TraceEvaluation | None = None,
) -> list[FragmentSummary]:
    """Begin/end totals, incoming kernel size and incoming churn count for every fragment.

    The first fragment's kernel is its whole begin configuration.
    """
    ev = evaluation or TraceEvaluation(t, gc)
    summaries = []
    previous_end = 0
    for k, f in enumerate(ev.fragments):
        begin = t.begin(f)
        if k == 0:
            kernel = begin.active if kernel_kind is KernelKind.TOPOLOGICAL else ker_d(begin, begin)
        else:
            end = t.end(ev.fragments[k - 1])
            if kernel_kind is KernelKind.TOPOLOGICAL:
                kernel = ker_t(end.active_graph(), begin.active_graph())
            else:
                kernel = ker_d(end, begin)
        churn = sum(1 for a in t.actions[previous_end : f.start] if a.is_dynamic)
        summaries.append(
            FragmentSummary(
                k,
                float(gc.total(ev.begin_value(k))),
                float(gc.total(ev.end_value(k))),
                len(kernel),
                churn,
            )
        )
        previous_end = f.end
    return summaries


def _records(r: RunReport) -> list[dict]:
    records: list[dict] = [
        {
            "type": "run",
            "scenario": r.scenario,
            "events": r.events,
            "fragment_count": r.fragment_count,
            "churn_events": r.churn_events,
            "churn_rate": r.churn_rate,
            "trace_path": str(r.trace_path) if r.trace_path else None,
        }
    ]
    records.extend({"type": "fragment", **f.to_dict()} for f in r.fragments)
    records.extend({"type": "property", **res.to_dict()} for res in r.verdict.results + r.verdict.extras)
    for name, part in r.part_verdicts.items():
        records.append({"type": "part_verdict", "part": name, **part.to_dict()})
    if r.notes:
        records.append({"type": "notes", **canonical(r.notes)})
    records.append(
        {
            "type": "verdict",
            "class": r.org_class.value,
            "criterion": r.verdict.criterion,
            "pending": list(r.verdict.pending),
            "demon_promise_kept": r.demon_promise_kept,
        }
    )
    return records


def emit_report(r: RunReport, path: Path, fmt: str = "records") -> list[Path]:
    """Write the report at path; for "both", path is a directory that gets report.jsonl and summary.csv."""
    if fmt not in FORMATS:
        raise ValueError(f"Unknown report format {fmt!r}; expected one of {', '.join(FORMATS)}")
    path = Path(path)
    written = []
    if fmt == "both":
        written.extend(emit_report(r, path / "report.jsonl", "records"))
        written.extend(emit_report(r, path / "summary.csv", "csv-summary"))
        return written

    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "records":
        with path.open("w", encoding="utf-8") as fh:
            for record in _records(r):
                fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
    else:
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
            writer.writeheader()
            for f in r.fragments:
                writer.writerow(f.to_dict())
    logger.debug(f"Wrote {fmt} report to {path}")
    return [path]


def read_summary(path: Path) -> list[dict]:
    """Read a CSV summary back as typed rows."""
    with Path(path).open(encoding="utf-8", newline="") as fh:
        return [
            {
                "fragment_index": int(row["fragment_index"]),
                "begin_gamma": float(row["begin_gamma"]),
                "end_gamma": float(row["end_gamma"]),
                "kernel_size": int(row["kernel_size"]),
                "churn_events": int(row["churn_events"]),
            }
            for row in csv.DictReader(fh)
        ]
