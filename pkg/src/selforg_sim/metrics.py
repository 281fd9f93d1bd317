# ABOUTME: Prometheus metrics recorder for simulation runs.
# ABOUTME: Tracks trace size, churn, fragment values and verdicts per scenario.

from pathlib import Path

import prometheus_client


class RunMetrics:
    """Records per-scenario run metrics into a Prometheus registry."""

    def __init__(self, registry=None):
        self.registry = registry or prometheus_client.REGISTRY

        self._events = prometheus_client.Gauge(
            "selforg_sim_last_run_events",
            "Actions executed in the last run",
            ["scenario"],
            registry=self.registry,
        )
        self._fragments = prometheus_client.Gauge(
            "selforg_sim_last_run_fragments",
            "Static fragments in the last run",
            ["scenario"],
            registry=self.registry,
        )
        self._churn_events = prometheus_client.Gauge(
            "selforg_sim_last_run_churn_events",
            "Connect and Disconnect actions in the last run",
            ["scenario"],
            registry=self.registry,
        )
        self._churn_rate = prometheus_client.Gauge(
            "selforg_sim_last_run_churn_rate",
            "Mean normalized change of the active set per action",
            ["scenario"],
            registry=self.registry,
        )
        self._last_begin = prometheus_client.Gauge(
            "selforg_sim_last_fragment_begin_gamma",
            "Global criterion value at the begin of the last fragment",
            ["scenario"],
            registry=self.registry,
        )
        self._last_end = prometheus_client.Gauge(
            "selforg_sim_last_fragment_end_gamma",
            "Global criterion value at the end of the last fragment",
            ["scenario"],
            registry=self.registry,
        )
        self._property_status = prometheus_client.Gauge(
            "selforg_sim_property_status",
            "Monitor result per property: 0=holds, 1=pending at horizon, 2=violated",
            ["scenario", "property"],
            registry=self.registry,
        )
        self._verdict = prometheus_client.Gauge(
            "selforg_sim_verdict_class",
            "Self-organization class: 0=none, 1=weak, 2=self, 3=strong",
            ["scenario"],
            registry=self.registry,
        )
        self._promise = prometheus_client.Gauge(
            "selforg_sim_demon_promise_kept",
            "1 when the trace stayed within its demon class, 0 when it did not",
            ["scenario"],
            registry=self.registry,
        )
        self._runs = prometheus_client.Counter(
            "selforg_sim_runs",
            "Total runs by scenario and verdict class",
            ["scenario", "verdict"],
            registry=self.registry,
        )

    _STATUS_MAP = {
        "Holds": 0,
        "PendingAtHorizon": 1,
        "Violated": 2,
    }

    def record(self, scenario: str, report) -> None:
        """Record metrics for a finished run.

        Args:
            scenario: Scenario name used as the label value.
            report: The RunReport returned by run_scenario or replay.
        """
        series = report.gamma_series
        self._set_run_gauges(
            scenario,
            events=report.events,
            fragments=report.fragment_count,
            churn_events=report.churn_events,
            churn_rate=report.churn_rate,
            last_begin=series[-2] if series else 0.0,
            last_end=series[-1] if series else 0.0,
            statuses={r.property.value: r.status.value for r in report.verdict.results + report.verdict.extras},
            rank=report.org_class.rank,
        )
        self._promise.labels(scenario).set(1 if report.demon_promise_kept else 0)
        self._runs.labels(scenario, report.org_class.value).inc()

    def _set_run_gauges(
        self,
        scenario: str,
        *,
        events: int,
        fragments: int,
        churn_events: int,
        churn_rate: float,
        last_begin: float,
        last_end: float,
        statuses: dict,
        rank: int,
    ) -> None:
        self._events.labels(scenario).set(events)
        self._fragments.labels(scenario).set(fragments)
        self._churn_events.labels(scenario).set(churn_events)
        self._churn_rate.labels(scenario).set(churn_rate)
        self._last_begin.labels(scenario).set(float(last_begin))
        self._last_end.labels(scenario).set(float(last_end))
        for prop, status in statuses.items():
            self._property_status.labels(scenario, prop).set(self._STATUS_MAP.get(status, 2))
        self._verdict.labels(scenario).set(rank)

    def write(self, path: Path) -> None:
        """Write the registry in the Prometheus textfile format."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        prometheus_client.write_to_textfile(str(path), self.registry)
