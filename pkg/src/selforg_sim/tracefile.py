# ABOUTME: Trace files: JSON lines with a header, one record per action and periodic snapshots.
# ABOUTME: replay() rebuilds the model from the header and checks every stored hash and snapshot.

import json
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from selforg_sim.model import Action, Configuration, ProtocolModel, SimulationError, Trace, apply_action, canonical
from selforg_sim.models import build_protocol_model, model_params

logger = logging.getLogger(__name__)

TRACE_VERSION = 1


class TraceFormatError(SimulationError):
    """Raised when a trace file has a malformed record or fails hash verification."""


def load_schema() -> dict:
    text = resources.files("selforg_sim").joinpath("schemas/trace-v1.json").read_text(encoding="utf-8")
    return json.loads(text)


def _dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def emit_trace(
    t: Trace,
    path: Path,
    snapshot_interval: int = 100,
    scenario: dict | None = None,
) -> Path:
    """Write a trace file.

    Every action record carries the hash of the configuration it produced. A
    snapshot of the full configuration follows every snapshot_interval-th action.
    """
    if snapshot_interval < 1:
        raise ValueError("snapshot_interval must be at least 1")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    model = t.model
    header = {
        "type": "header",
        "version": TRACE_VERSION,
        "protocol": model.name if model is not None else None,
        "model_params": model_params(model) if model is not None else {},
        "snapshot_interval": snapshot_interval,
        "initial": t.initial.to_dict(),
        "initial_hash": t.initial.state_hash(),
    }
    if scenario is not None:
        header["scenario"] = canonical(scenario)

    with path.open("w", encoding="utf-8") as fh:
        fh.write(_dumps(header) + "\n")
        configurations = t.iter_configurations()
        next(configurations)
        for i, (action, post) in enumerate(zip(t.actions, configurations)):
            record = {"type": "action", **action.to_dict(), "seq": i, "post_state_hash": post.state_hash()}
            fh.write(_dumps(record) + "\n")
            if (i + 1) % snapshot_interval == 0:
                snapshot = {
                    "type": "snapshot",
                    "index": i + 1,
                    "state_hash": record["post_state_hash"],
                    "configuration": post.to_dict(),
                }
                fh.write(_dumps(snapshot) + "\n")
    logger.debug(f"Wrote trace of {len(t)} actions to {path}")
    return path


def _records(path: Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise TraceFormatError(f"Trace file not found: {path}")
    schema = load_schema()["records"]
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise TraceFormatError(f"{path}:{lineno}: invalid JSON: {e}") from e
            kind = record.get("type") if isinstance(record, dict) else None
            if kind not in schema:
                raise TraceFormatError(f"{path}:{lineno}: unknown record type {kind!r}")
            missing = [key for key in schema[kind]["required"] if key not in record]
            if missing:
                raise TraceFormatError(f"{path}:{lineno}: {kind} record missing {', '.join(missing)}")
            records.append(record)
    if not records or records[0]["type"] != "header":
        raise TraceFormatError(f"{path}: first record must be the header")
    if records[0]["version"] != TRACE_VERSION:
        raise TraceFormatError(f"{path}: unsupported trace version {records[0]['version']}")
    return records


def _model_from_header(header: dict) -> ProtocolModel | None:
    if header["protocol"] is None:
        return None
    return build_protocol_model(header["protocol"], header["model_params"])


@dataclass
class ReplayResult:
    """A verified trace plus what its header said about the run."""

    trace: Trace
    header: dict
    checked_hashes: int
    checked_snapshots: int

    @property
    def scenario(self) -> dict | None:
        return self.header.get("scenario")


def read_trace(path: Path, model: ProtocolModel | None = None) -> Trace:
    """Rebuild a trace from its file without verifying hashes."""
    records = _records(path)
    header = records[0]
    model = model if model is not None else _model_from_header(header)
    decode = model.state_from_dict if model is not None else None
    initial = Configuration.from_dict(header["initial"], decode)
    actions = [Action.from_dict(r) for r in records[1:] if r["type"] == "action"]
    return Trace.replay(initial, actions, model)


def replay(path: Path) -> ReplayResult:
    """Re-execute a trace file and check each post-state hash and snapshot against the recomputed run."""
    records = _records(path)
    header = records[0]
    model = _model_from_header(header)
    decode = model.state_from_dict if model is not None else None
    initial = Configuration.from_dict(header["initial"], decode)
    if initial.state_hash() != header["initial_hash"]:
        raise TraceFormatError(f"{path}: initial configuration does not match its hash")

    trace = Trace(initial, model)
    c = initial
    hashes = snapshots = 0
    for record in records[1:]:
        if record["type"] == "action":
            action = Action.from_dict(record)
            if action.seq != len(trace):
                raise TraceFormatError(f"{path}: action seq {action.seq} out of order, expected {len(trace)}")
            try:
                c = apply_action(c, action, model)
            except SimulationError as e:
                raise TraceFormatError(f"{path}: action {action.seq} does not apply: {e}") from e
            trace.append(action, c)
            if c.state_hash() != record["post_state_hash"]:
                raise TraceFormatError(f"{path}: hash mismatch after action {action.seq}")
            hashes += 1
        elif record["type"] == "snapshot":
            index = int(record["index"])
            if index != len(trace):
                raise TraceFormatError(f"{path}: snapshot at {index} is not after action {index - 1}")
            stored = Configuration.from_dict(record["configuration"], decode)
            if stored.state_hash() != record["state_hash"] or record["state_hash"] != c.state_hash():
                raise TraceFormatError(f"{path}: snapshot at {index} differs from the replayed configuration")
            snapshots += 1
        else:
            raise TraceFormatError(f"{path}: unexpected {record['type']} record after the header")
    logger.info(f"Replayed {len(trace)} actions from {path}: {hashes} hashes, {snapshots} snapshots verified")
    return ReplayResult(trace, header, hashes, snapshots)
