"""Pipeline-stage flow scoring with anomaly log emission and gating exit codes.

Exit codes: 0 clean, 2 when at least one anomaly was flagged, 1 on
operational failure (unreadable input, schema mismatch, unwritable sink).
Malformed or unscorable rows are skipped and counted, never fatal.
"""

from __future__ import annotations

import datetime as _dt
import re
import time
from dataclasses import dataclass, field, replace

from .errors import FlowSentryError, InputError, ParameterError, RowError, SchemaError
from .flowdata import FlowRecord, iter_flow_rows, normalize_name, read_schema
from .pipeline import TrainedModel
import numpy as np

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_ANOMALIES = 2
EXIT_USAGE = 64

STAGES = ("build", "test", "deploy", "monitor")


@dataclass(frozen=True)
class MonitorConfig:
    stage: str = "monitor"
    alert_threshold: float = 0.5
    anomalous_classes: tuple[str, ...] | None = None   # None: every non-Benign class
    follow: bool = False
    poll_interval: float = 0.5
    idle_timeout: float | None = None                  # follow mode stop condition

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ParameterError(f"stage {self.stage!r} not one of {STAGES}")
        if not 0.0 <= self.alert_threshold <= 1.0:
            raise ParameterError("alert threshold must lie in [0, 1]")
        if self.poll_interval <= 0:
            raise ParameterError("poll interval must be > 0")


@dataclass(frozen=True)
class AnomalyLogEntry:
    timestamp: str          # ISO-8601 UTC, no suffix (the Z is added on the wire)
    stage: str
    verdict: str
    confidence: float
    flow_id: str | None = None
    src: str | None = None
    dst: str | None = None


def _token(value: str | None) -> str:
    if value is None or value == "":
        return "-"
    return re.sub(r"\s+", "-", value.strip())


_LINE_RE = re.compile(
    r"^\[(?P<ts>[0-9T:.+\-]+)Z\] stage=(?P<stage>\S+) flow=(?P<flow>\S+) "
    r"src=(?P<src>\S+) dst=(?P<dst>\S+) verdict=(?P<verdict>\S+) "
    r"confidence=(?P<conf>[01]\.\d{3})$"
)


def format_entry(entry: AnomalyLogEntry) -> str:
    return (
        f"[{entry.timestamp}Z] stage={entry.stage} flow={_token(entry.flow_id)} "
        f"src={_token(entry.src)} dst={_token(entry.dst)} "
        f"verdict={_token(entry.verdict)} confidence={entry.confidence:.3f}"
    )


def parse_entry(line: str, class_names=None) -> AnomalyLogEntry:
    """Inverse of format_entry; detokenises the verdict when the class set is known."""
    m = _LINE_RE.match(line.strip())
    if m is None:
        raise InputError(f"line does not match the anomaly grammar: {line!r}")
    verdict = m.group("verdict")
    if class_names:
        for name in class_names:
            if _token(name) == verdict:
                verdict = name
                break

    def detok(v):
        return None if v == "-" else v

    return AnomalyLogEntry(
        timestamp=m.group("ts"),
        stage=m.group("stage"),
        verdict=verdict,
        confidence=float(m.group("conf")),
        flow_id=detok(m.group("flow")),
        src=detok(m.group("src")),
        dst=detok(m.group("dst")),
    )


_TS_FORMATS = (
    "%d/%m/%Y %H:%M:%S",
    "%d/%m/%Y %H:%M",
    "%m/%d/%Y %H:%M:%S",
    "%m/%d/%Y %H:%M",
)


def _render_timestamp(raw: str | None) -> str:
    """Record-supplied timestamps are treated as UTC; unparseable ones fall
    back to the scoring wall clock."""
    if raw:
        text = raw.strip()
        try:
            dt = _dt.datetime.fromisoformat(text.replace("Z", "+00:00"))
            return dt.replace(tzinfo=None).isoformat()
        except ValueError:
            pass
        for fmt in _TS_FORMATS:
            try:
                return _dt.datetime.strptime(text, fmt).isoformat()
            except ValueError:
                continue
    now = _dt.datetime.now(_dt.timezone.utc).replace(tzinfo=None)
    return now.isoformat(timespec="seconds")


def score_flow(model: TrainedModel, record: FlowRecord):
    """(verdict, confidence, distribution) for one parsed flow."""
    row = model.transform_record(record)
    dist = model.predict_proba(row[None, :])[0]
    idx = int(np.argmax(dist))
    return model.class_names[idx], float(dist[idx]), dist


def emit_log(entry: AnomalyLogEntry, sink) -> None:
    """One line per call, flushed before the next record is scored."""
    sink.write(format_entry(entry) + "\n")
    sink.flush()


@dataclass
class MonitorSummary:
    stage: str
    total: int = 0
    scored: int = 0
    skipped: int = 0
    anomalies: int = 0
    per_class: dict[str, int] = field(default_factory=dict)
    elapsed_ms: int = 0

    @property
    def exit_status(self) -> int:
        return EXIT_ANOMALIES if self.anomalies > 0 else EXIT_OK


def _summary_block(summary: MonitorSummary, class_names) -> str:
    lines = [
        f"# summary stage={summary.stage}",
        f"# total={summary.total} anomalies={summary.anomalies} "
        f"skipped={summary.skipped} elapsed_ms={summary.elapsed_ms}",
    ]
    for name in class_names:
        lines.append(f"# class {_token(name)}={summary.per_class.get(name, 0)}")
    return "\n".join(lines)


def _follow_lines(path, poll_interval: float, idle_timeout: float | None):
    """Yield complete text lines as the file grows; stop after idle_timeout
    seconds without new data (None keeps polling forever)."""
    buf = ""
    idle = 0.0
    with open(path, "r", encoding="utf-8", newline="") as fh:
        while True:
            chunk = fh.read()
            if chunk:
                idle = 0.0
                buf += chunk
                while "\n" in buf:
                    line, buf = buf.split("\n", 1)
                    yield line + "\n"
            else:
                if idle_timeout is not None and idle >= idle_timeout:
                    if buf:
                        yield buf
                    return
                time.sleep(poll_interval)
                idle += poll_interval


def run_monitor(
    input_path,
    model: TrainedModel,
    config: MonitorConfig = MonitorConfig(),
    sink=None,
    log_path=None,
) -> MonitorSummary:
    """Score a flow CSV and write anomaly lines plus a trailing summary block.

    Raises on operational problems (unreadable input, absent selected columns,
    unwritable sink); the caller maps that to exit status 1.
    """
    if config.anomalous_classes is None:
        anomalous = {c for c in model.class_names if c != "Benign"}
    else:
        anomalous = set(config.anomalous_classes)
        unknown = anomalous - set(model.class_names)
        if unknown:
            raise ParameterError(f"anomalous classes {sorted(unknown)} not in the model's set")

    own_sink = None
    if sink is None:
        if log_path is None:
            raise ParameterError("need a sink or a log path")
        own_sink = open(log_path, "w", encoding="utf-8")
        sink = own_sink

    started = time.monotonic()
    summary = MonitorSummary(stage=config.stage)
    try:
        # schema precheck: a wholesale column mismatch is operational, not row noise
        with open(input_path, "r", encoding="utf-8", newline="") as fh:
            schema = read_schema(fh)
        have = {normalize_name(n) for n in schema.feature_names}
        absent = [n for n in model.feature_names if normalize_name(n) not in have]
        if absent:
            raise SchemaError(f"input lacks selected feature(s) {absent}")

        if config.follow:
            rows = iter_flow_rows_follow(input_path, config)
        else:
            rows = iter_flow_rows(input_path)
        for rownum, record, err in rows:
            summary.total += 1
            if err is not None:
                summary.skipped += 1
                continue
            try:
                verdict, confidence, _ = score_flow(model, record)
            except (InputError, SchemaError, RowError):
                summary.skipped += 1
                continue
            summary.scored += 1
            if verdict in anomalous and confidence >= config.alert_threshold:
                summary.anomalies += 1
                summary.per_class[verdict] = summary.per_class.get(verdict, 0) + 1
                ident = record.identity
                entry = AnomalyLogEntry(
                    timestamp=_render_timestamp(ident.timestamp if ident else None),
                    stage=config.stage,
                    verdict=verdict,
                    confidence=confidence,
                    flow_id=ident.flow_id if ident else None,
                    src=ident.src if ident else None,
                    dst=ident.dst if ident else None,
                )
                emit_log(entry, sink)
        summary.elapsed_ms = int((time.monotonic() - started) * 1000)
        sink.write(_summary_block(summary, model.class_names) + "\n")
        sink.flush()
    finally:
        if own_sink is not None:
            own_sink.close()
    return summary


def iter_flow_rows_follow(path, config: MonitorConfig):
    """Streaming parse over a growing file (poll every config.poll_interval)."""
    lines = _follow_lines(path, config.poll_interval, config.idle_timeout)
    yield from iter_flow_rows(_LineStream(lines))


class _LineStream:
    """Minimal text-stream facade over a line iterator for csv.reader."""

    def __init__(self, lines):
        self._lines = lines

    def read(self, n=-1):
        if n == 0:
            return ""
        raise NotImplementedError("line-based access only")

    def __iter__(self):
        return iter(self._lines)


def stage_run(
    model: TrainedModel,
    stage_inputs: dict[str, str],
    out_dir,
    alert_threshold: float = 0.5,
    anomalous_classes=None,
) -> tuple[dict[str, MonitorSummary | None], int]:
    """Run every configured stage in pipeline order, one log file per stage.

    The overall status is the max of stage statuses; anomalies (2) do not stop
    later stages, an operational failure (1) does.
    """
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summaries: dict[str, MonitorSummary | None] = {}
    overall = EXIT_OK
    for stage in STAGES:
        if stage not in stage_inputs:
            continue
        config = MonitorConfig(
            stage=stage,
            alert_threshold=alert_threshold,
            anomalous_classes=anomalous_classes,
        )
        log_path = out / f"{stage}.log"
        try:
            summary = run_monitor(stage_inputs[stage], model, config, log_path=log_path)
        except (OSError, FlowSentryError) as err:
            summaries[stage] = None
            overall = max(overall, EXIT_FAILURE)
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(f"# error stage={stage} {err}\n")
            break
        summaries[stage] = summary
        overall = max(overall, summary.exit_status)
    return summaries, overall
