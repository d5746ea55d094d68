"""Flow-record CSV ingestion: parsing, label grouping, cleaning, categorical encoding.

Input files are CICFlowMeter-style exports: one header row, one flow per data
row, a Label column (any casing), and optional identity columns (timestamp,
flow id, endpoint addresses).  Everything else is a numeric feature.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    EmptyDatasetError,
    EmptyFeatureError,
    InputError,
    ParameterError,
    RowError,
    SchemaError,
    ShapeError,
    UnknownLabelError,
)

# Cells carrying these spellings are missing-flagged rather than parsed; any
# cell that parses to a non-finite float is flagged the same way.
_MISSING_MARKERS = {"", "nan", "infinity", "-infinity", "+infinity", "inf", "-inf", "+inf"}

_IDENT_TIMESTAMP = {"timestamp"}
_IDENT_FLOW_ID = {"flow id"}
_IDENT_SRC_IP = {"src ip", "source ip"}
_IDENT_DST_IP = {"dst ip", "destination ip"}
_IDENT_SRC_PORT = {"src port", "source port"}
_IDENT_DST_PORT = {"dst port", "destination port"}


def normalize_name(name: str) -> str:
    """Lower-case and collapse every punctuation/space run to one space."""
    return re.sub(r"[^0-9a-z]+", " ", name.lower()).strip()


@dataclass(frozen=True)
class FlowIdentity:
    """Non-feature fields of a flow, kept for log lines only."""

    timestamp: str | None = None
    src: str | None = None
    dst: str | None = None
    flow_id: str | None = None


@dataclass(frozen=True)
class FlowRecord:
    features: dict[str, float]
    raw_label: str
    missing: frozenset[str] = frozenset()
    identity: FlowIdentity | None = None


@dataclass(frozen=True)
class LabelMap:
    """Grouping of raw label spellings into a fixed canonical class set.

    Rules are data: (normalized spelling, canonical class) pairs matched
    exactly after `normalize_name`, so new spellings are a table change.
    """

    profile: str
    class_names: tuple[str, ...]
    rules: tuple[tuple[str, str], ...]

    def __post_init__(self):
        for pattern, cls in self.rules:
            if cls not in self.class_names:
                raise ParameterError(f"rule target {cls!r} not in class set")
            if pattern != normalize_name(pattern):
                raise ParameterError(f"rule pattern {pattern!r} is not normalized")

    def match(self, raw_label: str) -> str | None:
        key = normalize_name(raw_label)
        for pattern, cls in self.rules:
            if pattern == key:
                return cls
        return None

    def class_index(self, raw_label: str) -> int:
        cls = self.match(raw_label)
        if cls is None:
            raise UnknownLabelError(f"no grouping rule for label {raw_label!r}")
        return self.class_names.index(cls)


def _rules(pairs):
    return tuple((normalize_name(p), c) for p, c in pairs)


_IDS2017_CLASSES = ("Benign", "DoS", "DDoS", "Web", "Portscan", "Bot", "Brute Force")
_IDS2017_RULES = _rules([
    ("BENIGN", "Benign"),
    ("DoS Hulk", "DoS"),
    ("DoS GoldenEye", "DoS"),
    ("DoS slowloris", "DoS"),
    ("DoS Slowhttptest", "DoS"),
    ("DoS slowHTTP", "DoS"),
    ("Heartbleed", "DoS"),
    ("DoS", "DoS"),
    ("DDoS", "DDoS"),
    ("PortScan", "Portscan"),
    ("Port Scan", "Portscan"),
    ("Bot", "Bot"),
    ("FTP-Patator", "Brute Force"),
    ("SSH-Patator", "Brute Force"),
    ("Brute Force", "Brute Force"),
    ("Web Attack - Brute Force", "Web"),
    ("Web Attack - XSS", "Web"),
    ("Web Attack - Sql Injection", "Web"),
    ("Web", "Web"),
])

_IDS2018_CLASSES = ("Benign", "DoS", "DDoS", "Web", "Portscan", "Brute Force", "Infiltration")
_IDS2018_RULES = _rules([
    ("Benign", "Benign"),
    ("DoS attacks-Hulk", "DoS"),
    ("DoS attacks-GoldenEye", "DoS"),
    ("DoS attacks-Slowloris", "DoS"),
    ("DoS attacks-SlowHTTPTest", "DoS"),
    ("DoS", "DoS"),
    ("DDoS attacks-LOIC-HTTP", "DDoS"),
    ("DDOS attack-LOIC-UDP", "DDoS"),
    ("DDOS attack-HOIC", "DDoS"),
    ("DDoS", "DDoS"),
    ("Brute Force -Web", "Web"),
    ("Brute Force -XSS", "Web"),
    ("SQL Injection", "Web"),
    ("Web", "Web"),
    ("PortScan", "Portscan"),
    ("Port Scan", "Portscan"),
    ("FTP-BruteForce", "Brute Force"),
    ("SSH-Bruteforce", "Brute Force"),
    ("Brute Force", "Brute Force"),
    ("Infilteration", "Infiltration"),
    ("Infiltration", "Infiltration"),
])

PROFILES: dict[str, LabelMap] = {
    "ids2017": LabelMap("ids2017", _IDS2017_CLASSES, _IDS2017_RULES),
    "ids2018": LabelMap("ids2018", _IDS2018_CLASSES, _IDS2018_RULES),
}

# Wall-clock / bookkeeping columns never fed to the model even when a caller
# skips identity extraction (inter-arrival-time statistics are real features
# and are never excluded).
DEFAULT_EXCLUDE = ("Timestamp", "Flow ID")


def label_map_for(profile: str, rules=None) -> LabelMap:
    """Profile lookup; `custom` requires an explicit rules table."""
    if profile in PROFILES:
        return PROFILES[profile]
    if profile == "custom":
        if not rules:
            raise ParameterError("custom profile needs a rules table")
        classes = []
        for _, cls in rules:
            if cls not in classes:
                classes.append(cls)
        return LabelMap("custom", tuple(classes), _rules(rules))
    raise ParameterError(f"unknown profile {profile!r}")


@dataclass(frozen=True)
class _Schema:
    """Resolved header: which column index plays which role."""

    feature_cols: tuple[tuple[int, str], ...]   # (column index, original name)
    label_col: int
    n_cols: int
    timestamp_col: int | None = None
    flow_id_col: int | None = None
    src_ip_col: int | None = None
    dst_ip_col: int | None = None
    src_port_col: int | None = None
    dst_port_col: int | None = None

    @property
    def feature_names(self) -> list[str]:
        return [name for _, name in self.feature_cols]


def _resolve_schema(header: list[str]) -> _Schema:
    names = [h.strip() for h in header]
    if not names or all(n == "" for n in names):
        raise SchemaError("empty header row")
    if any(n == "" for n in names):
        raise SchemaError("header contains an empty column name")
    seen = set()
    for n in names:
        if n in seen:
            raise SchemaError(f"duplicate column name {n!r}")
        seen.add(n)

    norm = [normalize_name(n) for n in names]
    label_cols = [i for i, n in enumerate(norm) if n == "label"]
    if not label_cols:
        raise SchemaError("no Label column in header")
    if len(label_cols) > 1:
        raise SchemaError("more than one Label column in header")

    def find(aliases):
        hits = [i for i, n in enumerate(norm) if n in aliases]
        return hits[0] if hits else None

    ts = find(_IDENT_TIMESTAMP)
    fid = find(_IDENT_FLOW_ID)
    sip = find(_IDENT_SRC_IP)
    dip = find(_IDENT_DST_IP)
    sport = find(_IDENT_SRC_PORT)
    dport = find(_IDENT_DST_PORT)
    # A port column only joins the identity when its address column is present;
    # on its own it stays an ordinary numeric feature.
    if sip is None:
        sport = None
    if dip is None:
        dport = None

    identity_cols = {label_cols[0], ts, fid, sip, dip, sport, dport} - {None}
    feature_cols = tuple(
        (i, names[i]) for i in range(len(names)) if i not in identity_cols
    )
    return _Schema(
        feature_cols=feature_cols,
        label_col=label_cols[0],
        n_cols=len(names),
        timestamp_col=ts,
        flow_id_col=fid,
        src_ip_col=sip,
        dst_ip_col=dip,
        src_port_col=sport,
        dst_port_col=dport,
    )


def _parse_cell(text: str):
    """Returns (value, missing_flag); raises ValueError on non-numeric text."""
    s = text.strip()
    if s.lower() in _MISSING_MARKERS:
        return math.nan, True
    v = float(s)            # ValueError propagates to the row handler
    if not math.isfinite(v):
        return math.nan, True
    return v, False


def _build_record(schema: _Schema, cells: list[str], rownum: int) -> FlowRecord:
    if len(cells) != schema.n_cols:
        raise RowError(rownum, f"expected {schema.n_cols} cells, got {len(cells)}")
    features = {}
    missing = []
    for idx, name in schema.feature_cols:
        try:
            value, is_missing = _parse_cell(cells[idx])
        except ValueError:
            raise RowError(rownum, f"non-numeric value {cells[idx]!r} in column {name!r}") from None
        features[name] = value
        if is_missing:
            missing.append(name)
    raw_label = cells[schema.label_col].strip()
    if raw_label == "":
        raise RowError(rownum, "empty label")

    def cell(i):
        if i is None:
            return None
        v = cells[i].strip()
        return v if v else None

    src = cell(schema.src_ip_col)
    if src is not None and cell(schema.src_port_col) is not None:
        src = f"{src}:{cell(schema.src_port_col)}"
    dst = cell(schema.dst_ip_col)
    if dst is not None and cell(schema.dst_port_col) is not None:
        dst = f"{dst}:{cell(schema.dst_port_col)}"
    ident = FlowIdentity(
        timestamp=cell(schema.timestamp_col),
        src=src,
        dst=dst,
        flow_id=cell(schema.flow_id_col),
    )
    if ident == FlowIdentity():
        ident = None
    return FlowRecord(
        features=features,
        raw_label=raw_label,
        missing=frozenset(missing),
        identity=ident,
    )


def _open_source(source):
    """Accepts a path, bytes, or an open text/binary stream; returns text stream."""
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8", newline=""), True
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8")), True
    if hasattr(source, "read"):
        probe = source.read(0)
        if isinstance(probe, bytes):
            # Read fully rather than wrapping: a TextIOWrapper would close the
            # caller's stream when collected.
            return io.StringIO(source.read().decode("utf-8")), True
        return source, False
    raise ParameterError(f"unsupported source type {type(source).__name__}")


def read_schema(line_iter) -> _Schema:
    """Consumes the header row from an iterable of CSV text lines."""
    reader = csv.reader(line_iter)
    for row in reader:
        if not row:
            continue
        return _resolve_schema(row)
    raise SchemaError("input has no header row")


def iter_flow_rows(source):
    """Lenient streaming parse.

    Yields (rownum, record, error) with exactly one of record/error set;
    rownum counts data rows from 1.  The monitor uses this to skip and count
    malformed rows without aborting.
    """
    stream, owned = _open_source(source)
    try:
        reader = csv.reader(stream)
        schema = None
        rownum = 0
        for cells in reader:
            if schema is None:
                if not cells:
                    continue
                schema = _resolve_schema(cells)
                continue
            if not cells:
                continue
            rownum += 1
            try:
                yield rownum, _build_record(schema, cells, rownum), None
            except RowError as err:
                yield rownum, None, err
        if schema is None:
            raise SchemaError("input has no header row")
    finally:
        if owned:
            stream.close()


def parse_flow_csv(source, profile: str = "custom") -> list[FlowRecord]:
    """Strict parse: returns all records or raises on the first bad row.

    `profile` is recorded downstream (clean / label grouping); both supported
    dialects share the same header conventions so parsing itself is uniform.
    """
    if profile not in ("ids2017", "ids2018", "custom"):
        raise ParameterError(f"unknown profile {profile!r}")
    records = []
    for _, record, err in iter_flow_rows(source):
        if err is not None:
            raise err
        records.append(record)
    return records


def map_labels(records: list[FlowRecord], label_map: LabelMap) -> np.ndarray:
    """Class index per record; unknown spellings are collected and reported."""
    out = np.empty(len(records), dtype=np.int64)
    unknown = []
    for i, rec in enumerate(records):
        cls = label_map.match(rec.raw_label)
        if cls is None:
            if rec.raw_label not in unknown:
                unknown.append(rec.raw_label)
            continue
        out[i] = label_map.class_names.index(cls)
    if unknown:
        raise UnknownLabelError(
            "no grouping rule for label(s): " + ", ".join(repr(u) for u in unknown)
        )
    return out


@dataclass(frozen=True)
class Dataset:
    """Immutable table of finite features plus encoded class labels."""

    columns: tuple[str, ...]
    matrix: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]
    profile: str = "custom"
    encodings: dict[str, tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        m = np.ascontiguousarray(self.matrix, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if m.ndim != 2 or m.shape[1] != len(self.columns):
            raise ShapeError(f"matrix shape {m.shape} vs {len(self.columns)} columns")
        if y.shape != (m.shape[0],):
            raise ShapeError(f"labels shape {y.shape} vs {m.shape[0]} rows")
        if m.size and not np.isfinite(m).all():
            raise InputError("dataset matrix contains non-finite values")
        if y.size and (y.min() < 0 or y.max() >= len(self.class_names)):
            raise InputError("label code outside class set")
        m.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "labels", y)

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_features(self) -> int:
        return self.matrix.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=len(self.class_names))


@dataclass
class CleanReport:
    """What clean() removed and why, in a replayable line format."""

    dropped_rows: list[tuple[int, str]] = field(default_factory=list)
    dropped_columns: list[tuple[str, str]] = field(default_factory=list)
    zero_fractions: dict[str, float] = field(default_factory=dict)
    rows_in: int = 0
    rows_out: int = 0

    def render(self) -> str:
        lines = [f"DROP-ROW {i} reason={reason}" for i, reason in self.dropped_rows]
        lines += [f"DROP-COL {name} reason={reason}" for name, reason in self.dropped_columns]
        return "\n".join(lines)


def clean(
    records: list[FlowRecord],
    labels: np.ndarray,
    label_map: LabelMap,
    zero_threshold: float = 0.30,
    exclude: tuple[str, ...] = DEFAULT_EXCLUDE,
) -> tuple[Dataset, CleanReport]:
    """Drop unusable rows/columns and assemble the numeric Dataset.

    Order: rows with any missing-flagged value go first, then columns whose
    zero fraction strictly exceeds `zero_threshold`, then columns on the
    exclusion list.  Row numbers in the report are 1-based positions in
    `records`, matching the parser's data-row numbering.
    """
    if not 0.0 < zero_threshold <= 1.0:
        raise ParameterError(f"zero_threshold {zero_threshold} outside (0, 1]")
    if len(records) != len(labels):
        raise ParameterError("records and labels length mismatch")
    if not records:
        raise EmptyDatasetError("no records to clean")

    columns = list(records[0].features.keys())
    colset = set(columns)
    for i, rec in enumerate(records):
        if set(rec.features.keys()) != colset:
            raise SchemaError(f"record {i} feature names differ from the first record")

    report = CleanReport(rows_in=len(records))
    kept_rows = []
    for i, rec in enumerate(records):
        if rec.missing:
            report.dropped_rows.append((i + 1, "missing"))
        else:
            kept_rows.append(i)
    if not kept_rows:
        raise EmptyDatasetError("every row had missing values")

    raw = np.array(
        [[records[i].features[c] for c in columns] for i in kept_rows], dtype=np.float64
    )
    zero_frac = (raw == 0.0).mean(axis=0)
    report.zero_fractions = {c: float(zero_frac[j]) for j, c in enumerate(columns)}

    excluded_norm = {normalize_name(e) for e in exclude}
    keep_cols = []
    for j, c in enumerate(columns):
        if zero_frac[j] > zero_threshold:
            report.dropped_columns.append((c, "zeros"))
        elif normalize_name(c) in excluded_norm:
            report.dropped_columns.append((c, "excluded"))
        else:
            keep_cols.append(j)
    if not keep_cols:
        raise EmptyFeatureError("every feature column was dropped")

    ds = Dataset(
        columns=tuple(columns[j] for j in keep_cols),
        matrix=raw[:, keep_cols],
        labels=np.asarray(labels)[kept_rows],
        class_names=label_map.class_names,
        profile=label_map.profile,
    )
    report.rows_out = ds.n_rows
    return ds, report


def dataset_from_records(
    records: list[FlowRecord], labels: np.ndarray, label_map: LabelMap
) -> Dataset:
    """Assemble without dropping anything; rows with missing values are refused."""
    if not records:
        raise EmptyDatasetError("no records")
    for i, rec in enumerate(records):
        if rec.missing:
            raise RowError(i + 1, f"missing value in {sorted(rec.missing)[0]!r}")
    columns = list(records[0].features.keys())
    matrix = np.array([[r.features[c] for c in columns] for r in records], dtype=np.float64)
    return Dataset(
        columns=tuple(columns),
        matrix=matrix,
        labels=np.asarray(labels),
        class_names=label_map.class_names,
        profile=label_map.profile,
    )


def encode_value(value: float, table: tuple[float, ...]) -> float:
    """Rank of `value` in a stored table; unseen values rank past the end."""
    pos = int(np.searchsorted(table, value))
    if pos < len(table) and table[pos] == value:
        return float(pos)
    return float(len(table))


def encode_categorical(
    dataset: Dataset, columns: list[str], tables: dict[str, tuple[float, ...]] | None = None
) -> Dataset:
    """Replace named columns by the rank of each value among distinct values.

    Distinct values sort ascending (all cells are numeric after parsing).  The
    table used for each column is recorded on the returned Dataset; a column
    that already carries a recorded table is left untouched, so encoding is
    idempotent.  Passing `tables` replays stored tables on new data, where
    unseen values map to len(table).
    """
    matrix = dataset.matrix.copy()
    encodings = dict(dataset.encodings)
    for col in columns:
        if col not in dataset.columns:
            raise SchemaError(f"unknown column {col!r}")
        if col in encodings:
            continue
        j = dataset.columns.index(col)
        if tables is not None and col in tables:
            table = tuple(float(v) for v in tables[col])
        else:
            table = tuple(float(v) for v in np.unique(matrix[:, j]))
        matrix[:, j] = [encode_value(v, table) for v in matrix[:, j]]
        encodings[col] = table
    return replace(dataset, matrix=matrix, encodings=encodings)


def write_dataset_csv(dataset: Dataset, path) -> None:
    """Prepared-CSV form: feature columns plus a canonical Label column."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(dataset.columns) + ["Label"])
        for i in range(dataset.n_rows):
            row = [repr(float(v)) for v in dataset.matrix[i]]
            row.append(dataset.class_names[dataset.labels[i]])
            writer.writerow(row)


def read_prepared_csv(path, label_map: LabelMap) -> Dataset:
    """Load a prepared CSV written by `write_dataset_csv` (or shaped like one)."""
    records = parse_flow_csv(path, profile="custom")
    labels = map_labels(records, label_map)
    return dataset_from_records(records, labels, label_map)
