"""Command-line front end.

Eight subcommands cover the pipeline: preprocess, select-features, resample,
train, evaluate, predict, monitor, stage-run.  Defaults < config file <
explicit flags; every run writes a manifest (effective settings, seed, input
checksums) beside its outputs.  Usage problems exit 64, operational failures
1, anomaly gating 2.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .errors import FlowSentryError, ParameterError
from .featsel import apply_minmax, fit_minmax, rfe
from .flowdata import (
    Dataset,
    clean,
    dataset_from_records,
    encode_categorical,
    label_map_for,
    map_labels,
    parse_flow_csv,
    read_prepared_csv,
    write_dataset_csv,
)
from .monitor import (
    EXIT_FAILURE,
    EXIT_OK,
    EXIT_USAGE,
    MonitorConfig,
    run_monitor,
    stage_run,
)
from .pipeline import (
    MODEL_VERSION,
    ModelConfig,
    TrainedModel,
    build_cnn_lstm,
    evaluate_model,
    load_model,
    save_model,
    split_dataset,
    train_model,
)
from .resample import ResampleConfig, resample_pipeline


class _UsageExit(SystemExit):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that exits 64 on usage errors instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise _UsageExit(EXIT_USAGE)


def _comma_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _comma_ints(text: str) -> list[int]:
    return [int(t) for t in _comma_list(text)]


def _comma_floats(text: str) -> list[float]:
    return [float(t) for t in _comma_list(text)]


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Opt:
    name: str                # long flag without the leading dashes
    type: object = str
    default: object = None
    help: str = ""
    required: bool = False
    is_flag: bool = False


_COMMON = [
    Opt("config", str, None, "flat key = value settings file"),
    Opt("seed", int, 0, "base random seed"),
    Opt("profile", str, "ids2017", "label profile: ids2017 | ids2018 | custom"),
    Opt("out-dir", str, ".", "directory for outputs and the run manifest"),
]

_SPECS: dict[str, list[Opt]] = {
    "preprocess": [
        Opt("data", str, None, "raw flow CSV", required=True),
        Opt("zero-threshold", float, 0.30, "drop columns with zero fraction above this"),
        Opt("categorical", _comma_list, ["Protocol"], "columns to rank-encode"),
        Opt("label-rules", str, None, "JSON rules file for the custom profile"),
    ],
    "select-features": [
        Opt("data", str, None, "prepared CSV from preprocess", required=True),
        Opt("target-k", int, 30, "number of features to keep"),
        Opt("step", int, 1, "features eliminated per round"),
        Opt("trees", int, 50, "forest size"),
        Opt("max-depth", int, 12, "tree depth limit"),
        Opt("min-leaf", int, 2, "minimum rows per leaf"),
        Opt("max-features", int, None, "candidate features per split (default sqrt)"),
    ],
    "resample": [
        Opt("data", str, None, "prepared CSV from preprocess", required=True),
        Opt("smote-k", int, 5, "neighbours for synthetic interpolation"),
        Opt("enn-k", int, 3, "neighbours for the pruning vote"),
    ],
    "train": [
        Opt("data", str, None, "prepared CSV from preprocess", required=True),
        Opt("features", str, None, "selected-feature list file (one name per line)"),
        Opt("encodings", str, None, "categorical tables JSON from preprocess"),
        Opt("train-frac", float, 0.8, "stratified train share"),
        Opt("epochs", int, 30, "training epochs"),
        Opt("batch-size", int, 256, "mini-batch size"),
        Opt("learning-rate", float, 0.001, "Adam step size"),
        Opt("conv-filters", _comma_ints, [32, 64, 64], "filters per conv block"),
        Opt("kernel", int, 3, "conv kernel width"),
        Opt("pool", int, 2, "max-pool width"),
        Opt("dropout", _comma_floats, [0.2, 0.3], "dropout rates after late blocks"),
        Opt("lstm", _comma_ints, [64, 32], "recurrent layer widths"),
        Opt("smote-k", int, 5, "neighbours for synthetic interpolation"),
        Opt("enn-k", int, 3, "neighbours for the pruning vote"),
        Opt("no-resample", _bool, False, "skip rebalancing of the train split", is_flag=True),
        Opt("model-out", str, None, "model file path (default <out-dir>/model.nidm)"),
    ],
    "evaluate": [
        Opt("model", str, None, "trained model file", required=True),
        Opt("data", str, None, "flow CSV to score", required=True),
    ],
    "predict": [
        Opt("model", str, None, "trained model file", required=True),
        Opt("data", str, None, "flow CSV to score", required=True),
    ],
    "monitor": [
        Opt("model", str, None, "trained model file", required=True),
        Opt("input", str, None, "flow CSV to gate on", required=True),
        Opt("stage", str, "monitor", "pipeline stage tag"),
        Opt("threshold", float, 0.5, "confidence needed to alert"),
        Opt("anomalous", _comma_list, None, "classes that count as anomalies"),
        Opt("log", str, None, "log file path (default <out-dir>/<stage>.log)"),
        Opt("follow", _bool, False, "poll the input for appended rows", is_flag=True),
        Opt("poll-interval", float, 0.5, "seconds between polls in follow mode"),
        Opt("idle-timeout", float, None, "stop following after this many idle seconds"),
    ],
    "stage-run": [
        Opt("model", str, None, "trained model file", required=True),
        Opt("build-input", str, None, "flow CSV for the build stage", required=True),
        Opt("test-input", str, None, "flow CSV for the test stage", required=True),
        Opt("deploy-input", str, None, "flow CSV for the deploy stage", required=True),
        Opt("monitor-input", str, None, "flow CSV for the monitor stage", required=True),
        Opt("threshold", float, 0.5, "confidence needed to alert"),
        Opt("anomalous", _comma_list, None, "classes that count as anomalies"),
    ],
}


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="flowsentry",
        description="Flow-record intrusion detection and CI stage gating.",
    )
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    for name, opts in _SPECS.items():
        p = sub.add_parser(name, help=opts[0].help if opts else "")
        for opt in _COMMON + opts:
            kwargs = {"default": None, "help": opt.help, "dest": opt.name.replace("-", "_")}
            if opt.is_flag:
                p.add_argument(f"--{opt.name}", action="store_const", const=True, **kwargs)
            else:
                p.add_argument(f"--{opt.name}", type=str, **kwargs)
    return parser


@dataclass
class RunConfig:
    subcommand: str
    params: dict
    warnings: list


def _convert(opt: Opt, raw, where: str):
    if raw is None:
        return None
    if isinstance(raw, bool):
        return raw
    try:
        if opt.is_flag:
            return _bool(str(raw))
        return opt.type(raw) if isinstance(raw, str) else raw
    except (TypeError, ValueError) as err:
        raise ParameterError(f"bad value for {opt.name} ({where}): {err}") from None


def _read_config_file(path: str) -> dict[str, str]:
    out = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ParameterError(f"{path}:{lineno}: expected key = value")
        key, _, value = stripped.partition("=")
        out[key.strip()] = value.strip()
    return out


def parse_args(argv: list[str]) -> RunConfig:
    """Resolve defaults, config file, and flags into one effective mapping."""
    parser = _build_parser()
    ns = parser.parse_args(argv)
    if ns.subcommand is None:
        parser.error("a subcommand is required")
    opts = {o.name: o for o in _COMMON + _SPECS[ns.subcommand]}

    params = {name: o.default for name, o in opts.items()}
    explicit = {}
    try:
        for name, o in opts.items():
            raw = getattr(ns, name.replace("-", "_"))
            if raw is not None:
                explicit[name] = _convert(o, raw, "flag")
    except ParameterError as err:
        parser.error(str(err))

    warnings = []
    config_path = explicit.get("config")
    file_values = {}
    if config_path:
        try:
            file_values = _read_config_file(config_path)
            for key, value in file_values.items():
                if key not in opts:
                    warnings.append(f"config key {key!r} not used by {ns.subcommand}; ignored")
                    continue
                params[key] = _convert(opts[key], value, f"config {config_path}")
        except (ParameterError, OSError) as err:
            parser.error(str(err))
    for name, value in explicit.items():
        if name in file_values and name in opts and params[name] != value:
            warnings.append(
                f"flag --{name}={value} overrides config value {params[name]!r}"
            )
        params[name] = value

    missing = [o.name for o in opts.values() if o.required and params[o.name] is None]
    if missing:
        parser.error(f"{ns.subcommand}: missing required flag(s): "
                     + ", ".join(f"--{m}" for m in missing))
    return RunConfig(subcommand=ns.subcommand, params=params, warnings=warnings)


# ---------------------------------------------------------------------------
# Manifest


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(cfg: RunConfig, out_dir: Path, inputs: list, outputs: list) -> Path:
    manifest = {
        "subcommand": cfg.subcommand,
        "package_version": __version__,
        "model_format_version": MODEL_VERSION,
        "seed": cfg.params.get("seed"),
        "effective_config": {
            k: v for k, v in sorted(cfg.params.items()) if k != "config"
        },
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": sorted(str(o) for o in outputs),
    }
    path = out_dir / "run-manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.params["out-dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _label_map(cfg: RunConfig):
    rules = None
    if cfg.params.get("label-rules"):
        rules = [
            (p, c)
            for p, c in json.loads(Path(cfg.params["label-rules"]).read_text("utf-8"))
        ]
    return label_map_for(cfg.params["profile"], rules)


# ---------------------------------------------------------------------------
# Subcommand bodies


def _cmd_preprocess(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    label_map = _label_map(cfg)
    records = parse_flow_csv(cfg.params["data"], profile=label_map.profile)
    labels = map_labels(records, label_map)
    ds, report = clean(records, labels, label_map,
                       zero_threshold=cfg.params["zero-threshold"])
    categorical = [c for c in cfg.params["categorical"] if c in ds.columns]
    ds = encode_categorical(ds, categorical)

    prepared = out / "prepared.csv"
    write_dataset_csv(ds, prepared)
    (out / "clean_report.txt").write_text(report.render() + "\n", encoding="utf-8")
    (out / "encodings.json").write_text(
        json.dumps({k: list(v) for k, v in ds.encodings.items()}, indent=2, sort_keys=True)
        + "\n",
        encoding="utf-8",
    )
    print(f"[preprocess] {report.rows_in} rows in, {ds.n_rows} out, "
          f"{len(ds.columns)} features kept")
    _write_manifest(cfg, out, [cfg.params["data"]],
                    [prepared, out / "clean_report.txt", out / "encodings.json"])
    return EXIT_OK


def _cmd_select_features(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    ds = read_prepared_csv(cfg.params["data"], label_map_for(cfg.params["profile"]))
    ranking = rfe(
        ds.matrix,
        ds.labels,
        target_k=cfg.params["target-k"],
        step=cfg.params["step"],
        feature_names=list(ds.columns),
        n_trees=cfg.params["trees"],
        max_depth=cfg.params["max-depth"],
        min_leaf=cfg.params["min-leaf"],
        max_features=cfg.params["max-features"],
        seed=cfg.params["seed"],
    )
    features_path = out / "selected_features.txt"
    features_path.write_text("\n".join(ranking.selected) + "\n", encoding="utf-8")
    report_path = out / "feature_importance.txt"
    report_path.write_text(ranking.report() + "\n", encoding="utf-8")
    print(f"[select-features] kept {len(ranking.selected)} of "
          f"{len(ranking.selected) + len(ranking.eliminated)} features")
    _write_manifest(cfg, out, [cfg.params["data"]], [features_path, report_path])
    return EXIT_OK


def _cmd_resample(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    ds = read_prepared_csv(cfg.params["data"], label_map_for(cfg.params["profile"]))
    scaler = fit_minmax(ds)
    scaled = apply_minmax(ds, scaler)
    resampled, report = resample_pipeline(
        scaled,
        ResampleConfig(
            smote_k=cfg.params["smote-k"],
            enn_k=cfg.params["enn-k"],
            seed=cfg.params["seed"],
        ),
    )
    out_csv = out / "resampled.csv"
    write_dataset_csv(resampled, out_csv)
    report_path = out / "resample_report.txt"
    report_path.write_text(report.render() + "\n", encoding="utf-8")
    print(report.render())
    _write_manifest(cfg, out, [cfg.params["data"]], [out_csv, report_path])
    return EXIT_OK


def _project(ds: Dataset, names: list[str]) -> Dataset:
    from dataclasses import replace

    missing = [n for n in names if n not in ds.columns]
    if missing:
        raise ParameterError(f"selected feature(s) missing from data: {missing}")
    cols = [ds.columns.index(n) for n in names]
    return replace(
        ds,
        columns=tuple(names),
        matrix=ds.matrix[:, cols],
        encodings={k: v for k, v in ds.encodings.items() if k in names},
    )


def _cmd_train(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    label_map = label_map_for(cfg.params["profile"])
    ds = read_prepared_csv(cfg.params["data"], label_map)

    inputs = [cfg.params["data"]]
    if cfg.params.get("features"):
        names = [
            ln.strip()
            for ln in Path(cfg.params["features"]).read_text("utf-8").splitlines()
            if ln.strip()
        ]
        ds = _project(ds, names)
        inputs.append(cfg.params["features"])
    encodings = {}
    if cfg.params.get("encodings"):
        encodings = {
            k: tuple(v)
            for k, v in json.loads(Path(cfg.params["encodings"]).read_text("utf-8")).items()
            if k in ds.columns
        }
        inputs.append(cfg.params["encodings"])

    filters = cfg.params["conv-filters"]
    mconf = ModelConfig(
        conv_blocks=tuple((f, cfg.params["kernel"], cfg.params["pool"]) for f in filters),
        dropout_rates=tuple(cfg.params["dropout"]),
        lstm_units=tuple(cfg.params["lstm"]),
        epochs=cfg.params["epochs"],
        batch_size=cfg.params["batch-size"],
        learning_rate=cfg.params["learning-rate"],
        seed=cfg.params["seed"],
    )

    train_ds, test_ds = split_dataset(ds, train_frac=cfg.params["train-frac"],
                                      seed=cfg.params["seed"])
    scaler = fit_minmax(train_ds)
    train_scaled = apply_minmax(train_ds, scaler)
    test_scaled = apply_minmax(test_ds, scaler)
    if not cfg.params["no-resample"]:
        train_scaled, rep = resample_pipeline(
            train_scaled,
            ResampleConfig(
                smote_k=cfg.params["smote-k"],
                enn_k=cfg.params["enn-k"],
                seed=cfg.params["seed"],
            ),
        )
        print(rep.render())

    net = build_cnn_lstm(mconf, n_features=ds.n_features, n_classes=len(ds.class_names))
    print(net.summary())
    history = train_model(net, train_scaled.matrix, train_scaled.labels)
    for h in history:
        print(f"[train] epoch {h.epoch}: loss={h.loss:.4f} acc={h.accuracy:.4f}")

    tm = TrainedModel(
        net=net,
        config=mconf,
        feature_names=ds.columns,
        scaler=scaler,
        label_map=label_map,
        encodings=encodings,
        history=history,
    )
    model_path = Path(cfg.params["model-out"]) if cfg.params.get("model-out") else out / "model.nidm"
    save_model(tm, model_path)

    report = evaluate_model(net, test_scaled.matrix, test_scaled.labels, ds.class_names)
    (out / "metrics.txt").write_text(report.render_text() + "\n", encoding="utf-8")
    (out / "metrics.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out / "confusion.csv").write_text(report.confusion_csv() + "\n", encoding="utf-8")
    print(report.render_text())
    _write_manifest(cfg, out, inputs,
                    [model_path, out / "metrics.txt", out / "metrics.json",
                     out / "confusion.csv"])
    return EXIT_OK


def _load_scorable(cfg: RunConfig, tm: TrainedModel):
    """Parse a raw CSV and transform it into the model's input space.

    Rows with missing-flagged values cannot be scored offline and are dropped
    with a notice (strict parsing still rejects malformed rows outright).
    """
    records = parse_flow_csv(cfg.params["data"])
    keep = [r for r in records if not r.missing]
    dropped = len(records) - len(keep)
    if dropped:
        print(f"[evaluate] dropped {dropped} row(s) with missing values")
    labels = map_labels(keep, tm.label_map)
    ds = dataset_from_records(keep, labels, tm.label_map)
    return tm.transform_dataset(ds), ds.labels


def _cmd_evaluate(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    tm = load_model(cfg.params["model"])
    X, y = _load_scorable(cfg, tm)
    report = evaluate_model(tm.net, X, y, tm.class_names)
    (out / "metrics.txt").write_text(report.render_text() + "\n", encoding="utf-8")
    (out / "metrics.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out / "confusion.csv").write_text(report.confusion_csv() + "\n", encoding="utf-8")
    print(report.render_text())
    _write_manifest(cfg, out, [cfg.params["model"], cfg.params["data"]],
                    [out / "metrics.txt", out / "metrics.json", out / "confusion.csv"])
    return EXIT_OK


def _cmd_predict(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    tm = load_model(cfg.params["model"])
    X, _ = _load_scorable(cfg, tm)
    probs = tm.predict_proba(X)
    preds = probs.argmax(axis=1)
    lines = ["row,verdict,confidence"]
    for i, (p, row) in enumerate(zip(preds, probs)):
        lines.append(f"{i},{tm.class_names[p]},{row[p]:.6f}")
    out_path = out / "predictions.csv"
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"[predict] scored {len(preds)} rows -> {out_path}")
    _write_manifest(cfg, out, [cfg.params["model"], cfg.params["data"]], [out_path])
    return EXIT_OK


def _cmd_monitor(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    tm = load_model(cfg.params["model"])
    mconf = MonitorConfig(
        stage=cfg.params["stage"],
        alert_threshold=cfg.params["threshold"],
        anomalous_classes=tuple(cfg.params["anomalous"]) if cfg.params.get("anomalous") else None,
        follow=cfg.params["follow"],
        poll_interval=cfg.params["poll-interval"],
        idle_timeout=cfg.params["idle-timeout"],
    )
    log_path = Path(cfg.params["log"]) if cfg.params.get("log") else out / f"{mconf.stage}.log"
    summary = run_monitor(cfg.params["input"], tm, mconf, log_path=log_path)
    print(f"[monitor] stage={summary.stage} total={summary.total} "
          f"anomalies={summary.anomalies} skipped={summary.skipped}")
    _write_manifest(cfg, out, [cfg.params["model"], cfg.params["input"]], [log_path])
    return summary.exit_status


def _cmd_stage_run(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    tm = load_model(cfg.params["model"])
    stage_inputs = {
        "build": cfg.params["build-input"],
        "test": cfg.params["test-input"],
        "deploy": cfg.params["deploy-input"],
        "monitor": cfg.params["monitor-input"],
    }
    summaries, status = stage_run(
        tm,
        stage_inputs,
        out,
        alert_threshold=cfg.params["threshold"],
        anomalous_classes=tuple(cfg.params["anomalous"]) if cfg.params.get("anomalous") else None,
    )
    for stage, summary in summaries.items():
        if summary is None:
            print(f"[stage-run] {stage}: operational failure")
        else:
            print(f"[stage-run] {stage}: total={summary.total} anomalies={summary.anomalies}")
    _write_manifest(cfg, out, [cfg.params["model"]] + list(stage_inputs.values()),
                    [out / f"{s}.log" for s in summaries])
    return status


_COMMANDS = {
    "preprocess": _cmd_preprocess,
    "select-features": _cmd_select_features,
    "resample": _cmd_resample,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "predict": _cmd_predict,
    "monitor": _cmd_monitor,
    "stage-run": _cmd_stage_run,
}


def run(cfg: RunConfig) -> int:
    for warning in cfg.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    try:
        return _COMMANDS[cfg.subcommand](cfg)
    except (FlowSentryError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAILURE


def main(argv=None) -> int:
    try:
        cfg = parse_args(sys.argv[1:] if argv is None else argv)
    except _UsageExit as ex:
        return int(ex.code)
    except SystemExit as ex:                     # --help lands here with code 0
        return int(ex.code or 0)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
