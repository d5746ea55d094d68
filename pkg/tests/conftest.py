"""Shared fixtures: a small synthetic corpus and a fixture model trained on it.

Everything here is session-scoped and seeded, so the suite sees one corpus and
one model no matter which subset of tests runs.
"""

import pytest

from flowsentry import featsel, flowdata, pipeline, synth

CORPUS_SEED = 3
CORPUS_SEPARATION = 1.8

TINY_CONFIG = pipeline.ModelConfig(
    conv_blocks=((8, 3, 2), (8, 3, 2)),
    dropout_rates=(0.1,),
    lstm_units=(8,),
    epochs=60,
    batch_size=64,
    learning_rate=0.01,
    seed=0,
)


@pytest.fixture(scope="session")
def work_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("corpus")


@pytest.fixture(scope="session")
def raw_csv_path(work_dir):
    path = work_dir / "raw.csv"
    path.write_text(
        synth.flow_csv(600, profile="ids2017", seed=CORPUS_SEED,
                       missing_fraction=0.01, separation=CORPUS_SEPARATION),
        encoding="utf-8",
    )
    return path


@pytest.fixture(scope="session")
def label_map():
    return flowdata.label_map_for("ids2017")


@pytest.fixture(scope="session")
def prepared(raw_csv_path, label_map):
    """Cleaned, encoded Dataset plus its CleanReport."""
    records = flowdata.parse_flow_csv(raw_csv_path, profile="ids2017")
    labels = flowdata.map_labels(records, label_map)
    ds, report = flowdata.clean(records, labels, label_map)
    ds = flowdata.encode_categorical(ds, ["Protocol"])
    return ds, report


@pytest.fixture(scope="session")
def tiny_model(prepared, label_map, work_dir):
    """A quickly trained but usable model, saved once for the whole session.

    Returns a dict with the TrainedModel, its on-disk path, the scaled splits,
    and the evaluation report on the held-out part.
    """
    ds, _ = prepared
    train, test = pipeline.split_dataset(ds, seed=0)
    scaler = featsel.fit_minmax(train)
    train_s = featsel.apply_minmax(train, scaler)
    test_s = featsel.apply_minmax(test, scaler)
    net = pipeline.build_cnn_lstm(TINY_CONFIG, ds.n_features, len(ds.class_names))
    history = pipeline.train_model(net, train_s.matrix, train_s.labels)
    tm = pipeline.TrainedModel(
        net=net,
        config=TINY_CONFIG,
        feature_names=ds.columns,
        scaler=scaler,
        label_map=label_map,
        encodings=dict(ds.encodings),
        history=history,
    )
    path = work_dir / "tiny.nidm"
    pipeline.save_model(tm, path)
    report = pipeline.evaluate_model(net, test_s.matrix, test_s.labels, ds.class_names)
    return {
        "tm": tm,
        "path": path,
        "train": train_s,
        "test": test_s,
        "report": report,
        "history": history,
    }


def _rows_by_verdict(tm, path, want, threshold, limit):
    """Raw CSV lines (with header) whose model verdict matches `want`."""
    header = path.read_text(encoding="utf-8").splitlines()[0]
    picked = []
    for _, record, err in flowdata.iter_flow_rows(path):
        if err is not None or record.missing:
            continue
        row = tm.transform_record(record)
        probs = tm.predict_proba(row[None, :])[0]
        cls = int(probs.argmax())
        name = tm.class_names[cls]
        anomalous = name != "Benign" and probs[cls] >= threshold
        if (want == "anomaly") == anomalous:
            picked.append((record, float(probs[cls]), name))
        if len(picked) >= limit:
            break
    return header, picked


@pytest.fixture(scope="session")
def monitor_fixtures(tiny_model, work_dir):
    """Gate-test CSVs picked by the fixture model's own verdicts.

    three_flow.csv holds two rows the model passes and one it flags at or
    above the default threshold; clean.csv holds only passing rows.
    """
    tm = tiny_model["tm"]

    mixed_path = work_dir / "pool_mixed.csv"
    mixed_path.write_text(
        synth.flow_csv(120, profile="ids2017", seed=9, missing_fraction=0.0,
                       separation=CORPUS_SEPARATION),
        encoding="utf-8",
    )
    benign_path = work_dir / "pool_benign.csv"
    benign_path.write_text(
        synth.flow_csv(60, profile="ids2017", seed=11, benign_only=True,
                       missing_fraction=0.0, separation=CORPUS_SEPARATION),
        encoding="utf-8",
    )

    def raw_line(path, record):
        for line in path.read_text(encoding="utf-8").splitlines()[1:]:
            if line.startswith(record.identity.flow_id + ","):
                return line
        raise AssertionError(f"fixture row {record.identity.flow_id} not found")

    header, anomalies = _rows_by_verdict(tm, mixed_path, "anomaly", 0.5, 1)
    _, passing = _rows_by_verdict(tm, benign_path, "pass", 0.5, 8)
    assert anomalies and len(passing) >= 3, "fixture model too weak to craft gates"

    three = work_dir / "three_flow.csv"
    three.write_text(
        "\n".join(
            [header,
             raw_line(benign_path, passing[0][0]),
             raw_line(mixed_path, anomalies[0][0]),
             raw_line(benign_path, passing[1][0])]
        ) + "\n",
        encoding="utf-8",
    )
    clean = work_dir / "clean_gate.csv"
    clean.write_text(
        "\n".join([header] + [raw_line(benign_path, p[0]) for p in passing]) + "\n",
        encoding="utf-8",
    )
    return {"three_flow": three, "clean": clean, "anomaly_verdict": anomalies[0][2]}
