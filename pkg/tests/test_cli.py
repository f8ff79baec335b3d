import pandas as pd
import pytest

from cli import EXIT_ALERT, EXIT_CLEAN, EXIT_FATAL, main
from models import BaselineSpec, Similarity, SybilSpec, UptimePattern
from synth import generate, write_stream


def archive(tmp_path, baseline, groups=()):
    stream = generate(baseline, groups)
    write_stream(stream, tmp_path / "archive")
    return stream, str(tmp_path / "archive")


def test_churn_on_a_quiet_stream(tmp_path):
    _, source = archive(tmp_path, BaselineSpec(relay_count=20, duration_hours=3, rng_seed=1))
    out = tmp_path / "out"
    assert main(["churn", "--input", source, "--out", str(out)]) == EXIT_CLEAN

    frame = pd.read_csv(out / "churn.csv")
    assert len(frame) == 2
    assert (frame["alpha_new"] == 0).all()
    assert pd.read_csv(out / "churn_alerts.csv").empty
    assert pd.read_csv(out / "new_fingerprints.csv")["alert"].tolist() == [0, 0, 0]


def test_churn_spike_raises_alert(tmp_path):
    _, source = archive(tmp_path, BaselineSpec(relay_count=200, duration_hours=10, rng_seed=1),
                        [SybilSpec(name="spike", group_size=100, join_time=5)])
    out = tmp_path / "out"
    assert main(["churn", "--input", source, "--out", str(out), "--window", "1", "--sweep"]) == EXIT_ALERT

    alerts = pd.read_csv(out / "churn_alerts.csv")
    assert alerts["timestamp"].tolist() == ["2015-10-01T05:00:00"]
    assert alerts["value"].iloc[0] == pytest.approx(100 / 300)
    fresh = pd.read_csv(out / "new_fingerprints.csv")
    assert fresh.loc[fresh["alert"] == 1, "new_fingerprints"].tolist() == [100]
    sweep = pd.read_csv(out / "churn_sweep.csv", keep_default_na=False)
    assert list(sweep.columns) == ["flag", "window", "threshold", "count"]
    assert set(sweep["flag"]) == {""}


def test_churn_with_date_range(tmp_path):
    _, source = archive(tmp_path, BaselineSpec(relay_count=200, duration_hours=10, rng_seed=1),
                        [SybilSpec(name="spike", group_size=100, join_time=5)])
    out = tmp_path / "out"
    status = main(["churn", "--input", source, "--out", str(out), "--from", "2015-10-01T06:00:00"])
    assert status == EXIT_CLEAN
    assert len(pd.read_csv(out / "churn.csv")) == 3


def test_uptime_writes_images_and_columns(tmp_path):
    stream, source = archive(tmp_path, BaselineSpec(relay_count=12, duration_hours=24, rng_seed=3),
                             [SybilSpec(name="night", group_size=4, join_time=0, uptime_pattern=UptimePattern.DIURNAL,
                                        on_hours=6, off_hours=6)])
    out = tmp_path / "out"
    assert main(["uptime", "--input", source, "--out", str(out), "--width", "10"]) == EXIT_CLEAN

    images = sorted(out.glob("uptime-2015-10-01-*.ppm"))
    assert len(images) == 2
    assert images[0].read_bytes().startswith(b"P6\n10 24\n255\n")
    columns = pd.read_csv(out / "uptime-2015-10-01-columns.csv", dtype={"fingerprint": str})
    assert len(columns) == 16
    assert set(stream.ledger["night"]) <= set(columns.loc[columns["identical_run"] >= 0, "fingerprint"])


def test_fingerprints_ranks_changers(tmp_path):
    stream, source = archive(tmp_path, BaselineSpec(relay_count=10, duration_hours=12, rng_seed=8),
                             [SybilSpec(name="ec2", group_size=3, join_time=0, fingerprint_churn=4)])
    out = tmp_path / "out"
    assert main(["fingerprints", "--input", source, "--out", str(out), "--top", "3"]) == EXIT_CLEAN
    frame = pd.read_csv(out / "fingerprints.csv")
    assert frame["distinct_fingerprints"].tolist()[:4] == [4, 4, 4, 1]


def test_neighbors_by_nickname_and_accuracy(tmp_path):
    stream, source = archive(tmp_path, BaselineSpec(relay_count=80, duration_hours=2, rng_seed=4),
                             [SybilSpec(name="AccessNow", group_size=10, join_time=0)])
    out = tmp_path / "out"
    truth = str(tmp_path / "archive" / "ground_truth.csv")
    status = main(["neighbors", "--input", source, "--out", str(out), "--seed", "AccessNow000", "--top", "9",
                   "--accuracy", truth])
    assert status == EXIT_CLEAN

    ranking = pd.read_csv(out / "neighbors.csv", dtype={"fingerprint": str})
    assert list(ranking.columns) == ["rank", "fingerprint", "nickname", "distance", "relay_string"]
    assert set(ranking["fingerprint"]) == set(stream.ledger["AccessNow"][1:])
    accuracy = pd.read_csv(out / "neighbors_accuracy.csv")
    assert len(accuracy) == 10
    assert (accuracy["accuracy"] == 1.0).all()


def test_run_combines_modules_into_suspects(tmp_path):
    stream, source = archive(tmp_path, BaselineSpec(relay_count=30, duration_hours=30, rng_seed=6),
                             [SybilSpec(name="default", group_size=8, join_time=2,
                                        uptime_pattern=UptimePattern.DIURNAL, on_hours=9, off_hours=15,
                                        similarity=Similarity.CLONE)])
    out = tmp_path / "out"
    status = main(["run", "--modules", "churn,uptime,fingerprints", "--input", source, "--out", str(out)])
    assert status == EXIT_ALERT

    suspects = pd.read_csv(out / "suspects.csv", dtype={"fingerprint": str})
    assert list(suspects.columns) == ["fingerprint", "modules", "count"]
    assert set(stream.ledger["default"]) <= set(suspects["fingerprint"])
    assert (suspects["count"] >= 2).all()


def test_artifacts_are_deterministic(tmp_path):
    _, source = archive(tmp_path, BaselineSpec(relay_count=25, hourly_join_rate=0.1, hourly_leave_rate=0.1,
                                               duration_hours=20, rng_seed=9))
    first, second = tmp_path / "first", tmp_path / "second"
    for out in (first, second):
        main(["run", "--modules", "churn,uptime", "--input", source, "--out", str(out), "--workers", "3"])
    names = sorted(p.name for p in first.iterdir())
    assert names == sorted(p.name for p in second.iterdir())
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_synth_command(tmp_path):
    spec = tmp_path / "spec.yaml"
    spec.write_text("baseline.relay_count: 6\nbaseline.duration_hours: 4\n"
                    "sybil.g.group_size: 3\nsybil.g.join_time: 1\n")
    out = tmp_path / "synthetic"
    assert main(["synth", "--spec", str(spec), "--out", str(out)]) == EXIT_CLEAN
    assert len(list((out / "consensuses").iterdir())) == 4
    assert (out / "ground_truth.csv").exists()


def test_plots_are_written(tmp_path):
    _, source = archive(tmp_path, BaselineSpec(relay_count=20, hourly_join_rate=0.05, hourly_leave_rate=0.05,
                                               duration_hours=12, rng_seed=2))
    out = tmp_path / "out"
    main(["run", "--modules", "churn,fingerprints", "--input", source, "--out", str(out), "--plot", "--sweep"])
    for name in ("churn.png", "churn_sweep.png", "fingerprints.png"):
        assert (out / name).stat().st_size > 0


@pytest.mark.parametrize("argv", [
    ["churn", "--threshold", "-1"],
    ["churn", "--window", "0"],
    ["churn", "--flags", "Speedy"],
    ["neighbors"],
    ["run", "--modules", "churn,teleport"],
    ["churn", "--from", "2015-10-02", "--to", "2015-10-01"],
    ["bogus"],
])
def test_invalid_configuration_is_fatal(tmp_path, argv):
    _, source = archive(tmp_path, BaselineSpec(relay_count=5, duration_hours=2))
    command, *rest = argv
    assert main([command, "--input", source, "--out", str(tmp_path / "out"), *rest]) == EXIT_FATAL


def test_missing_input_is_fatal(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["churn", "--input", str(tmp_path / "empty"), "--out", str(tmp_path / "out")]) == EXIT_FATAL
    assert main(["churn", "--out", str(tmp_path / "out")]) == EXIT_FATAL
