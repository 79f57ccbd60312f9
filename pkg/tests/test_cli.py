import json

import numpy as np
import pytest

from babymamba_har import cli
from babymamba_har import model as mdl
from babymamba_har.datapipe import DatasetManifest, load_csv, window_recordings


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert cli.main(["synth", "--out", str(d), "--subjects", "4", "--windows-per-class", "2",
                     "--seq-len", "32", "--channels", "3"]) == 0
    return d


@pytest.fixture(scope="module")
def tiny_config(dataset):
    cfg = {"model": {"d_model": 6, "d_state": 2, "n_layers": 1},
           "train": {"max_epochs": 2, "batch_size": 8},
           "manifest": f"{dataset.name}/manifest.json"}
    path = dataset.parent / "tiny.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def run_dir(tiny_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "r"
    assert cli.main(["train", "--config", str(tiny_config), "--seeds", "2", "--out", str(out)]) == 0
    return out


def test_synth_output_loads_and_is_balanced(dataset):
    m = DatasetManifest.load(dataset / "manifest.json")
    recs = load_csv(m.data_path(dataset / "manifest.json"), m.fs)
    assert len(recs) == 4 and recs[0].channels == 3
    counts = np.bincount(window_recordings(recs, 32, 32).y)
    assert counts.max() - counts.min() <= 1


def test_synth_is_seed_deterministic(tmp_path):
    for name in ("a", "b"):
        cli.main(["synth", "--out", str(tmp_path / name), "--subjects", "2", "--windows-per-class", "1"])
    assert (tmp_path / "a" / "data.csv").read_bytes() == (tmp_path / "b" / "data.csv").read_bytes()


def test_count_json_matches_table(tmp_path, capsys):
    js = tmp_path / "c.json"
    assert cli.main(["count", "--variant", "ci", "--preset", "opportunity", "--json", str(js)]) == 0
    text = capsys.readouterr().out
    rep = json.loads(js.read_text())["report"]
    total_line = next(line for line in text.splitlines() if line.startswith("total"))
    assert total_line.split()[1:] == [f"{rep['total_params']:,}", f"{rep['total_macs']:,}"]
    assert 111.155e6 <= rep["total_macs"] <= 333.465e6


def test_count_table1_average(tmp_path):
    js = tmp_path / "c.json"
    assert cli.main(["count", "--presets", "table1", "--json", str(js)]) == 0
    avg = json.loads(js.read_text())["presets"]["average"]
    assert 1.105e6 <= avg <= 3.315e6


def test_run_directory_contents(run_dir):
    for name in ("config.json", "manifest.json", "val_windows.npz", "results.json"):
        assert (run_dir / name).exists()
    agg = json.loads((run_dir / "results.json").read_text())
    assert agg["seeds"] == [0, 1]
    per_seed = [json.loads((run_dir / f"seed_{s}" / "results.json").read_text())["macro_f1"] for s in (0, 1)]
    assert agg["mean_macro_f1"] == pytest.approx(np.mean(per_seed), abs=1e-15)
    eff = json.loads((run_dir / "config.json").read_text())
    assert eff["model"]["d_model"] == 6 and eff["train"]["n_seeds"] == 2
    for s in (0, 1):
        assert len((run_dir / f"seed_{s}" / "epochs.jsonl").read_text().splitlines()) == 2


def test_eval_reproduces_logged_best(run_dir, tmp_path):
    out = tmp_path / "m.json"
    assert cli.main(["eval", "--run", str(run_dir), "--out", str(out)]) == 0
    recs = json.loads(out.read_text())
    for s in (0, 1):
        epochs = [json.loads(x) for x in (run_dir / f"seed_{s}" / "epochs.jsonl").read_text().splitlines()]
        assert recs[f"seed_{s}"]["macro_f1"] == max(e["val_macro_f1"] for e in epochs)


def test_eval_with_manifest(run_dir, dataset, tmp_path):
    out = tmp_path / "m.json"
    assert cli.main(["eval", "--model", str(run_dir / "seed_0" / "model.bmh"),
                     "--manifest", str(dataset / "manifest.json"), "--out", str(out)]) == 0
    logged = json.loads((run_dir / "seed_0" / "results.json").read_text())["macro_f1"]
    assert json.loads(out.read_text())["model.bmh"]["macro_f1"] == logged


def test_eval_errors(run_dir, dataset, tmp_path):
    assert cli.main(["eval", "--model", str(tmp_path / "none.bmh"),
                     "--manifest", str(dataset / "manifest.json")]) == cli.EXIT_DATA
    other = tmp_path / "other"
    cli.main(["synth", "--out", str(other), "--subjects", "3", "--windows-per-class", "1", "--channels", "4",
              "--seq-len", "32"])
    assert cli.main(["eval", "--model", str(run_dir / "seed_0" / "model.bmh"),
                     "--manifest", str(other / "manifest.json")]) == cli.EXIT_DATA
    assert cli.main(["eval"]) == cli.EXIT_CONFIG


def test_train_is_deterministic(tiny_config, tmp_path):
    outs = [tmp_path / n for n in ("a", "b")]
    for o in outs:
        assert cli.main(["train", "--config", str(tiny_config), "--seeds", "1", "--out", str(o)]) == 0
    for name in ("seed_0/model.bmh", "seed_0/epochs.jsonl", "results.json", "config.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    assert len(json.loads((outs[0] / "results.json").read_text())["macro_f1"]) == 1


def test_exit_codes(tmp_path, dataset):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": {"d_model": -1}, "manifest": str(dataset / "manifest.json")}))
    assert cli.main(["train", "--config", str(bad), "--out", str(tmp_path / "x")]) == cli.EXIT_CONFIG
    assert cli.main(["train", "--out", str(tmp_path / "x")]) == cli.EXIT_CONFIG
    assert cli.main(["train", "--manifest", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x")]) == cli.EXIT_DATA
    nan_dir = tmp_path / "nan"
    cli.main(["synth", "--out", str(nan_dir), "--subjects", "3", "--windows-per-class", "1", "--seq-len", "32"])
    csv = nan_dir / "data.csv"
    lines = csv.read_text().splitlines()
    lines[5] = ",".join(lines[5].split(",")[:3] + ["nan"] * 6)
    csv.write_text("\n".join(lines) + "\n")
    code = cli.main(["train", "--manifest", str(nan_dir / "manifest.json"), "--seeds", "1",
                     "--max-epochs", "1", "--out", str(tmp_path / "y"), "--d-model", "4"])
    assert code == cli.EXIT_NUMERIC
    assert len({cli.EXIT_OK, cli.EXIT_CONFIG, cli.EXIT_DATA, cli.EXIT_NUMERIC}) == 4


def test_ablate_params_only_d_state(tmp_path, capsys):
    assert cli.main(["ablate", "--axis", "d_state", "--variant", "ci", "--preset", "uci-har",
                     "--params-only", "--out", str(tmp_path)]) == 0
    rows = json.loads((tmp_path / "ablation.json").read_text())["rows"]
    assert [r["value"] for r in rows] == [16, 8]
    assert -20.0 < rows[1]["delta_params_pct"] < -13.0
    assert "d_state=8" in capsys.readouterr().out


@pytest.mark.parametrize("axis", cli.ABLATION_AXES)
def test_each_axis_moves_exactly_one_field(axis):
    base = mdl.ModelConfig.default("crossover")
    rows = cli.ablation_table(axis, base)
    for r in rows[1:]:
        a, b = base.to_dict(), r["config"].to_dict()
        changed = {k for k in a if a[k] != b[k]}
        assert changed == {cli.AXIS_FIELD[axis]}


def test_ablate_bidir_trains_both_arms(tiny_config, tmp_path, capsys):
    assert cli.main(["ablate", "--config", str(tiny_config), "--axis", "bidir", "--seeds", "1",
                     "--out", str(tmp_path)]) == 0
    rows = json.loads((tmp_path / "ablation.json").read_text())["rows"]
    assert [r["value"] for r in rows] == [True, False]
    assert rows[0]["delta_f1"] == 0.0
    assert rows[1]["delta_f1"] == pytest.approx(rows[1]["mean_macro_f1"] - rows[0]["mean_macro_f1"])
    assert "ΔF1" in capsys.readouterr().out


def test_ablate_pooling_zero_frozen_v_matches_mean(tiny_config, tmp_path):
    assert cli.main(["ablate", "--config", str(tiny_config), "--axis", "pooling", "--seeds", "2",
                     "--zero-frozen-v", "--out", str(tmp_path)]) == 0
    rows = json.loads((tmp_path / "ablation.json").read_text())["rows"]
    gated, mean = rows
    assert gated["value"] == "gated" and mean["value"] == "mean"
    assert gated["macro_f1"] == pytest.approx(mean["macro_f1"], abs=1e-9)
    for s in (0, 1):
        eg = [json.loads(x) for x in (tmp_path / "pooling=gated" / f"seed_{s}" / "epochs.jsonl").read_text().splitlines()]
        em = [json.loads(x) for x in (tmp_path / "pooling=mean" / f"seed_{s}" / "epochs.jsonl").read_text().splitlines()]
        for a, b in zip(eg, em):
            assert a["train_loss"] == pytest.approx(b["train_loss"], rel=1e-9)
    assert cli.main(["ablate", "--axis", "bidir", "--zero-frozen-v", "--params-only"]) == cli.EXIT_CONFIG


def test_ablate_seq_len_rewindows(tiny_config, tmp_path):
    assert cli.main(["ablate", "--config", str(tiny_config), "--axis", "seq_len", "--values", "16",
                     "--seeds", "1", "--max-epochs", "1", "--out", str(tmp_path)]) == 0
    rows = json.loads((tmp_path / "ablation.json").read_text())["rows"]
    assert [r["value"] for r in rows] == [32, 16]
    assert np.load(tmp_path / "seq_len=16" / "val_windows.npz")["X"].shape[-1] == 16
