"""End-to-end CLI runs on a tiny dataset."""


import pytest

from spklab.cli import main
from spklab.dataset import load_dataset
from spklab.training import load_checkpoint

TINY_CFG = """
[dataset]
n_speakers_train = 10
n_speakers_dev = 4
n_speakers_cohort = 5
n_speakers_test = 4
files_per_speaker = 3
chunks_per_file = 3
feature_dim = 12
intra_speaker_spread = 0.3
trials_per_speaker = 6

[encoder]
hidden_dim = 12
embedding_dim = 8

[training]
epochs = 2
grid_epochs = 1
speakers_per_batch = 5
lr_grid = 0.01, 0.1

[eval]
n_bootstrap = 100
compare_losses = aam, coco
"""


@pytest.fixture()
def workdir(tmp_path):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY_CFG)
    data = tmp_path / "data"
    rc = main(["gen-data", "--config", str(cfg), "--seed", "3", "--out", str(data)])
    assert rc == 0
    return tmp_path, cfg, data


def test_gen_data_writes_dataset(workdir):
    tmp_path, cfg, data = workdir
    ds = load_dataset(data)
    assert len(ds.partitions["train"]) == 10
    assert ds.feature_dim == 12
    assert (data / "manifest.txt").exists()


def test_train_and_evaluate(workdir):
    tmp_path, cfg, data = workdir
    run = tmp_path / "run"
    rc = main(["train", "--config", str(cfg), "--seed", "3",
               "--data", str(data), "--out", str(run)])
    assert rc == 0
    ckpt_path = run / "best.ckpt"
    assert ckpt_path.exists()
    ckpt, echo = load_checkpoint(ckpt_path)
    assert echo["loss_kind"] == "'aam'"
    curve = (run / "dev_eer_curve.txt").read_text().splitlines()
    assert len(curve) == 2

    out = tmp_path / "eval"
    rc = main(["evaluate", "--config", str(cfg), "--seed", "3", "--data", str(data),
               "--out", str(out), "--checkpoint", str(ckpt_path)])
    assert rc == 0
    for name in ("scores_test_raw.txt", "report_raw.txt", "det_raw.csv",
                 "scores_test_snorm.txt", "report_snorm.txt"):
        assert (out / name).exists()
    report = (out / "report_snorm.txt").read_text()
    assert "top_n:" in report


def test_grid_search_writes_choice(workdir):
    tmp_path, cfg, data = workdir
    out = tmp_path / "grid"
    rc = main(["grid-search", "--config", str(cfg), "--seed", "3",
               "--data", str(data), "--out", str(out)])
    assert rc == 0
    text = (out / "chosen_config.txt").read_text()
    assert "learning_rate" in text


def test_compare_emits_csv(workdir):
    tmp_path, cfg, data = workdir
    out = tmp_path / "cmp"
    rc = main(["compare", "--config", str(cfg), "--seed", "3",
               "--data", str(data), "--out", str(out)])
    assert rc == 0
    lines = (out / "compare.csv").read_text().splitlines()
    assert lines[0] == "loss,eer_raw,ci_low,ci_high,eer_snorm,improvement_pct"
    assert len(lines) == 3
    assert lines[1].startswith("aam,") and lines[2].startswith("coco,")
    for kind in ("aam", "coco"):
        assert (out / kind / "best.ckpt").exists()
        assert (out / kind / "report_raw.txt").exists()
        assert (out / kind / "report_snorm.txt").exists()
        assert (out / kind / "result.txt").exists()


def test_missing_data_dir_fails_cleanly(tmp_path, capsys):
    rc = main(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_bad_config_fails_cleanly(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[nosuchsection]\nkey = 1\n")
    rc = main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "d")])
    assert rc == 1
    assert "unknown section" in capsys.readouterr().err
