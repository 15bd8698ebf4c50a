import numpy as np
import pytest

from denise.cli import main
from denise.metrics import load_report
from denise.pipeline import PipelineConfig, run_pipeline
from denise.raster import probmap_to_raster, write_raster
from denise.synth import load_manifest

SMALL = ["--n", "30", "--image-size", "32", "--epochs", "2"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    assert main(["synth", "--out", str(root / "data"), "--run-dir", str(root / "run"),
                 "--n", "20", "--image-size", "32", "--seed", "3"]) == 0
    return root / "data" / "manifest.txt"


def test_synth_writes_manifest_and_run_log(dataset):
    m = load_manifest(dataset)
    assert m.counts() == {"train": 16, "val": 2, "test": 2}
    log = (dataset.parent.parent / "run" / "run.log").read_text()
    assert "seed=3" in log and "wall_time_s=" in log


def test_stepwise_commands(dataset, tmp_path):
    run = ["--run-dir", str(tmp_path / "run")]
    assert main(["train", "--manifest", str(dataset), "--epochs", "2",
                 "--out", str(tmp_path / "m.dnw"), *run]) == 0
    assert main(["predict", "--manifest", str(dataset), "--split", "all",
                 "--model", str(tmp_path / "m.dnw"), "--out", str(tmp_path / "p1"), *run]) == 0
    assert main(["enhance", "--manifest", str(dataset), "--predictions", str(tmp_path / "p1"),
                 "--variant", "seg", "--mode", "concat4", "--out", str(tmp_path / "enh"), *run]) == 0
    enhanced = load_manifest(tmp_path / "enh" / "manifest.txt")
    assert all(e.image.endswith(".dpf") for e in enhanced.entries)
    assert len((tmp_path / "enh" / "provenance.txt").read_text().splitlines()) == 20
    assert main(["train", "--manifest", str(tmp_path / "enh" / "manifest.txt"), "--epochs", "2",
                 "--out", str(tmp_path / "m4.dnw"), *run]) == 0
    assert main(["predict", "--manifest", str(tmp_path / "enh" / "manifest.txt"),
                 "--model", str(tmp_path / "m4.dnw"), "--out", str(tmp_path / "p2"), *run]) == 0
    assert main(["eval", "--pred", str(tmp_path / "p2"), "--manifest", str(dataset),
                 "--out", str(tmp_path / "r2.txt"), *run]) == 0
    assert main(["predict", "--manifest", str(dataset), "--sobel",
                 "--out", str(tmp_path / "p3"), *run]) == 0
    assert main(["eval", "--pred", str(tmp_path / "p3"), "--manifest", str(dataset),
                 "--out", str(tmp_path / "r3.txt"), *run]) == 0
    assert main(["compare", "--baseline", str(tmp_path / "r3.txt"),
                 "--enhanced", str(tmp_path / "r2.txt"), *run]) == 0
    assert "Standalone" in (tmp_path / "run" / "comparison.txt").read_text()
    assert len(load_report(tmp_path / "r2.txt").per_image) == 2


def test_enhance_missing_prediction_exit_code(dataset, tmp_path, capsys):
    m = load_manifest(dataset)
    preds = tmp_path / "preds"
    preds.mkdir()
    for e in m.entries[1:]:
        write_raster(probmap_to_raster(np.zeros((32, 32))), preds / f"{e.sample_id}.dpf")
    code = main(["enhance", "--manifest", str(dataset), "--predictions", str(preds),
                 "--run-dir", str(tmp_path / "run")])
    assert code == 3
    assert m.entries[0].sample_id in capsys.readouterr().err


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["pipeline", "--variant", "bogus"]) == 2
    assert main(["pipeline", "--threshold", "0", "--run-dir", str(tmp_path)]) == 2
    assert main(["nonsense"]) == 2
    (tmp_path / "bad.cfg").write_text("no_such_key=1\n")
    assert main(["synth", "--config", str(tmp_path / "bad.cfg"), "--run-dir", str(tmp_path)]) == 2


def test_missing_manifest_exit_3(tmp_path):
    assert main(["train", "--manifest", str(tmp_path / "none.txt"), "--run-dir", str(tmp_path)]) == 3


def test_config_file_defaults_and_flag_precedence(tmp_path, dataset):
    cfg = tmp_path / "train.cfg"
    cfg.write_text(f"# comment\nmanifest={dataset}\nepochs=1\nlearning-rate=0.5\n")
    assert main(["train", "--config", str(cfg), "--epochs", "2", "--run-dir", str(tmp_path / "r")]) == 0
    log = (tmp_path / "r" / "run.log").read_text()
    assert "epochs=2" in log and "learning_rate=0.5" in log


def test_run_dir_from_environment(tmp_path, monkeypatch, dataset):
    monkeypatch.setenv("DENISE_RUN_ROOT", str(tmp_path / "root"))
    assert main(["predict", "--manifest", str(dataset), "--sobel", "--run-id", "x1"]) == 0
    assert (tmp_path / "root" / "predict-x1" / "run.log").exists()


def test_baseline_only_skips_enhancement(tmp_path):
    assert main(["pipeline", "--baseline-only", "--run-dir", str(tmp_path), *SMALL]) == 0
    assert (tmp_path / "baseline" / "report.txt").exists()
    for name in ("stage1", "enhanced", "denise", "comparison.txt"):
        assert not (tmp_path / name).exists()


def test_pipeline_rerun_from_run_log(tmp_path):
    first = tmp_path / "a"
    assert main(["pipeline", "--variant", "edge", "--mode", "concat4", "--seed", "4",
                 "--run-dir", str(first), *SMALL]) == 0
    second = tmp_path / "b"
    assert main(["pipeline", "--config", str(first / "run.log"), "--run-dir", str(second)]) == 0
    assert (first / "comparison.txt").read_bytes() == (second / "comparison.txt").read_bytes()


@pytest.mark.parametrize("variant, stage1", [("seg", "classifier"), ("seg", "oracle"),
                                             ("edge", "sobel"), ("edge", "oracle")])
def test_pipeline_variants(tmp_path, variant, stage1):
    from denise.enhance import EnhanceConfig
    from denise.refmodels import TrainConfig
    from denise.synth import SceneConfig

    cfg = PipelineConfig(run_dir=tmp_path, scene=SceneConfig(image_size=32, seed=1),
                         enhance=EnhanceConfig(variant=variant), train=TrainConfig(epochs=1),
                         n_images=20, stage1=stage1)
    result = run_pipeline(cfg)
    assert result.enhanced.sample_ids == result.baseline.sample_ids
    rows = result.comparison.rows
    assert rows[0].method == "Standalone"
    assert rows[1].method == f"{'Seg' if variant == 'seg' else 'Edge'}-DeNISE (3-channels)"
    assert len(list((tmp_path / "stage1" / "preds").glob("*.dpf"))) == 20


def test_pipeline_external_stage1(tmp_path, dataset):
    m = load_manifest(dataset)
    ext = tmp_path / "ext"
    ext.mkdir()
    for e in m.entries:
        _, mask = m.load(e)
        write_raster(probmap_to_raster(mask.astype(np.float32)), ext / f"{e.sample_id}.dpf")
    assert main(["pipeline", "--manifest", str(dataset), "--stage1", f"external:{ext}",
                 "--epochs", "1", "--run-dir", str(tmp_path / "run")]) == 0
    assert "Seg-DeNISE" in (tmp_path / "run" / "comparison.txt").read_text()
