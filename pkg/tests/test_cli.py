import json

import pytest
from click.testing import CliRunner

from dualshot_app import create_cli
from dualshot_app.runs import MANIFEST_NAME
from dualshot_app.services.evalkit import parse_annotations, parse_detections


@pytest.fixture
def invoke(tmp_path):
    runner = CliRunner()
    cli = create_cli()

    def run(*args, out_dir=None):
        out = out_dir or tmp_path / "out"
        return runner.invoke(cli, ["--out-dir", str(out), *[str(a) for a in args]], catch_exceptions=False)

    return run


def _value(output, key):
    for token in output.split():
        if token.startswith(key + "="):
            return token.split("=", 1)[1]
    raise AssertionError(f"{key} not in {output!r}")


class TestAnchorsDump:

    def test_second_shot_rows(self, invoke, tmp_path):
        result = invoke("anchors", "dump", "--shot", "second")
        assert result.exit_code == 0, result.output
        assert "rows=34125" in result.output
        rows = (tmp_path / "out" / "anchors.csv").read_text(encoding="utf-8").splitlines()
        assert len([r for r in rows if r and r[0].isdigit()]) == 34125
        manifest = json.loads((tmp_path / "out" / MANIFEST_NAME).read_text(encoding="utf-8"))
        assert manifest["command"] == "anchors dump"
        assert list(manifest["artifacts"]) == ["anchors.csv"]

    def test_both_shots(self, invoke):
        result = invoke("anchors", "dump")
        assert result.exit_code == 0, result.output
        assert "rows=68250" in result.output
        assert "level=1 stride=4 map=160x160 count=25600" in result.output


class TestMatchStats:

    @pytest.mark.parametrize("flag, threshold", [("--iam", "0.4"), ("--traditional", "0.35")])
    def test_default_thresholds(self, invoke, flag, threshold):
        result = invoke("match-stats", "--synthetic", 4, flag)
        assert result.exit_code == 0, result.output
        assert _value(result.output, "threshold") == threshold

    def test_rerun_is_byte_identical(self, invoke, tmp_path):
        a = invoke("--threads", 1, "match-stats", "--synthetic", 4, out_dir=tmp_path / "a")
        b = invoke("--threads", 2, "match-stats", "--synthetic", 4, out_dir=tmp_path / "b")
        assert a.exit_code == b.exit_code == 0
        name = "match_stats_iam.csv"
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_annotations_source(self, invoke, tmp_path):
        gt = tmp_path / "gt.txt"
        gt.write_text("a.jpg\n2\n10 10 32 48 0 0 0 0 0 0\n100 120 64 96 0 0 0 0 0 0\n", encoding="utf-8")
        result = invoke("match-stats", "--annotations", gt)
        assert result.exit_code == 0, result.output
        assert _value(result.output, "pipeline") == "iam"
        assert int(_value(result.output, "faces")) <= 2

    def test_missing_annotations(self, invoke, tmp_path):
        result = invoke("match-stats", "--annotations", tmp_path / "missing.txt")
        assert result.exit_code == 2
        assert "error:" in result.output

    def test_needs_one_source(self, invoke):
        assert invoke("match-stats").exit_code == 2


class TestGradcheck:

    def test_fem_passes(self, invoke, tmp_path):
        result = invoke("gradcheck", "--target", "fem")
        assert result.exit_code == 0, result.output
        assert "PASS" in result.output
        assert (tmp_path / "out" / "gradcheck_fem.txt").is_file()

    def test_corrupted_backward_fails(self, invoke):
        result = invoke("gradcheck", "--target", "fem", "--corrupt-backward")
        assert result.exit_code == 1
        assert "FAIL" in result.output


def test_augment_preview(invoke, tmp_path):
    result = invoke("augment-preview", "--synthetic", 1, "--count", 2)
    assert result.exit_code == 0, result.output
    assert result.output.count("branch=") == 2
    preview = tmp_path / "out" / "preview"
    assert (preview / "aug_000_00.ppm").is_file()
    assert (preview / "aug_000_01.txt").is_file()
    assert (preview / MANIFEST_NAME).is_file()


def test_train_predict_eval(invoke, tmp_path):
    out = tmp_path / "out"
    trained = invoke("train-toy", "--steps", 2, "--images", 2)
    assert trained.exit_code == 0, trained.output
    assert _value(trained.output, "steps") == "2"
    assert (out / "toy.ckpt").is_file() and (out / "toy.net.json").is_file()
    losses = (out / "toy_losses.csv").read_text(encoding="utf-8").splitlines()
    assert losses[0] == "step,pal_total,first_conf,first_loc,second_conf,second_loc"
    assert len(losses) == 3

    predicted = invoke("predict", "--ckpt", out / "toy.ckpt", "--images-dir", out / "corpus")
    assert predicted.exit_code == 0, predicted.output
    dets = parse_detections((out / "detections.txt").read_text(encoding="utf-8"))
    assert sorted(dets) == ["img_000.ppm", "img_001.ppm"]
    assert all(len(items) <= 750 for items in dets.values())

    annotations = out / "corpus" / "annotations.txt"
    assert len(parse_annotations(annotations.read_text(encoding="utf-8"))) == 2
    evaluated = invoke("eval", "--annotations", annotations, "--detections", out / "detections.txt")
    assert evaluated.exit_code == 0, evaluated.output
    assert evaluated.output.startswith("AP=")
    assert (out / "pr.csv").read_text(encoding="utf-8").startswith("recall,precision\n")

    listed = invoke("runs", "list")
    commands = [line.split()[2] for line in listed.output.splitlines()]
    assert commands == ["eval", "predict", "train-toy"]


def test_predict_without_images(invoke, tmp_path):
    assert invoke("predict", "--ckpt", tmp_path / "none.ckpt").exit_code == 2


def test_empty_registry(invoke):
    result = invoke("runs", "list")
    assert result.exit_code == 0
    assert "no runs recorded" in result.output


def test_unknown_config_key(invoke, tmp_path):
    settings = tmp_path / "bad.env"
    settings.write_text("bogus = 1\n", encoding="utf-8")
    result = invoke("--config", settings, "runs", "list")
    assert result.exit_code == 2
    assert "unknown config key" in result.output


def test_config_file_reaches_commands(invoke, tmp_path):
    settings = tmp_path / "toy.env"
    settings.write_text("# tiny run\nsteps = 2\nbackbone_channels = 2, 2, 2, 2, 2, 2\n", encoding="utf-8")
    result = invoke("--config", settings, "train-toy", "--images", 1)
    assert result.exit_code == 0, result.output
    assert _value(result.output, "steps") == "2"
    sidecar = json.loads((tmp_path / "out" / "toy.net.json").read_text(encoding="utf-8"))
    assert sidecar["backbone_channels"] == [2, 2, 2, 2, 2, 2]
    assert sidecar["fem_channels"] == 12


def test_command_line_beats_config_file(invoke, tmp_path):
    settings = tmp_path / "toy.env"
    settings.write_text("steps = 2\nbackbone_channels = 2, 2, 2, 2, 2, 2\n", encoding="utf-8")
    result = invoke("--config", settings, "train-toy", "--images", 1, "--steps", 1)
    assert result.exit_code == 0, result.output
    assert _value(result.output, "steps") == "1"


@pytest.mark.slow
def test_toy_training_reaches_high_ap(invoke, tmp_path):
    out = tmp_path / "out"
    trained = invoke("train-toy", "--steps", 500)
    assert trained.exit_code == 0, trained.output
    assert float(_value(trained.output, "ratio")) <= 0.1
    invoke("predict", "--ckpt", out / "toy.ckpt", "--images-dir", out / "corpus")
    evaluated = invoke("eval", "--annotations", out / "corpus" / "annotations.txt",
                       "--detections", out / "detections.txt")
    assert float(_value(evaluated.output, "AP")) >= 0.9
