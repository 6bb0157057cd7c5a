import os

import pytest

from capstyle.cli import main
from capstyle.corpus import SynthStyleSpec, save_spec

TINY_CFG = """
data.d_v=8
data.factual_refs=10
model.d_model=16
model.enc_layers=1
model.dec_layers=1
model.n_heads=2
model.d_ff=32
model.max_pos=32
disc.d_model=16
disc.layers=1
disc.n_heads=2
disc.d_ff=32
disc.epochs=1
proj.n_heads=2
proj.d_ff=32
proj.n_const=2
stage1.epochs=1
stage1.max_decode_len=8
stage2.epochs=1
eval.examples_per_style=2
"""


def tiny_spec():
    return SynthStyleSpec(
        styles={"positive": ["lovely", "happy"], "negative": ["gloomy", "broken"]},
        subjects=["cat", "dog", "bird"],
        verbs=["watches", "finds"],
        objects=["ball", "kite", "drum"],
        paragraphs_per_style=40,
        sentences_per_paragraph=3,
    )


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """One pipeline run shared by the CLI tests: gen-data through stage 2."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY_CFG)
    spec = root / "spec.cfg"
    save_spec(tiny_spec(), spec)
    paths = {
        "root": root, "cfg": str(cfg), "spec": str(spec),
        "data": str(root / "data"), "disc": str(root / "disc"),
        "s1": str(root / "s1"), "s2": str(root / "s2"),
    }
    base = ["--config", paths["cfg"]]
    assert main(base + ["gen-data", "--spec", paths["spec"], "--out", paths["data"]]) == 0
    assert main(base + ["train-discriminator", "--data", paths["data"],
                        "--out", paths["disc"]]) == 0
    assert main(base + ["train-stage1", "--data", paths["data"],
                        "--checkpoint", os.path.join(paths["disc"], "checkpoint"),
                        "--out", paths["s1"]]) == 0
    assert main(base + ["train-stage2", "--data", paths["data"],
                        "--checkpoint", os.path.join(paths["s1"], "checkpoint"),
                        "--out", paths["s2"]]) == 0
    # style example / reference files for inference commands
    ex = root / "examples.txt"
    ex.write_text("the lovely cat watches the ball .\nthe happy dog finds the kite .\n")
    refs = root / "refs.txt"
    refs.write_text("the cat watches the ball .\nthe dog finds the kite .\n")
    paths["examples"] = str(ex)
    paths["refs"] = str(refs)
    return paths


def base(work):
    return ["--config", work["cfg"]]


class TestPipeline:
    def test_gen_data_layout(self, work):
        assert os.path.exists(os.path.join(work["data"], "corpus_train.txt"))
        assert os.path.exists(os.path.join(work["data"], "vision_test.bin"))

    def test_checkpoints_written(self, work):
        for stage in ("disc", "s1", "s2"):
            ckpt = os.path.join(work[stage], "checkpoint")
            assert os.path.exists(os.path.join(ckpt, "manifest.txt")), stage

    def test_run_manifest_contents(self, work):
        text = open(os.path.join(work["s1"], "run_manifest.txt")).read()
        assert "command=train-stage1" in text
        assert "config_hash=" in text and "seed=0" in text
        assert "checkpoint=" in text

    def test_train_log_lines(self, work):
        lines = open(os.path.join(work["s1"], "train.log")).read().strip().split("\n")
        assert lines and all(line.startswith("step=") for line in lines)


class TestEval:
    def test_fixed_lambda_report(self, work, tmp_path):
        out = str(tmp_path / "eval")
        rc = main(base(work) + ["eval", "--checkpoint",
                                os.path.join(work["s2"], "checkpoint"),
                                "--data", work["data"], "--out", out, "--lambda", "1"])
        assert rc == 0
        table = open(os.path.join(out, "report.tsv")).read()
        assert table.startswith("Data\tB-3\tcontent\tsACC\tGM1\tGM2\tPPL\n")
        assert "factual\t" in table and "positive\t" in table and "negative\t" in table
        summary = open(os.path.join(out, "summary.txt")).read()
        assert summary.startswith("lambda=1")

    def test_lambda_scan_writes_one_row_per_lambda(self, work, tmp_path):
        out = str(tmp_path / "scan")
        rc = main(base(work) + ["eval", "--checkpoint",
                                os.path.join(work["s2"], "checkpoint"),
                                "--data", work["data"], "--out", out,
                                "--scan-lambda", "1..3"])
        assert rc == 0
        rows = open(os.path.join(out, "scan.tsv")).read().strip().split("\n")
        assert rows[0] == "lambda\tmean_gm1"
        assert [r.split("\t")[0] for r in rows[1:]] == ["1", "2", "3"]


class TestInferenceCommands:
    def test_transfer_writes_tsv(self, work, tmp_path):
        text = tmp_path / "input.txt"
        text.write_text("the bird watches the drum .\n")
        out = str(tmp_path / "tr")
        rc = main(base(work) + ["transfer", "--checkpoint",
                                os.path.join(work["s2"], "checkpoint"),
                                "--text", str(text), "--examples", work["examples"],
                                "--refs", work["refs"], "--lambda", "1", "--out", out])
        assert rc == 0
        rows = open(os.path.join(out, "transfers.tsv")).read().strip().split("\n")
        assert len(rows) == 1 and rows[0].startswith("0\t")

    def test_caption_writes_tsv(self, work, tmp_path):
        out = str(tmp_path / "cap")
        rc = main(base(work) + ["caption", "--checkpoint",
                                os.path.join(work["s2"], "checkpoint"),
                                "--visual", os.path.join(work["data"], "vision_test"),
                                "--examples", work["examples"],
                                "--refs", work["refs"], "--lambda", "1", "--out", out])
        assert rc == 0
        rows = open(os.path.join(out, "captions.tsv")).read().strip().split("\n")
        assert all("\t" in r for r in rows)

    def test_embed_viz_format(self, work, tmp_path):
        out = str(tmp_path / "viz")
        rc = main(base(work) + ["embed-viz", "--checkpoint",
                                os.path.join(work["s2"], "checkpoint"),
                                "--data", work["data"], "--out", out])
        assert rc == 0
        rows = open(os.path.join(out, "style_embeddings.tsv")).read().strip().split("\n")
        for r in rows:
            x, y, label = r.split("\t")
            float(x), float(y)
            assert label in ("positive", "negative", "factual")


class TestAblate:
    def test_v2l_row_runs_and_reports(self, work, tmp_path):
        out = str(tmp_path / "ab")
        rc = main(base(work) + ["ablate", "--data", work["data"],
                                "--checkpoint", os.path.join(work["disc"], "checkpoint"),
                                "--out", out, "--ablate", "v2l", "--lambda", "1"])
        assert rc == 0
        assert os.path.exists(os.path.join(out, "report.tsv"))
        assert os.path.exists(os.path.join(out, "stage2", "checkpoint", "manifest.txt"))


class TestErrorContract:
    def test_missing_data_dir(self, work, capsys):
        rc = main(base(work) + ["train-stage1", "--data", "/nonexistent",
                                "--checkpoint", os.path.join(work["disc"], "checkpoint"),
                                "--out", str(work["root"] / "x")])
        assert rc == 1
        assert capsys.readouterr().err.startswith("error:")

    def test_missing_checkpoint(self, work, capsys):
        rc = main(base(work) + ["eval", "--checkpoint", "/nonexistent",
                                "--data", work["data"],
                                "--out", str(work["root"] / "y")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_missing_config_file(self, capsys):
        rc = main(["--config", "/nonexistent.cfg", "grad-check"])
        assert rc == 1
        assert "missing file" in capsys.readouterr().err

    def test_unknown_command_rejected_by_parser(self):
        with pytest.raises(SystemExit):
            main(["frobnicate"])
