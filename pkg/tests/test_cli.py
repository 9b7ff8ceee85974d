import pytest

from sidlab.cli import main
from sidlab.corpus import WRITERS, Dataset
from sidlab.report import delta_cell, mean_std, parse_report_tsv, read_report, render_tables

from synthetic import sid_corpus, write_experiment


@pytest.fixture
def sid_file(tmp_path):
    p = tmp_path / "gold.conll"
    p.write_text(WRITERS["xsid"](sid_corpus(10)), encoding="utf-8")
    return p


class TestValidate:
    def test_clean(self, sid_file, capsys):
        assert main(["validate", str(sid_file)]) == 0
        out = capsys.readouterr().out
        assert "sentences=10" in out
        assert "malformed_tags=0" in out

    def test_two_column_line(self, tmp_path, capsys):
        p = tmp_path / "bad.conll"
        p.write_text("# intent: a\n1\tx\tO\n2\ty\n")
        assert main(["validate", str(p)]) == 2
        assert "line 3" in capsys.readouterr().out

    def test_empty_file(self, tmp_path, capsys):
        p = tmp_path / "empty.conll"
        p.write_text("")
        assert main(["validate", str(p)]) == 0
        assert "WARNING\tno sentences" in capsys.readouterr().out

    def test_malformed_tag(self, tmp_path, capsys):
        p = tmp_path / "tag.conll"
        p.write_text("# intent: a\n1\tx\tZ-loc\n")
        assert main(["validate", str(p)]) == 2

    def test_repaired_span_warning(self, tmp_path, capsys):
        p = tmp_path / "rep.conll"
        p.write_text("# intent: a\n1\tx\tO\n2\ty\tI-loc\n")
        assert main(["validate", str(p)]) == 0
        assert "repaired_spans=1" in capsys.readouterr().out

    def test_missing_file(self, tmp_path):
        assert main(["validate", str(tmp_path / "nope.conll")]) == 2

    def test_conllu(self, tmp_path, capsys):
        p = tmp_path / "t.conllu"
        p.write_text("1\ta\t_\tX\t_\t_\t0\troot\t_\t_\n")
        assert main(["validate", str(p)]) == 0
        assert "format=conllu" in capsys.readouterr().out


class TestUsage:
    def test_no_command(self, capsys):
        assert_exit(lambda: main([]), 1)

    def test_unknown_flag(self):
        assert_exit(lambda: main(["dist", "--bogus"]), 1)

    def test_dist_needs_two(self, sid_file):
        assert main(["dist", f"a={sid_file}"]) == 1

    def test_bad_config(self, tmp_path):
        (tmp_path / "c.yaml").write_text("schedule: '→SID'\n")
        assert main(["train", "--config", str(tmp_path / "c.yaml"), "--out", str(tmp_path / "o")]) == 1

    def test_missing_config(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "none.yaml"), "--out", str(tmp_path / "o")]) == 2


def assert_exit(fn, code):
    with pytest.raises(SystemExit) as err:
        fn()
    assert err.value.code == code


class TestTrainAndEval:
    def test_train_writes_outputs(self, tmp_path, capsys):
        config = write_experiment(tmp_path / "exp", seeds=(1, 2, 3))
        out = tmp_path / "out"
        assert main(["train", "--config", str(config), "--out", str(out)]) == 0
        assert sorted(p.name for p in out.iterdir()) == ["report.md", "report.tsv", "seed1.ckpt", "seed2.ckpt", "seed3.ckpt"]
        report = read_report(out)
        for metric in ("slot_f1", "intent_accuracy", "fully_correct"):
            for seed in ("1", "2", "3", "mean"):
                assert 0.0 <= report.get("synthetic-test", seed, metric) <= 1.0
            assert report.get("synthetic-test", "n_runs", metric) == 3

    def test_refuses_overwrite(self, tmp_path):
        config = write_experiment(tmp_path / "exp")
        out = tmp_path / "out"
        assert main(["train", "--config", str(config), "--out", str(out)]) == 0
        assert main(["train", "--config", str(config), "--out", str(out)]) == 1
        assert main(["train", "--config", str(config), "--out", str(out), "--force"]) == 0

    def test_seed_override(self, tmp_path):
        config = write_experiment(tmp_path / "exp", seeds=(1, 2, 3))
        out = tmp_path / "out"
        assert main(["train", "--config", str(config), "--out", str(out), "--seed", "5"]) == 0
        assert (out / "seed5.ckpt").exists() and not (out / "seed1.ckpt").exists()

    def test_eval_checkpoint(self, tmp_path, capsys):
        config = write_experiment(tmp_path / "exp")
        out = tmp_path / "out"
        main(["train", "--config", str(config), "--out", str(out)])
        capsys.readouterr()
        rc = main(["eval", "--model", str(out / "seed1.ckpt"), str(tmp_path / "exp" / "eval.conll"),
                   "--format", "tsv", "--write-pred", str(tmp_path / "pred")])
        assert rc == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].split("\t")[0] == "dataset"
        assert lines[1].startswith("eval\t")
        pred = tmp_path / "pred" / "eval.pred.conll"
        assert main(["eval", "--gold", str(tmp_path / "exp" / "eval.conll"), "--pred", str(pred)]) == 0

    def test_eval_missing_model(self, tmp_path, sid_file):
        assert main(["eval", "--model", str(tmp_path / "none.ckpt"), str(sid_file)]) == 2

    def test_eval_corrupt_model(self, tmp_path, sid_file):
        (tmp_path / "bad.ckpt").write_bytes(b"SIDLABCK garbage")
        assert main(["eval", "--model", str(tmp_path / "bad.ckpt"), str(sid_file)]) == 2

    def test_gold_against_itself(self, sid_file, capsys):
        assert main(["eval", "--gold", str(sid_file), "--pred", str(sid_file), "--format", "tsv"]) == 0
        row = capsys.readouterr().out.splitlines()[1].split("\t")
        assert [float(x) for x in row[1:6]] == [1.0] * 5

    def test_pred_length_mismatch(self, tmp_path, sid_file):
        short = tmp_path / "short.conll"
        short.write_text(WRITERS["xsid"](sid_corpus(3)))
        assert main(["eval", "--gold", str(sid_file), "--pred", str(short)]) == 2


class TestDist:
    def test_self_similarity(self, sid_file, tmp_path):
        out = tmp_path / "dist"
        assert main(["dist", f"a={sid_file}", f"b={sid_file}", "--out", str(out)]) == 0
        names = sorted(p.name for p in out.iterdir())
        assert names == [
            "sentence_words.case_insensitive.tsv",
            "sentence_words.case_sensitive.tsv",
            "slot_chars.case_insensitive.tsv",
            "slot_chars.case_sensitive.tsv",
        ]
        for p in out.iterdir():
            assert p.read_text().splitlines()[-1] == "a\t1.000000"

    def test_misaligned(self, sid_file, tmp_path):
        short = tmp_path / "short.conll"
        short.write_text(WRITERS["xsid"](sid_corpus(3)))
        assert main(["dist", f"a={sid_file}", f"b={short}"]) == 2

    def test_stdout(self, sid_file, capsys):
        assert main(["dist", f"a={sid_file}", f"b={sid_file}", "--level", "slot_chars", "--case", "case_sensitive"]) == 0
        assert capsys.readouterr().out.startswith("# mode: slot_chars case_sensitive")


REPORT = """# setup: {setup}
setup\tdataset\tseed\tmetric\tvalue
{rows}
"""


def fake_report(setup, intents, slots=(0.5, 0.5)):
    rows = []
    for seed, value in zip(("mean", "stdev"), intents):
        rows.append(f"{setup}\tde-ba\t{seed}\tintent_accuracy\t{value!r}")
    for seed, value in zip(("mean", "stdev"), slots):
        rows.append(f"{setup}\tde-ba\t{seed}\tslot_f1\t{value!r}")
    return parse_report_tsv(REPORT.format(setup=setup, rows="\n".join(rows)))


class TestReport:
    def test_delta_plus_five_one(self):
        base = fake_report("baseline", (0.735, 0.01))
        best = fake_report("MLM×NER→SID", (0.786, 0.02))
        text = render_tables([base, best], "baseline")
        assert "| MLM×NER→SID | +5.1 | 0.0 |" in text
        assert "| baseline | 0.0 | 0.0 |" in text

    def test_mean_std_cells(self):
        assert mean_std(0.735, 0.0) == "73.5±0.0"
        text = render_tables([fake_report("a", (0.8, 0.0))])
        assert "80.0±0.0" in text

    def test_delta_cell(self):
        assert delta_cell(5.1) == "+5.1"
        assert delta_cell(-0.04) == "0.0"
        assert delta_cell(-2.25) == "-2.2"

    def test_unknown_baseline(self):
        with pytest.raises(KeyError):
            render_tables([fake_report("a", (0.8, 0.0))], "b")

    def test_cli_report(self, tmp_path, capsys):
        (tmp_path / "a.tsv").write_text(REPORT.format(setup="a", rows="a\tx\tmean\tslot_f1\t0.25\na\tx\tstdev\tslot_f1\t0.0"))
        (tmp_path / "b.tsv").write_text(REPORT.format(setup="b", rows="b\tx\tmean\tslot_f1\t0.5\nb\tx\tstdev\tslot_f1\t0.1"))
        assert main(["report", str(tmp_path / "a.tsv"), str(tmp_path / "b.tsv"), "--baseline", "a", "--format", "tsv"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert "b\tx\tslot_f1\t50.0\t10.0\t+25.0" in lines
        assert "a\tx\tslot_f1\t25.0\t0.0\t0.0" in lines

    def test_bad_report_file(self, tmp_path):
        (tmp_path / "r.tsv").write_text("nonsense\n")
        assert main(["report", str(tmp_path / "r.tsv")]) == 2

    def test_markdown_from_training_run(self, tmp_path):
        config = write_experiment(tmp_path / "exp", schedule="NER→SID", seeds=(1, 2))
        out = tmp_path / "out"
        main(["train", "--config", str(config), "--out", str(out)])
        report = read_report(out)
        md = (out / "report.md").read_text()
        m, s = report.get("synthetic-test", "mean", "slot_f1"), report.get("synthetic-test", "stdev", "slot_f1")
        assert mean_std(m, s) in md
        assert report.get("aux-dev", "mean", "ner_span_f1") is not None
        assert "Auxiliary dev scores" in md
