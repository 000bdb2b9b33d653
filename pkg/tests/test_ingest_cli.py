import json
from pathlib import Path

import pytest

from ktreg.cli import main
from ktreg.ingest import (
    IngestError,
    export_interactions,
    export_skills,
    ingest,
)
from ktreg.synth import generate


def write(path, text):
    Path(path).write_text(text, encoding="utf-8")
    return str(path)


class TestIngest:
    def test_drops_out_of_range_correct(self, tmp_path):
        path = write(tmp_path / "x.csv",
                     "student_id,order_key,question_id,correct\n"
                     "a,1,q1,1\n"
                     "a,2,q2,2\n"
                     "a,3,q1,0\n")
        result = ingest(path)
        assert result.n_dropped == 1
        assert sum(len(s) for s in result.dataset.sequences) == 2

    def test_interleaved_students_grouped_and_ordered(self, tmp_path):
        path = write(tmp_path / "x.csv",
                     "student_id,order_key,question_id,correct\n"
                     "a,2,q2,0\n"
                     "b,1,q1,1\n"
                     "a,1,q1,1\n"
                     "b,2,q3,0\n")
        result = ingest(path)
        assert len(result.dataset) == 2
        a, b = result.dataset.sequences
        assert a.student_id == "a" and b.student_id == "b"
        qmap = result.question_map
        assert [i.question_id for i in a.interactions] == [qmap["q1"], qmap["q2"]]
        assert [i.response for i in a.interactions] == [1, 0]

    def test_dense_reindex_is_numeric_aware(self, tmp_path):
        path = write(tmp_path / "x.csv",
                     "student_id,order_key,question_id,correct\n"
                     "a,1,10,1\n"
                     "a,2,2,0\n")
        result = ingest(path)
        assert result.question_map == {"2": 0, "10": 1}

    def test_missing_column(self, tmp_path):
        path = write(tmp_path / "x.csv", "student_id,order_key,correct\na,1,1\n")
        with pytest.raises(IngestError, match="question_id"):
            ingest(path)

    def test_malformed_row_reports_line(self, tmp_path):
        path = write(tmp_path / "x.csv",
                     "student_id,order_key,question_id,correct\n"
                     "a,1,q1,1\n"
                     "a,2,q2\n")
        with pytest.raises(IngestError, match="line 3"):
            ingest(path)

    def test_unparseable_correct_reports_line(self, tmp_path):
        path = write(tmp_path / "x.csv",
                     "student_id,order_key,question_id,correct\n"
                     "a,1,q1,yes\n")
        with pytest.raises(IngestError, match="line 2"):
            ingest(path)

    def test_skills_referencing_unknown_question(self, tmp_path):
        inter = write(tmp_path / "x.csv",
                      "student_id,order_key,question_id,correct\na,1,q1,1\n")
        skills = write(tmp_path / "s.csv", "question_id,skill_id\nq9,s1\n")
        with pytest.raises(IngestError, match="unknown question"):
            ingest(inter, skills)

    def test_partial_skill_coverage_rejected(self, tmp_path):
        inter = write(tmp_path / "x.csv",
                      "student_id,order_key,question_id,correct\n"
                      "a,1,q1,1\na,2,q2,0\n")
        skills = write(tmp_path / "s.csv", "question_id,skill_id\nq1,s1\n")
        with pytest.raises(IngestError, match="covers 1 of 2"):
            ingest(inter, skills)

    def test_skill_multi_rows_collected(self, tmp_path):
        inter = write(tmp_path / "x.csv",
                      "student_id,order_key,question_id,correct\n"
                      "a,1,q1,1\na,2,q2,0\n")
        skills = write(tmp_path / "s.csv",
                       "question_id,skill_id\nq1,s1\nq1,s2\nq2,s1\n")
        result = ingest(inter, skills)
        q1 = result.question_map["q1"]
        assert result.skills.skills_of(q1) == frozenset(
            {result.skill_map["s1"], result.skill_map["s2"]}
        )

    def test_round_trip(self, tmp_path):
        data, skills = generate(12, 8, 3, (4, 10), seed=5)
        export_interactions(tmp_path / "interactions.csv", data)
        export_skills(tmp_path / "skills.csv", skills)
        result = ingest(tmp_path / "interactions.csv", tmp_path / "skills.csv")
        assert result.dataset == data
        assert result.skills == skills

    def test_order_key_sorts_rows(self, tmp_path):
        path = write(tmp_path / "x.csv",
                     "student_id,order_key,question_id,correct\n"
                     "a,3,q3,1\n"
                     "a,1,q1,0\n"
                     "a,2,q2,1\n")
        result = ingest(path)
        qmap = result.question_map
        assert [i.question_id for i in result.dataset.sequences[0].interactions] == \
            [qmap["q1"], qmap["q2"], qmap["q3"]]


def run_cli(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    code = run_cli("synth", "--out", out, "--students", "40", "--questions", "12",
                   "--skills", "4", "--min-len", "6", "--max-len", "14",
                   "--seed", "3")
    assert code == 0
    return out


TRAIN_CONFIG = """
[model]
d_emb = 4
d_hidden = 4

[train]
epochs = 2
batch_size = 16
base_lr = 0.01
warmup_steps = 10
max_seq_len = 20
seed = 5
eval_every = 2

[eval]
holdout = 0.2

[augment.rep]
kind = replacement
flavor = skill
alpha = 0.3
lambda_aug = 1
lambda_reg = 10

[augment.ins]
kind = insertion
target = correct
alpha = 0.3
lambda_aug = 1
lambda_reg = 10
"""


@pytest.fixture(scope="module")
def trained_run(synth_dir, tmp_path_factory):
    cfg = tmp_path_factory.mktemp("cfg") / "train.ini"
    cfg.write_text(TRAIN_CONFIG, encoding="utf-8")
    run_dir = tmp_path_factory.mktemp("runs") / "r1"
    assert run_cli("train", "--data", synth_dir, "--config", cfg,
                   "--out", run_dir) == 0
    return run_dir, cfg


class TestCliCommands:
    def test_synth_outputs(self, synth_dir):
        assert (synth_dir / "interactions.csv").exists()
        assert (synth_dir / "skills.csv").exists()
        stats = json.loads((synth_dir / "stats.json").read_text())
        assert stats["n_students"] == 40

    def test_ingest_command(self, synth_dir, tmp_path):
        out = tmp_path / "norm"
        assert run_cli("ingest", "--interactions", synth_dir / "interactions.csv",
                       "--skills", synth_dir / "skills.csv", "--out", out) == 0
        assert (out / "question_map.csv").exists()
        assert (out / "skill_map.csv").exists()
        report = json.loads((out / "ingest.json").read_text())
        assert report["n_dropped"] == 0

    def test_train_outputs(self, trained_run):
        run_dir, _ = trained_run
        for name in ("config.ini", "metrics.jsonl", "checkpoint.npz",
                     "result.json", "split.json"):
            assert (run_dir / name).exists(), name
        lines = (run_dir / "metrics.jsonl").read_text().strip().splitlines()
        first = json.loads(lines[0])
        assert {"step", "lr", "loss", "l_ori", "l_aug_rep", "l_reg_rep",
                "l_aug_ins", "l_reg_ins"} <= set(first)
        assert any("val_auc" in json.loads(ln) for ln in lines)

    def test_train_eval_deterministic(self, synth_dir, trained_run, tmp_path,
                                      capsys):
        run_dir, cfg = trained_run
        second = tmp_path / "r2"
        assert run_cli("train", "--data", synth_dir, "--config", cfg,
                       "--out", second) == 0
        assert (run_dir / "metrics.jsonl").read_bytes() == \
            (second / "metrics.jsonl").read_bytes()
        assert run_cli("eval", "--run", run_dir, "--data", synth_dir) == 0
        assert run_cli("eval", "--run", second, "--data", synth_dir) == 0
        a = json.loads((run_dir / "eval_test.json").read_text())
        b = json.loads((second / "eval_test.json").read_text())
        assert a["auc"] == b["auc"]

    def test_eval_matches_train_result(self, synth_dir, trained_run):
        run_dir, _ = trained_run
        assert run_cli("eval", "--run", run_dir, "--data", synth_dir) == 0
        result = json.loads((run_dir / "result.json").read_text())
        evaluated = json.loads((run_dir / "eval_test.json").read_text())
        assert result["final_auc"] == evaluated["auc"]

    def test_grid_row_count(self, synth_dir, tmp_path):
        cfg = tmp_path / "grid.ini"
        cfg.write_text(TRAIN_CONFIG + "\n[grid]\nfolds = 2\n", encoding="utf-8")
        out = tmp_path / "grid_out"
        assert run_cli("grid", "--data", synth_dir, "--config", cfg, "--out", out,
                       "--set", "train.epochs=1") == 0
        lines = (out / "grid_results.csv").read_text().strip().splitlines()
        # header + 3 alphas x 4 lambda_regs x 2 lambda_augs per augmentation kind
        assert len(lines) == 1 + 24 * 2

    def test_analyze_monotonicity(self, synth_dir, tmp_path):
        out = tmp_path / "mono.tsv"
        assert run_cli("analyze-monotonicity", "--data", synth_dir,
                       "--out", out) == 0
        lines = out.read_text().strip().splitlines()
        counts = [ln.split("\t")[2:4] for ln in lines[1:-1]]
        total = sum(int(c) + int(i) for c, i in counts)
        stats = json.loads((synth_dir / "stats.json").read_text())
        assert total == stats["n_interactions"] - stats["n_students"]

    def test_analyze_consistency(self, synth_dir, trained_run, tmp_path):
        run_dir, _ = trained_run
        out = tmp_path / "cons.tsv"
        assert run_cli("analyze-consistency", "--run", run_dir, "--data", synth_dir,
                       "--out", out) == 0
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 3  # header + correct + incorrect
        assert lines[1].startswith("correct\t")
        assert lines[2].startswith("incorrect\t")

    def test_report_heatmap(self, synth_dir, trained_run, tmp_path):
        run_dir, _ = trained_run
        out = tmp_path / "heat.tsv"
        assert run_cli("report-heatmap", "--run", run_dir, "--data", synth_dir,
                       "--out", out, "--sequence", "0", "--kind", "insertion",
                       "--alpha", "0.3", "--seed", "1") == 0
        lines = out.read_text().strip().splitlines()
        header = lines[0].split("\t")
        assert header[0] == "position"
        assert len(header) == 3  # one run: original + augmented columns
        n_rows = len(lines) - 1  # one row per original (windowed) timestep
        assert n_rows >= 6  # min-len of the synth fixture

    def test_error_exit_codes(self, synth_dir, tmp_path):
        assert run_cli("eval", "--run", tmp_path / "nope", "--data", synth_dir) == 1
        assert run_cli("ingest", "--interactions", tmp_path / "missing.csv",
                       "--out", tmp_path / "o") == 1
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[augment.bad]\nalpha = 0.3\n", encoding="utf-8")
        assert run_cli("train", "--data", synth_dir, "--config", cfg,
                       "--out", tmp_path / "r") == 1
        with pytest.raises(SystemExit):
            run_cli("train", "--bogus-flag")

    def test_set_override_applies(self, synth_dir, tmp_path):
        run_dir = tmp_path / "seeded"
        assert run_cli("train", "--data", synth_dir, "--out", run_dir,
                       "--seed", "77", "--set", "train.epochs=1",
                       "--set", "model.d_emb=4", "--set", "model.d_hidden=4") == 0
        text = (run_dir / "config.ini").read_text()
        assert "seed = 77" in text
        assert "epochs = 1" in text
