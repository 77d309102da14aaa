import json

import pytest

from tagrefine.cli import main
from tagrefine.vsim import read_vsim_tsv


@pytest.fixture()
def knowledge_args(fixtures_dir, tmp_path):
    vsim_path = tmp_path / "vsim.tsv"
    rc = main(["mine-vsim", "--corpus", str(fixtures_dir / "corpus.jsonl"),
               "--out", str(vsim_path)])
    assert rc == 0
    return [
        "--vsim", str(vsim_path),
        "--embeddings", str(fixtures_dir / "embeddings.txt"),
        "--hypernyms", str(fixtures_dir / "hypernyms.tsv"),
        "--assertions", str(fixtures_dir / "assertions.tsv"),
        "--coloc", str(fixtures_dir / "coloc.tsv"),
        "--allowlist", str(fixtures_dir / "allowlist.tsv"),
    ]


def read_jsonl(path):
    return [json.loads(line) for line in open(path, encoding="utf-8")]


class TestMineVsim:
    def test_writes_sorted_table(self, fixtures_dir, tmp_path, capsys):
        out = tmp_path / "vsim.tsv"
        rc = main(["mine-vsim", "--corpus", str(fixtures_dir / "corpus.jsonl"),
                   "--out", str(out)])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines == sorted(lines)
        table = read_vsim_tsv(out)
        assert table.get("green mamba", "snake") == pytest.approx(4.8 / 5.8, abs=1e-6)
        assert "label pairs" in capsys.readouterr().out

    def test_missing_file_exits_2_naming_path(self, tmp_path, capsys):
        rc = main(["mine-vsim", "--corpus", str(tmp_path / "nope.jsonl"),
                   "--out", str(tmp_path / "o.tsv")])
        assert rc == 2
        assert "nope.jsonl" in capsys.readouterr().err

    def test_malformed_line_skipped_with_warning(self, tmp_path, capsys):
        corpus = tmp_path / "c.jsonl"
        good = {"image": "i1", "boxes": [{"id": "b", "candidates": [{"label": "a", "conf": 0.5}]}]}
        corpus.write_text(json.dumps(good) + "\n{broken\n")
        rc = main(["mine-vsim", "--corpus", str(corpus), "--out", str(tmp_path / "o.tsv")])
        assert rc == 0
        assert "1 malformed" in capsys.readouterr().out


class TestRefine:
    def test_fixture_refinement(self, fixtures_dir, tmp_path, knowledge_args):
        out = tmp_path / "refined.jsonl"
        rc = main(["refine", "--detections", str(fixtures_dir / "detections.jsonl"),
                   "--out", str(out), *knowledge_args])
        assert rc == 0
        records = read_jsonl(out)
        assert [r["image"] for r in records] == ["img_001", "img_002", "img_003"]
        img1 = records[0]
        labels = {entry["label"] for entry in img1["labels"]}
        assert "cucumber" not in labels
        assert "snake" in labels
        assert len(img1["labels"]) <= 5

    def test_output_round_trips(self, fixtures_dir, tmp_path, knowledge_args):
        out = tmp_path / "refined.jsonl"
        main(["refine", "--detections", str(fixtures_dir / "detections.jsonl"),
              "--out", str(out), *knowledge_args])
        for record in read_jsonl(out):
            assert set(record) == {"image", "labels", "objective"}
            for entry in record["labels"]:
                assert set(entry) == {"label", "space", "box"}
                assert entry["space"] in ("CL", "XL", "AL")

    def test_visir_star_bounds_visual_labels(self, fixtures_dir, tmp_path, knowledge_args):
        out = tmp_path / "refined.jsonl"
        rc = main(["refine", "--detections", str(fixtures_dir / "detections.jsonl"),
                   "--out", str(out), "--visir-star", *knowledge_args])
        assert rc == 0
        for record in read_jsonl(out):
            n_boxes = {"img_001": 3, "img_002": 5, "img_003": 2}[record["image"]]
            n_visual = sum(1 for e in record["labels"] if e["box"] != "GLOBAL")
            assert n_visual <= int(0.8 * n_boxes)

    def test_empty_detections(self, tmp_path, knowledge_args):
        detections = tmp_path / "empty.jsonl"
        detections.write_text("")
        out = tmp_path / "refined.jsonl"
        rc = main(["refine", "--detections", str(detections), "--out", str(out),
                   *knowledge_args])
        assert rc == 0
        assert out.read_text() == ""

    def test_budget_none_truncates_to_five(self, fixtures_dir, tmp_path, knowledge_args):
        out = tmp_path / "refined.jsonl"
        rc = main(["refine", "--detections", str(fixtures_dir / "detections.jsonl"),
                   "--out", str(out), "--budget", "none", *knowledge_args])
        assert rc == 0
        for record in read_jsonl(out):
            assert len(record["labels"]) <= 5

    def test_bad_budget_exits_2(self, fixtures_dir, tmp_path, knowledge_args, capsys):
        rc = main(["refine", "--detections", str(fixtures_dir / "detections.jsonl"),
                   "--out", str(tmp_path / "o.jsonl"), "--budget", "0", *knowledge_args])
        assert rc == 2

    def test_config_file_with_flag_override(self, fixtures_dir, tmp_path, knowledge_args):
        config = tmp_path / "run.cfg"
        config.write_text("budget = 2\ntau-s = 0.2  # comment\n")
        out_cfg = tmp_path / "cfg.jsonl"
        rc = main(["refine", "--detections", str(fixtures_dir / "detections.jsonl"),
                   "--out", str(out_cfg), "--config", str(config), *knowledge_args])
        assert rc == 0
        for record in read_jsonl(out_cfg):
            assert len(record["labels"]) <= 2  # config budget applied

        out_flag = tmp_path / "flag.jsonl"
        rc = main(["refine", "--detections", str(fixtures_dir / "detections.jsonl"),
                   "--out", str(out_flag), "--config", str(config),
                   "--budget", "5", *knowledge_args])
        assert rc == 0
        sizes = [len(r["labels"]) for r in read_jsonl(out_flag)]
        assert max(sizes) > 2  # flag wins over config

    def test_select_incoherent_filter(self, tmp_path, knowledge_args):
        detections = tmp_path / "det.jsonl"
        rows = [
            # 3 boxes, mutually unrelated -> selected
            {"image": "messy", "boxes": [
                {"id": "b1", "candidates": [{"label": "snake", "conf": 0.9}]},
                {"id": "b2", "candidates": [{"label": "person", "conf": 0.8}]},
                {"id": "b3", "candidates": [{"label": "banana", "conf": 0.7}]},
            ]},
            # 2 boxes -> outside the 3..7 box window
            {"image": "small", "boxes": [
                {"id": "b1", "candidates": [{"label": "snake", "conf": 0.9}]},
                {"id": "b2", "candidates": [{"label": "person", "conf": 0.8}]},
            ]},
            # 3 boxes, coherent tennis scene -> filtered out
            {"image": "coherent", "boxes": [
                {"id": "b1", "candidates": [{"label": "person", "conf": 0.9}]},
                {"id": "b2", "candidates": [{"label": "racket", "conf": 0.8}]},
                {"id": "b3", "candidates": [{"label": "tennis ball", "conf": 0.7}]},
            ]},
        ]
        detections.write_text("".join(json.dumps(r) + "\n" for r in rows))
        out = tmp_path / "refined.jsonl"
        rc = main(["refine", "--detections", str(detections), "--out", str(out),
                   "--select-incoherent", *knowledge_args])
        assert rc == 0
        assert [r["image"] for r in read_jsonl(out)] == ["messy"]

    def test_dump_lp(self, fixtures_dir, tmp_path, knowledge_args):
        out = tmp_path / "refined.jsonl"
        lp_dir = tmp_path / "lp"
        rc = main(["refine", "--detections", str(fixtures_dir / "detections.jsonl"),
                   "--out", str(out), "--dump-lp", str(lp_dir), *knowledge_args])
        assert rc == 0
        dumped = sorted(p.name for p in lp_dir.iterdir())
        assert dumped == ["img_001.lp", "img_002.lp", "img_003.lp"]
        text = (lp_dir / "img_001.lp").read_text()
        assert text.startswith("\\ joint label selection instance")
        assert "Maximize" in text and "End" in text

    def test_jobs_output_order_matches_input(self, fixtures_dir, tmp_path, knowledge_args):
        serial, parallel = tmp_path / "s.jsonl", tmp_path / "p.jsonl"
        main(["refine", "--detections", str(fixtures_dir / "detections.jsonl"),
              "--out", str(serial), *knowledge_args])
        main(["refine", "--detections", str(fixtures_dir / "detections.jsonl"),
              "--out", str(parallel), "--jobs", "4", *knowledge_args])
        assert serial.read_bytes() == parallel.read_bytes()


@pytest.fixture()
def refined_path(fixtures_dir, tmp_path, knowledge_args):
    out = tmp_path / "refined.jsonl"
    rc = main(["refine", "--detections", str(fixtures_dir / "detections.jsonl"),
               "--out", str(out), *knowledge_args])
    assert rc == 0
    return out


class TestEval:
    def test_metrics_rows(self, fixtures_dir, tmp_path, refined_path):
        out = tmp_path / "metrics.tsv"
        rc = main(["eval", "--system", f"mysys={refined_path}",
                   "--judgments", str(fixtures_dir / "judgments.jsonl"),
                   "--out", str(out)])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "system\tpool\tmode\tprecision\trecall\tf1\timages"
        rows = [line.split("\t") for line in lines[1:]]
        # 3 pools x 2 modes
        assert len(rows) == 6
        assert all(row[0] == "mysys" for row in rows)

    def test_two_systems_doubled_rows(self, fixtures_dir, tmp_path, refined_path):
        out = tmp_path / "metrics.tsv"
        rc = main(["eval", "--system", f"a={refined_path}", "--system", f"b={refined_path}",
                   "--judgments", str(fixtures_dir / "judgments.jsonl"),
                   "--out", str(out)])
        assert rc == 0
        assert len(out.read_text().splitlines()) == 13

    def test_image_mismatch_exits_3(self, fixtures_dir, tmp_path, refined_path, capsys):
        partial = tmp_path / "partial.jsonl"
        lines = refined_path.read_text().splitlines()
        partial.write_text(lines[0] + "\n")
        rc = main(["eval", "--system", str(partial),
                   "--judgments", str(fixtures_dir / "judgments.jsonl"),
                   "--out", str(tmp_path / "m.tsv")])
        assert rc == 3
        err = capsys.readouterr().err
        assert "img_002" in err and "img_003" in err

    def test_unknown_pool_tag_exits_2(self, tmp_path, refined_path):
        judgments = tmp_path / "j.jsonl"
        judgments.write_text('{"image": "img_001", "pool": "WEIRD", "labels": {"a": [2]}}\n')
        rc = main(["eval", "--system", str(refined_path),
                   "--judgments", str(judgments), "--out", str(tmp_path / "m.tsv")])
        assert rc == 2


class TestTuneCommand:
    def run_tune(self, fixtures_dir, tmp_path, knowledge_args, out_name, extra=()):
        out = tmp_path / out_name
        rc = main(["tune", "--train", str(fixtures_dir / "detections.jsonl"),
                   "--gold", str(fixtures_dir / "gold.jsonl"),
                   "--trials", "3", "--seed", "11", "--out", str(out),
                   *extra, *knowledge_args])
        return rc, out

    def test_seed_reproducible(self, fixtures_dir, tmp_path, knowledge_args):
        rc1, out1 = self.run_tune(fixtures_dir, tmp_path, knowledge_args, "t1.tsv")
        rc2, out2 = self.run_tune(fixtures_dir, tmp_path, knowledge_args, "t2.tsv")
        assert rc1 == rc2 == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_single_trial_single_row(self, fixtures_dir, tmp_path, knowledge_args):
        out = tmp_path / "t.tsv"
        rc = main(["tune", "--train", str(fixtures_dir / "detections.jsonl"),
                   "--gold", str(fixtures_dir / "gold.jsonl"),
                   "--trials", "1", "--seed", "0", "--out", str(out), *knowledge_args])
        assert rc == 0
        assert len(out.read_text().splitlines()) == 2  # header + one trial

    def test_zero_weight_ranges_tie_on_first_trial(self, fixtures_dir, tmp_path,
                                                   knowledge_args, capsys):
        ranges = []
        for name in ("alpha", "beta", "gamma", "kappa"):
            ranges += ["--range", f"{name}=0:0"]
        rc, out = self.run_tune(fixtures_dir, tmp_path, knowledge_args, "t.tsv",
                                extra=ranges)
        assert rc == 0
        rows = [line.split("\t") for line in out.read_text().splitlines()[1:]]
        scores = [row[-1] for row in rows]
        assert len(set(scores)) == 1
        snippet = capsys.readouterr().out
        assert "alpha = 0.000000" in snippet

    def test_invalid_trials_exits_2(self, fixtures_dir, tmp_path, knowledge_args):
        out = tmp_path / "t.tsv"
        rc = main(["tune", "--train", str(fixtures_dir / "detections.jsonl"),
                   "--gold", str(fixtures_dir / "gold.jsonl"),
                   "--trials", "0", "--seed", "0", "--out", str(out), *knowledge_args])
        assert rc == 2
