import json

import numpy as np
import pytest

from openpatch import (
    SampleEmbeddingSet,
    build_index,
    match_patches,
    read_bank,
    read_embedding_sets,
    write_embedding_sets,
)
from openpatch.cli import main
from openpatch.scoring import read_scores_tsv


def run_cli(argv, expect=0):
    try:
        code = main(list(argv))
    except SystemExit as exc:  # argparse exits on usage errors
        code = exc.code
    assert code == expect, f"exit {code} != {expect} for {argv}"


@pytest.fixture()
def synth_files(tmp_path):
    support = tmp_path / "support.opbk"
    test = tmp_path / "test.opbk"
    run_cli(
        [
            "synth",
            "--classes", "3",
            "--dim", "8",
            "--patches", "6",
            "--samples-per-class", "10",
            "--seed", "4",
            "--out-support", str(support),
            "--out-test", str(test),
        ]
    )
    return support, test


def test_synth_writes_files_and_manifest(synth_files, tmp_path):
    support, test = synth_files
    assert support.exists() and test.exists()
    assert (tmp_path / "classes.map").read_text().splitlines()[0] == "0=class_0"
    manifest = json.loads((tmp_path / "support.opbk.manifest.json").read_text())
    assert manifest["command"] == "synth"
    assert "--seed" in manifest["argv"]


def test_build_full_ratio_keeps_every_patch(synth_files, tmp_path, capsys):
    support, test = synth_files
    bank_path = tmp_path / "bank.opbk"
    run_cli(["build", "--support", str(support), "--keep-ratio", "1.0", "--out", str(bank_path)])
    out = capsys.readouterr().out
    assert "class 0: 60 -> 60" in out
    bank = read_bank(bank_path)
    assert bank.total_patches == 3 * 10 * 6


def test_build_ceil_arithmetic_and_verbatim_metadata(tmp_path):
    rng = np.random.default_rng(0)
    support = [
        SampleEmbeddingSet(i, i % 2, rng.standard_normal((50, 4)).astype(np.float32))
        for i in range(4)
    ]  # 100 patches per class
    path = tmp_path / "support.opbk"
    write_embedding_sets(support, path)
    bank_path = tmp_path / "bank.opbk"
    run_cli(["build", "--support", str(path), "--keep-ratio", "0.2", "--out", str(bank_path)])
    bank = read_bank(bank_path)
    assert bank.banks[0].patch_count == 20
    assert bank.banks[1].patch_count == 20
    assert bank.metadata["keep_ratio"] == "0.2"


def test_build_rejects_unknown_labels(synth_files, tmp_path):
    support, test = synth_files
    run_cli(
        ["build", "--support", str(test), "--keep-ratio", "1.0", "--out", str(tmp_path / "x.opbk")],
        expect=3,
    )


def test_build_rejects_bad_ratio(synth_files, tmp_path):
    support, _ = synth_files
    run_cli(
        ["build", "--support", str(support), "--keep-ratio", "1.5", "--out", str(tmp_path / "x")],
        expect=2,
    )


def test_score_columns_match_api(synth_files, tmp_path):
    support, test = synth_files
    bank_path = tmp_path / "bank.opbk"
    scores_path = tmp_path / "scores.tsv"
    run_cli(["build", "--support", str(support), "--keep-ratio", "1.0", "--out", str(bank_path)])
    run_cli(
        [
            "score",
            "--bank", str(bank_path),
            "--test", str(test),
            "--functions", "h,hw,max,mean,nn",
            "--support", str(support),
            "--out", str(scores_path),
        ]
    )
    header = scores_path.read_text().splitlines()[0]
    assert header == "sample_id\tlabel\tmax\tmean\th\thw\tnn"
    ids, labels, columns = read_scores_tsv(scores_path)
    test_sets = read_embedding_sets(test)
    assert ids == [s.sample_id for s in test_sets]
    assert labels == [s.label for s in test_sets]


def test_score_unknown_function_is_usage_error(synth_files, tmp_path):
    support, test = synth_files
    run_cli(
        [
            "score",
            "--bank", str(support),
            "--test", str(test),
            "--functions", "bogus",
            "--out", str(tmp_path / "s.tsv"),
        ],
        expect=2,
    )


def test_score_nn_without_support_is_usage_error(synth_files, tmp_path):
    support, test = synth_files
    bank_path = tmp_path / "bank.opbk"
    run_cli(["build", "--support", str(support), "--keep-ratio", "1.0", "--out", str(bank_path)])
    run_cli(
        [
            "score",
            "--bank", str(bank_path),
            "--test", str(test),
            "--functions", "nn",
            "--out", str(tmp_path / "s.tsv"),
        ],
        expect=2,
    )


def test_eval_from_scores_file_matches_combined_form(synth_files, tmp_path, capsys):
    support, test = synth_files
    bank_path = tmp_path / "bank.opbk"
    scores_path = tmp_path / "scores.tsv"
    run_cli(["build", "--support", str(support), "--keep-ratio", "1.0", "--out", str(bank_path)])
    run_cli(
        [
            "score",
            "--bank", str(bank_path),
            "--test", str(test),
            "--functions", "hw",
            "--out", str(scores_path),
        ]
    )
    report_a = tmp_path / "a.txt"
    report_b = tmp_path / "b.txt"
    run_cli(["eval", "--scores", str(scores_path), "--function", "hw", "--out", str(report_a)])
    run_cli(
        [
            "eval",
            "--bank", str(bank_path),
            "--test", str(test),
            "--functions", "hw",
            "--out", str(report_b),
        ]
    )
    assert report_a.read_text() == report_b.read_text()
    assert "auroc=" in report_a.read_text()


def test_eval_single_population_rejected(synth_files, tmp_path):
    support, test = synth_files
    known_only = [s for s in read_embedding_sets(test) if s.is_known]
    known_path = tmp_path / "known.opbk"
    write_embedding_sets(known_only, known_path)
    bank_path = tmp_path / "bank.opbk"
    run_cli(["build", "--support", str(support), "--keep-ratio", "1.0", "--out", str(bank_path)])
    run_cli(
        ["eval", "--bank", str(bank_path), "--test", str(known_path), "--functions", "hw"],
        expect=3,
    )


def test_eval_requires_an_input_combination(tmp_path):
    run_cli(["eval", "--functions", "hw"], expect=2)


def test_fewshot_determinism_and_k_zero_usage_error(synth_files, tmp_path):
    support, test = synth_files
    out_a = tmp_path / "fs_a.tsv"
    out_b = tmp_path / "fs_b.tsv"
    argv = [
        "fewshot",
        "--support", str(support),
        "--test", str(test),
        "--k", "3,5",
        "--repeats", "3",
        "--seed", "11",
        "--functions", "h,hw",
    ]
    run_cli(argv + ["--out", str(out_a)])
    run_cli(argv + ["--out", str(out_b)])
    assert out_a.read_bytes() == out_b.read_bytes()
    run_cli(argv[:8] + ["--k", "0", "--out", str(tmp_path / "x.tsv")], expect=2)


def test_fewshot_full_k_matches_eval(synth_files, tmp_path):
    support, test = synth_files
    bank_path = tmp_path / "bank.opbk"
    run_cli(
        ["build", "--support", str(support), "--keep-ratio", "0.5", "--seed", "3",
         "--out", str(bank_path)]
    )
    report_path = tmp_path / "eval.txt"
    run_cli(
        ["eval", "--bank", str(bank_path), "--test", str(test), "--functions", "hw",
         "--out", str(report_path)]
    )
    fs_path = tmp_path / "fs.tsv"
    run_cli(
        ["fewshot", "--support", str(support), "--test", str(test), "--k", "10",
         "--repeats", "1", "--seed", "99", "--functions", "hw",
         "--keep-ratio", "0.5", "--coreset-seed", "3", "--out", str(fs_path)]
    )
    eval_pairs = dict(
        line.split("=") for line in report_path.read_text().splitlines() if "=" in line
    )
    fs_row = fs_path.read_text().splitlines()[1].split("\t")
    assert fs_row[2] == eval_pairs["auroc"]
    assert fs_row[4] == eval_pairs["fpr95"]


def test_fewshot_manifest_logs_draws(synth_files, tmp_path):
    support, test = synth_files
    out = tmp_path / "fs.tsv"
    run_cli(
        [
            "fewshot",
            "--support", str(support),
            "--test", str(test),
            "--k", "2",
            "--repeats", "2",
            "--seed", "3",
            "--out", str(out),
        ]
    )
    manifest = json.loads((tmp_path / "fs.tsv.manifest.json").read_text())
    draws = manifest["details"]["drawn_sample_ids"]["2"]
    assert len(draws) == 2
    assert all(len(ids) == 2 for repeat in draws for ids in repeat.values())


def test_sweep_full_ratio_matches_eval_and_runtime_decreases(tmp_path, capsys):
    support = tmp_path / "support.opbk"
    test = tmp_path / "test.opbk"
    run_cli(
        [
            "synth",
            "--classes", "3",
            "--dim", "16",
            "--patches", "20",
            "--samples-per-class", "50",
            "--seed", "2",
            "--out-support", str(support),
            "--out-test", str(test),
        ]
    )
    sweep_path = tmp_path / "sweep.tsv"
    run_cli(
        [
            "sweep",
            "--support", str(support),
            "--test", str(test),
            "--keep-ratios", "1.0,0.02",
            "--functions", "hw",
            "--seed", "0",
            "--out", str(sweep_path),
        ]
    )
    capsys.readouterr()
    bank_path = tmp_path / "bank.opbk"
    run_cli(["build", "--support", str(support), "--keep-ratio", "1.0", "--seed", "0", "--out", str(bank_path)])
    report_path = tmp_path / "eval.txt"
    run_cli(
        ["eval", "--bank", str(bank_path), "--test", str(test), "--functions", "hw", "--out", str(report_path)]
    )
    rows = [line.split("\t") for line in sweep_path.read_text().splitlines()[1:]]
    by_ratio = {row[0]: row for row in rows}
    eval_auroc = dict(
        line.split("=") for line in report_path.read_text().splitlines() if "=" in line
    )["auroc"]
    assert by_ratio["1.0"][2] == eval_auroc
    # scoring the 100x smaller bank must be faster than the full one
    assert float(by_ratio["0.02"][5]) < float(by_ratio["1.0"][5])


def test_sweep_duplicate_ratios_rejected(synth_files, tmp_path):
    support, test = synth_files
    run_cli(
        [
            "sweep",
            "--support", str(support),
            "--test", str(test),
            "--keep-ratios", "0.5,0.5",
            "--out", str(tmp_path / "x.tsv"),
        ],
        expect=2,
    )


def test_export_colors_matches_match_records(synth_files, tmp_path):
    support, test = synth_files
    bank_path = tmp_path / "bank.opbk"
    run_cli(["build", "--support", str(support), "--keep-ratio", "1.0", "--out", str(bank_path)])
    test_sets = read_embedding_sets(test)
    target = test_sets[0]
    colors = tmp_path / "colors.txt"
    run_cli(
        [
            "export-colors",
            "--bank", str(bank_path),
            "--test", str(test),
            "--sample", str(target.sample_id),
            "--out", str(colors),
        ]
    )
    lines = colors.read_text().splitlines()
    assert lines[0].startswith("#")
    records = match_patches(build_index(read_bank(bank_path)), target)
    assert len(lines) - 1 == target.patch_count
    for line, record in zip(lines[1:], records):
        cells = line.split()
        assert int(cells[3]) == record.assigned_class
        assert float(cells[4]) == pytest.approx(record.distance, abs=1e-12)


def test_export_colors_requires_anchors(synth_files, tmp_path):
    support, _ = synth_files
    rng = np.random.default_rng(1)
    bare = [SampleEmbeddingSet(0, -1, rng.standard_normal((4, 8)).astype(np.float32)),
            SampleEmbeddingSet(1, 0, rng.standard_normal((4, 8)).astype(np.float32))]
    bare_path = tmp_path / "bare.opbk"
    write_embedding_sets(bare, bare_path)
    bank_path = tmp_path / "bank.opbk"
    run_cli(["build", "--support", str(support), "--keep-ratio", "1.0", "--out", str(bank_path)])
    run_cli(
        [
            "export-colors",
            "--bank", str(bank_path),
            "--test", str(bare_path),
            "--sample", "0",
            "--out", str(tmp_path / "c.txt"),
        ],
        expect=3,
    )


def test_export_colors_unknown_sample_id(synth_files, tmp_path):
    support, test = synth_files
    bank_path = tmp_path / "bank.opbk"
    run_cli(["build", "--support", str(support), "--keep-ratio", "1.0", "--out", str(bank_path)])
    run_cli(
        [
            "export-colors",
            "--bank", str(bank_path),
            "--test", str(test),
            "--sample", "999999",
            "--out", str(tmp_path / "c.txt"),
        ],
        expect=3,
    )


def test_eval_missing_score_column(synth_files, tmp_path):
    support, test = synth_files
    bank_path = tmp_path / "bank.opbk"
    scores_path = tmp_path / "scores.tsv"
    run_cli(["build", "--support", str(support), "--keep-ratio", "1.0", "--out", str(bank_path)])
    run_cli(
        ["score", "--bank", str(bank_path), "--test", str(test), "--functions", "max",
         "--out", str(scores_path)]
    )
    run_cli(["eval", "--scores", str(scores_path), "--function", "hw"], expect=3)


def test_corrupted_input_gives_data_error(tmp_path):
    bad = tmp_path / "bad.opbk"
    bad.write_bytes(b"NOPE" + b"\x00" * 40)
    run_cli(["build", "--support", str(bad), "--out", str(tmp_path / "x.opbk")], expect=3)


def test_thread_cap_does_not_change_results(synth_files, tmp_path, monkeypatch):
    support, test = synth_files
    bank_path = tmp_path / "bank.opbk"
    run_cli(["build", "--support", str(support), "--keep-ratio", "0.5", "--out", str(bank_path)])
    outputs = []
    for threads in ("1", "4"):
        monkeypatch.setenv("OPENPATCH_THREADS", threads)
        out = tmp_path / f"scores_{threads}.tsv"
        run_cli(
            ["score", "--bank", str(bank_path), "--test", str(test), "--out", str(out)]
        )
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]


def test_bad_thread_env_is_data_error(synth_files, tmp_path, monkeypatch):
    support, test = synth_files
    bank_path = tmp_path / "bank.opbk"
    run_cli(["build", "--support", str(support), "--keep-ratio", "0.5", "--out", str(bank_path)])
    monkeypatch.setenv("OPENPATCH_THREADS", "lots")
    run_cli(
        ["score", "--bank", str(bank_path), "--test", str(test), "--out", str(tmp_path / "s.tsv")],
        expect=3,
    )


def test_manifests_differ_only_in_timing(synth_files, tmp_path):
    support, test = synth_files
    bank_path = tmp_path / "bank.opbk"
    run_cli(["build", "--support", str(support), "--keep-ratio", "1.0", "--out", str(bank_path)])
    manifests = []
    for name in ("m1.json", "m2.json"):
        run_cli(
            [
                "--manifest", str(tmp_path / name),
                "eval",
                "--bank", str(bank_path),
                "--test", str(test),
                "--functions", "hw",
            ]
        )
        manifests.append(json.loads((tmp_path / name).read_text()))
    for m in manifests:
        m.pop("started_at")
        m.pop("duration_s")
        m["argv"] = [a for a in m["argv"] if "m1" not in a and "m2" not in a]
    assert manifests[0] == manifests[1]
