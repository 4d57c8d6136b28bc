import json
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from lesionaug.cli import build_parser, run

from conftest import write_dataset

DATA = Path(__file__).parent / "data"


def subcommand_help(name):
    parser = build_parser()
    sub = next(a for a in parser._actions if hasattr(a, "choices") and a.choices)
    return sub.choices[name].format_help()


def test_help_matches_golden_file():
    sections = [build_parser().format_help()]
    for cmd in ["scenarios", "augment", "preview", "crops144", "eval", "subset"]:
        sections.append(subcommand_help(cmd))
    text = ("\n" + "=" * 72 + "\n").join(sections)
    assert text == (DATA / "cli_help.txt").read_text()


def test_scenarios_lists_all_chains(capsys):
    assert run(["scenarios"]) == 0
    out = capsys.readouterr().out
    lines = [l for l in out.strip().splitlines()]
    assert len(lines) == 13
    assert lines[0].startswith("A ") and "(identity)" in lines[0]
    assert "random_crop -> affine -> flips -> color_jitter+hue" in lines[9]  # J
    assert lines[12].startswith("M ") and "lesion_mix -> random_crop" in lines[12]


def test_augment_counts_and_determinism(tmp_path, capsys):
    manifest = write_dataset(tmp_path, 3)
    args = [
        "augment",
        "--manifest", str(manifest),
        "--scenario", "J",
        "--copies", "2",
        "--seed", "11",
        "--size", "64",
    ]
    assert run(args + ["--output", str(tmp_path / "a")]) == 0
    assert run(args + ["--output", str(tmp_path / "b")]) == 0
    pngs_a = sorted((tmp_path / "a").glob("*.png"))
    assert len(pngs_a) == 6
    for png in pngs_a:
        assert (tmp_path / "b" / png.name).read_bytes() == png.read_bytes()
    out = capsys.readouterr().out
    assert '"seed": 11' in out  # resolved config echoed


def test_augment_writes_run_config(tmp_path):
    manifest = write_dataset(tmp_path, 1)
    assert run([
        "augment", "--manifest", str(manifest), "--output", str(tmp_path / "out"),
        "--copies", "1", "--size", "64",
    ]) == 0
    config = json.loads((tmp_path / "out" / "run_config.json").read_text())
    assert config["command"] == "augment"
    assert config["seed"] == 0 and config["scenario"] == "J"


def test_preview_contact_sheet_dimensions(tmp_path):
    manifest = write_dataset(tmp_path, 2)
    assert run([
        "preview", "--manifest", str(manifest), "--output", str(tmp_path / "prev"),
        "--scenario", "H", "--grid", "2x3", "--size", "48",
    ]) == 0
    sheet = np.asarray(Image.open(tmp_path / "prev" / "preview_H.png"))
    gutter, header = 2, 16
    expected_h = header + 2 * (48 + gutter) + gutter
    expected_w = 3 * (48 + gutter) + gutter
    assert sheet.shape == (expected_h, expected_w, 3)


def test_crops144_command(tmp_path):
    manifest = write_dataset(tmp_path, 2, size=(140, 110))
    assert run([
        "crops144", "--manifest", str(manifest), "--output", str(tmp_path / "crops"),
        "--size", "64",
    ]) == 0
    files = list((tmp_path / "crops").glob("*_crop*.png"))
    assert len(files) == 2 * 144


def test_subset_command(tmp_path):
    manifest = write_dataset(tmp_path, 10)
    assert run([
        "subset", "--manifest", str(manifest), "--output", str(tmp_path / "sub"),
        "--subset-size", "4", "--seed", "9",
    ]) == 0
    lines = (tmp_path / "sub" / "subset_4.csv").read_text().strip().splitlines()
    assert len(lines) == 5 and lines[0] == "id,image,mask,label"


def test_eval_with_prediction_file(tmp_path, capsys):
    manifest = write_dataset(tmp_path, 4)
    rows = ["id,copy,probability"]
    for i in range(4):
        rows.append(f"im{i},0,{0.9 if i % 2 else 0.1}")
    (tmp_path / "preds.csv").write_text("\n".join(rows) + "\n")
    assert run([
        "eval", "--manifest", str(manifest), "--output", str(tmp_path / "ev"),
        "--mode", "original", "--predictions", str(tmp_path / "preds.csv"),
        "--size", "64",
    ]) == 0
    report = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert report["auc"] == 1.0 and report["mode"] == "original"


def test_eval_with_external_predictor(tmp_path):
    manifest = write_dataset(tmp_path, 4)
    cmd = f"{sys.executable} {DATA / 'brightness_predictor.py'}"
    assert run([
        "eval", "--manifest", str(manifest), "--output", str(tmp_path / "ev"),
        "--mode", "tta", "--scenario", "A", "--copies", "2",
        "--predictor", cmd, "--size", "48",
    ]) == 0
    report = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert report["n_samples"] == 4 and report["copies"] == 2


# ---------------------------------------------------------------------------
# exit codes
# ---------------------------------------------------------------------------


def test_unknown_flag_exits_one(capsys):
    with pytest.raises(SystemExit) as exc:
        run(["augment", "--manifest", "m.csv", "--output", "o", "--bogus"])
    assert exc.value.code == 1


def test_missing_required_flag_exits_one():
    with pytest.raises(SystemExit) as exc:
        run(["augment", "--output", "o"])
    assert exc.value.code == 1


def test_validation_error_returns_one(tmp_path, capsys):
    manifest = write_dataset(tmp_path, 3)
    code = run([
        "subset", "--manifest", str(manifest), "--output", str(tmp_path / "s"),
        "--subset-size", "99",
    ])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_malformed_manifest_returns_one(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,image,mask,label\nx,a.png,,7\n")
    code = run(["augment", "--manifest", str(bad), "--output", str(tmp_path / "o")])
    assert code == 1


def test_predictor_failure_returns_two(tmp_path, capsys):
    manifest = write_dataset(tmp_path, 4)
    code = run([
        "eval", "--manifest", str(manifest), "--output", str(tmp_path / "ev"),
        "--mode", "original", "--size", "48",
        "--predictor", f"{sys.executable} -c \"import sys; sys.exit(3)\"",
    ])
    assert code == 2
    assert "error" in capsys.readouterr().err
