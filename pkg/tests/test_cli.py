import json
import subprocess
import sys

import numpy as np
import pytest

from vesselscale.cli import run_cli
from vesselscale.io import load_volume, save_volume
from vesselscale.phantom import generate_tree, random_tree, y_tree


@pytest.fixture(scope="module")
def masks(tmp_path_factory):
    d = tmp_path_factory.mktemp("in")
    mask, _, _ = generate_tree(y_tree())
    save_volume(mask, d / "y.nrrd")
    for seed in (1, 2):
        m, _, _ = generate_tree(random_tree(np.random.default_rng(seed), dims=(48, 48, 48), depth=2))
        save_volume(m, d / f"t{seed}.nrrd")
    return d


def _outputs(out):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "manifest.json"}


def test_decompose_outputs(masks, tmp_path):
    out = tmp_path / "out"
    assert run_cli(["decompose", "--input", str(masks / "y.nrrd"), "--m", "8", "--scales", "3",
                    "--out-dir", str(out)]) == 0
    names = set(_outputs(out))
    expected = {"y_skeleton.nrrd", "y_branches.nrrd", "y_branches.csv", "y_stats.json",
                "y_scale1.nrrd", "y_scale2.nrrd", "y_scale3.nrrd"}
    assert names == expected
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["parameters"]["m"] == 8 and manifest["parameters"]["scales"] == 3
    assert set(manifest["volumes"][0]["outputs"]) == expected
    mask = load_volume(masks / "y.nrrd")
    union = sum(load_volume(out / f"y_scale{s}.nrrd").data.astype(int) for s in (1, 2, 3))
    np.testing.assert_array_equal(union, mask.data)
    assert len((out / "y_branches.csv").read_text().splitlines()) == 4


def test_decompose_raw_format(masks, tmp_path):
    out = tmp_path / "out"
    assert run_cli(["decompose", "--input", str(masks / "y.nrrd"), "--out-dir", str(out), "--format", "raw"]) == 0
    assert (out / "y_scale1.raw").exists() and (out / "y_scale1.json").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert all((out / n).exists() for n in manifest["volumes"][0]["outputs"])


def test_decompose_resample(masks, tmp_path):
    out = tmp_path / "out"
    assert run_cli(["decompose", "--input", str(masks / "t1.nrrd"), "--out-dir", str(out),
                    "--resample", "32,32,24"]) == 0
    assert load_volume(out / "t1_branches.nrrd").dims == (32, 32, 24)


def test_decompose_is_byte_identical_across_runs_and_jobs(masks, tmp_path):
    inputs = [str(masks / n) for n in ("y.nrrd", "t1.nrrd", "t2.nrrd")]
    runs = []
    for k, jobs in enumerate(("1", "1", "3")):
        out = tmp_path / f"out{k}"
        assert run_cli(["decompose", "--input", *inputs, "--out-dir", str(out), "--jobs", jobs]) == 0
        runs.append(_outputs(out))
    assert runs[0] == runs[1] == runs[2]


def test_missing_input_is_data_error(tmp_path, capsys):
    out = tmp_path / "out"
    assert run_cli(["decompose", "--input", str(tmp_path / "missing.nrrd"), "--out-dir", str(out)]) == 1
    err = capsys.readouterr()
    assert "missing.nrrd" in err.err and err.out == ""


def test_non_mask_input_leaves_no_outputs(tmp_path):
    from vesselscale.volume import LABELS, Volume
    save_volume(Volume(np.arange(8).reshape(2, 2, 2), kind=LABELS), tmp_path / "lab.nrrd")
    out = tmp_path / "out"
    assert run_cli(["decompose", "--input", str(tmp_path / "lab.nrrd"), "--out-dir", str(out)]) == 1
    assert list(out.iterdir()) == []


@pytest.mark.parametrize("argv", [[], ["bogus"], ["decompose", "--out-dir", "x"], ["decompose", "--input", "a", "--out-dir", "x", "--m", "0"]])
def test_usage_errors(argv):
    assert run_cli(argv) == 2


def test_evaluate_identical(masks, capsys):
    p = str(masks / "y.nrrd")
    assert run_cli(["evaluate", "--gt", p, "--pred", p, "--json", "-"]) == 0
    assert capsys.readouterr().out == '{"dsc":1.0,"jacc":1.0,"cldsc":1.0,"hd_mm":0.0}\n'


def test_evaluate_csv_batch(masks, capsys):
    a, b = str(masks / "t1.nrrd"), str(masks / "t2.nrrd")
    assert run_cli(["evaluate", "--gt", a, a, "--pred", a, b, "--csv"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "gt,pred,dsc,jacc,cldsc,hd_mm"
    assert len(lines) == 3 and lines[1].endswith(",1.0,1.0,1.0,0.0")


def test_evaluate_dims_mismatch(masks, tmp_path):
    from vesselscale.volume import Volume
    save_volume(Volume(np.ones((2, 2, 2))), tmp_path / "small.nrrd")
    assert run_cli(["evaluate", "--gt", str(masks / "y.nrrd"), "--pred", str(tmp_path / "small.nrrd")]) == 1


def test_synth_then_stats(tmp_path, capsys):
    spec = {"dims": [24, 24, 40], "spacing_mm": [1, 1, 1],
            "segments": [{"start": [12, 12, 4], "end": [12, 12, 34], "radius_mm": 3.0, "id": 1}]}
    (tmp_path / "tube.json").write_text(json.dumps(spec))
    out = tmp_path / "ph"
    assert run_cli(["synth", "--spec", str(tmp_path / "tube.json"), "--out-dir", str(out)]) == 0
    assert {p.name for p in out.iterdir()} == {"tube_mask.nrrd", "tube_labels.nrrd", "tube_table.csv"}
    assert run_cli(["stats", "--input", str(out / "tube_mask.nrrd"), "--json"]) == 0
    rec = json.loads(capsys.readouterr().out)[0]
    assert rec["n_b"] == 1 and rec["volume"] == "tube_mask"
    assert run_cli(["stats", "--input", str(out / "tube_mask.nrrd")]) == 0
    assert capsys.readouterr().out.splitlines()[0].startswith("volume,n_b")


def test_synth_bad_spec(tmp_path):
    (tmp_path / "bad.json").write_text('{"dims": [4, 4, 4]}')
    assert run_cli(["synth", "--spec", str(tmp_path / "bad.json"), "--out-dir", str(tmp_path / "o")]) == 1


def test_stats_from_tables_across_jobs(masks, tmp_path):
    out = tmp_path / "out"
    inputs = [str(masks / n) for n in ("y.nrrd", "t1.nrrd", "t2.nrrd")]
    assert run_cli(["decompose", "--input", *inputs, "--out-dir", str(out)]) == 0
    tables = [str(out / f"{n}_branches.csv") for n in ("y", "t1", "t2")]
    assert run_cli(["stats", "--input", *tables, "--out", str(tmp_path / "a.csv")]) == 0
    assert run_cli(["stats", "--input", *inputs, "--out", str(tmp_path / "b.csv"), "--jobs", "2"]) == 0
    a = (tmp_path / "a.csv").read_text().splitlines()
    b = (tmp_path / "b.csv").read_text().splitlines()
    assert len(a) == 4 and a[1:] == [line.replace("_mask", "") for line in b[1:]]


def test_loss_command(tmp_path, capsys):
    doc = {"tau": 1.0, "vectors": [[1, 0], [1, 0], [0, 1]], "scales": [1, 1, 2]}
    (tmp_path / "e.json").write_text(json.dumps(doc))
    assert run_cli(["loss", "--input", str(tmp_path / "e.json"), "--gradient"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["loss"] == pytest.approx(np.log1p(np.exp(-1)), abs=1e-12)
    assert res["skipped_anchors"] == [2] and res["anchor_terms"][2] is None
    assert np.asarray(res["gradient"]).shape == (3, 2)


def test_loss_bad_json(tmp_path):
    (tmp_path / "e.json").write_text('{"vectors": [[1, 0]]}')
    assert run_cli(["loss", "--input", str(tmp_path / "e.json")]) == 1


def test_module_entry_point(masks):
    p = str(masks / "y.nrrd")
    res = subprocess.run([sys.executable, "-m", "vesselscale", "evaluate", "--gt", p, "--pred", p],
                         capture_output=True, text=True)
    assert res.returncode == 0 and json.loads(res.stdout)["dsc"] == 1.0
