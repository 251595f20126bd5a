import io

import numpy as np
import pytest

from pulmofuse import ensemble, metrics, morphology, nifti_io, synth
from pulmofuse.cli import read_scores, run_subcommand
from pulmofuse.errors import ValidationError
from pulmofuse.nifti_io import Volume

SCORES = "model_id,dice\n" + "".join(
    f"m{i},{d}\n" for i, d in enumerate([84.30, 85.50, 85.52, 86.55, 86.75, 86.87], 1))


def run(*argv):
    out = io.StringIO()
    code = run_subcommand([str(a) for a in argv], out)
    return code, out.getvalue()


@pytest.fixture(scope="module")
def case(tmp_path_factory):
    d = tmp_path_factory.mktemp("case")
    assert run("phantom", "--preset", "y-bifurcation", "--seed", 1, "--out-dir", d)[0] == 0
    preds = []
    for s in range(6):
        p = d / f"pred{s}.nii.gz"
        assert run("mock", d / "gt.nii.gz", p, "--seed", s, "--flip-prob", 0.3,
                   "--blobs", 1)[0] == 0
        preds.append(p)
    (d / "scores.csv").write_text(SCORES)
    return d, preds


def test_phantom_outputs(case):
    d, _ = case
    hu = nifti_io.load(d / "hu.nii.gz")
    gt = nifti_io.load(d / "gt.nii.gz")
    assert hu.element_kind == "float32" and gt.element_kind == "uint8"
    ref = synth.rasterize_phantom(synth.y_preset(seed=1))
    assert gt.data.tobytes() == ref[1].tobytes()
    assert hu.spacing == (0.5, 0.5, 0.5)


def test_info_and_validate(case):
    d, _ = case
    code, text = run("info", d / "gt.nii.gz")
    assert code == 0 and "datatype_code=2" in text.splitlines()
    code, text = run("validate", d / "gt.nii.gz")
    assert code == 0 and text.startswith("ok ")
    assert run("validate", d / "hu.nii.gz")[0] == 1


def test_bad_files_exit_2(tmp_path):
    bad = tmp_path / "bad.nii"
    bad.write_bytes(b"\0" * 400)
    assert run("info", bad)[0] == 2
    assert run("info", tmp_path / "missing.nii")[0] == 2


def test_argument_errors_exit_1():
    assert run("frobnicate")[0] == 1
    assert run()[0] == 1
    assert run("plan-patches", "--shape", "64", "--patch", "96")[0] == 1
    assert run("plan-patches", "--shape", "a,b")[0] == 1


def test_plan_patches_output():
    code, text = run("plan-patches", "--shape", "160,96,96", "--patch", "96")
    assert code == 0
    assert text.splitlines() == ["x,y,z", "0,0,0", "64,0,0"]


def test_preprocess(case, tmp_path):
    d, _ = case
    out = tmp_path / "norm.nii.gz"
    code, text = run("preprocess", d / "hu.nii.gz", out, "--clip", "-1000:1000", "--crop",
                     "--crop-record", tmp_path / "crop.json",
                     "--external-infer", "infer --in {input}")
    assert code == 0 and text.strip() == f"infer --in {out}"
    norm = nifti_io.load(out)
    assert norm.element_kind == "float32"
    assert 0 <= norm.data.min() and norm.data.max() <= 1
    assert (tmp_path / "crop.json").read_text().startswith("{")
    assert run("preprocess", d / "hu.nii.gz", out, "--clip", "5:5")[0] == 1


def test_fuse_count_mismatch(case, tmp_path):
    d, preds = case
    code = run("fuse", *preds[:5], "--scores", d / "scores.csv", "--out", tmp_path / "f.nii")[0]
    assert code == 1


def test_fuse_streaming_matches_in_memory(case, tmp_path):
    d, preds = case
    a, b = tmp_path / "a.nii.gz", tmp_path / "b.nii.gz"
    sa, sb = tmp_path / "sa.nii", tmp_path / "sb.nii"
    assert run("fuse", *preds, "--scores", d / "scores.csv", "--out", a, "--soft-out", sa)[0] == 0
    assert run("fuse", *preds, "--scores", d / "scores.csv", "--out", b, "--soft-out", sb,
               "--slab-threshold", 10, "--slab", 7)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert sa.read_bytes() == sb.read_bytes()


def test_cli_matches_library(case, tmp_path):
    d, preds = case
    fused = tmp_path / "fused.nii.gz"
    assert run("fuse", *preds, "--scores", d / "scores.csv", "--out", fused)[0] == 0
    csv_path = tmp_path / "scores.csv"
    assert run("evaluate", "--gt", d / "gt.nii.gz", "--pred", fused,
               "--regions", d / "regions.nii.gz", "--case-id", "y", "--out", csv_path)[0] == 0

    gt = nifti_io.load(d / "gt.nii.gz")
    regions = nifti_io.load(d / "regions.nii.gz").data
    maps = [nifti_io.load(p).data for p in preds]
    w = ensemble.compute_weights([84.30, 85.50, 85.52, 86.55, 86.75, 86.87])
    mask = ensemble.fuse_and_binarize(maps, w)
    assert nifti_io.load(fused).data.tobytes() == np.asfortranarray(mask).tobytes()
    report = metrics.multi_level_dice(mask, gt.data, regions, spacing=gt.spacing)
    expected = metrics.format_csv([("y", report), ("mean", report)])
    assert csv_path.read_text() == expected


def test_evaluate_identical_and_cca_report(case):
    d, _ = case
    code, text = run("evaluate", "--gt", d / "gt.nii.gz", "--pred", d / "gt.nii.gz",
                     "--cca-report")
    assert code == 0
    rows = [line.split(",") for line in text.splitlines()[1:]]
    assert [r[0] for r in rows] == ["gt", "gt/cca", "mean", "mean/cca"]
    assert all(float(v) == 1.0 for r in rows for v in r[1:])


def test_evaluate_rejects_soft_pred(case):
    d, preds = case
    assert run("evaluate", "--gt", d / "gt.nii.gz", "--pred", preds[0])[0] == 1


def test_cca_and_decompose(case, tmp_path):
    d, _ = case
    m = nifti_io.load(d / "gt.nii.gz")
    data = np.array(m.data)
    data[0:2, 0:2, 0:2] = 1
    noisy = tmp_path / "noisy.nii.gz"
    nifti_io.save(m.with_data(np.asfortranarray(data)), noisy)
    code, text = run("cca", noisy, tmp_path / "labels.nii.gz", "--connectivity", 6)
    assert code == 0 and text.splitlines()[0] == "label,size"
    assert len(text.splitlines()) == 3
    assert run("cca", noisy, tmp_path / "kept.nii.gz", "--keep-largest")[0] == 0
    kept = nifti_io.load(tmp_path / "kept.nii.gz").data
    np.testing.assert_array_equal(kept, m.data)
    assert run("decompose", d / "gt.nii.gz", tmp_path / "reg.nii.gz")[0] == 0
    reg = nifti_io.load(tmp_path / "reg.nii.gz").data
    np.testing.assert_array_equal(reg, morphology.decompose_main_vs_branches(m.data, m.spacing))


def test_project(case, tmp_path):
    d, _ = case
    out = tmp_path / "p.pgm"
    assert run("project", d / "gt.nii.gz", out, "--plane", "coronal")[0] == 0
    assert out.read_bytes().startswith(b"P5\n")
    assert run("project", d / "gt.nii.gz", out, "--plane", "oblique")[0] == 1


def test_config_file_and_flag_override(case, tmp_path):
    d, _ = case
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# defaults\npatch = 96\nstride = 64\nw-branch = 0.7\n")
    code, text = run("--config", cfg, "plan-patches", "--shape", "160,96,96")
    assert text.splitlines()[1:] == ["0,0,0", "64,0,0"]
    code, text = run("--config", cfg, "plan-patches", "--shape", "160,96,96", "--stride", 96)
    assert code == 0 and text.splitlines()[1:] == ["0,0,0", "64,0,0"]
    code, text = run("--config", cfg, "evaluate", "--gt", d / "gt.nii.gz",
                     "--pred", d / "gt.nii.gz", "--regions", d / "regions.nii.gz")
    assert code == 0
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense = 3\n")
    assert run("--config", bad, "plan-patches", "--shape", "96")[0] == 1


def test_read_scores(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text(SCORES)
    assert [d for _, d in read_scores(p)][:2] == [84.30, 85.50]
    p.write_text("m1,0.8\nm2,abc\n")
    with pytest.raises(ValidationError):
        read_scores(p)


def test_mock_roundtrip(tmp_path):
    gt = np.zeros((6, 6, 6), dtype=np.uint8)
    gt[2:4, 2:4, :] = 1
    src = tmp_path / "gt.nii"
    nifti_io.save(Volume(np.asfortranarray(gt)), src)
    assert run("mock", src, tmp_path / "m.nii")[0] == 0
    np.testing.assert_array_equal(nifti_io.load(tmp_path / "m.nii").data, gt)
