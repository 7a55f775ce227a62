import json
import sys

import numpy as np
import pytest

from viewaug.cli import DEFAULT_CONFIG, contact_sheet, main, validate
from viewaug.formats import read_mask, read_pfm, read_ppm

SMALL = ["--set", "synth.width=48", "--set", "synth.height=48", "--set", "synth.frames=6"]


def report(d):
    return json.loads((d / "report.json").read_text())


@pytest.fixture(scope="module")
def capture(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "-o", str(root / "cap"), *SMALL]) == 0
    assert main(["synth", "-o", str(root / "static"), *SMALL, "--set", "synth.static=true"]) == 0
    return root


def test_synth_writes_a_complete_capture(capture):
    cap = capture / "cap"
    for name in ("frame_0005.ppm", "depth_0005.pfm", "rel_0005.pfm", "pose_0005.json", "intrinsics.json",
                 "cameras.txt", "images.txt", "points3D.txt", "tracks.txt", "scene.json", "sheet.ppm"):
        assert (cap / name).exists(), name
    d = read_pfm((cap / "depth_0002.pfm").read_bytes())
    rel = read_pfm((cap / "rel_0002.pfm").read_bytes())
    ok = d > 0
    assert np.allclose(3.2 * rel[ok] + 0.4, d[ok], atol=1e-5)
    r = report(cap)
    assert r["status"] == "ok" and r["config"]["synth"]["width"] == 48 and "seconds" in r["timings"]


def test_align_recovers_known_affine(capture, tmp_path):
    out = tmp_path / "al"
    assert main(["align", "--input", str(capture / "static"), "-o", str(out), "--set", "align.stride=1",
                 "--debug-scores"]) == 0
    r = report(out)["result"]
    # the dense-vs-sparse Chamfer score carries a few percent bias at this size
    assert abs(r["median_alpha"] - 3.2) / 3.2 < 0.06
    assert abs(r["median_beta"] - 0.4) < 0.25
    scores = json.loads((out / "scores_0000.json").read_text())
    assert len(scores["candidates"]) == 100 and scores["columns"] == ["alpha", "beta", "chamfer"]
    assert read_pfm((out / "depth_0000.pfm").read_bytes()).shape == (48, 48)


def test_curate(capture, tmp_path):
    out = tmp_path / "cu"
    assert main(["curate", "--input", str(capture / "cap"), "-o", str(out), "--set", "curate.tau=0.5"]) == 0
    r = report(out)["result"]
    masks = [read_mask((out / f"mask_{t:04d}.pgm").read_bytes()) for t in range(6)]
    assert r["ratio"] == pytest.approx(np.mean([m.mean() for m in masks]))
    assert r["kept"] == (r["ratio"] >= 0.5)
    assert json.loads((out / "curation.json").read_text())["tau"] == 0.5


def test_warp_inpaint_eval_chain(capture, tmp_path):
    wp, ip, ev = tmp_path / "wp", tmp_path / "ip", tmp_path / "ev"
    assert main(["warp", "--input", str(capture / "cap"), "-o", str(wp)]) == 0
    assert 0.5 < report(wp)["result"]["mean_coverage"] < 1.0
    assert main(["inpaint", "--input", str(wp), "-o", str(ip), "--backend", "oracle"]) == 0
    f = read_ppm((ip / "frame_0000.ppm").read_bytes())
    w = read_ppm((wp / "frame_0000.ppm").read_bytes())
    m = read_mask((wp / "mask_0000.pgm").read_bytes()).astype(bool)
    assert np.array_equal(f[m], w[m])
    assert main(["eval", "--frames", str(ip), "--reference", str(wp), "--masks", str(wp), "-o", str(ev)]) == 0
    mean = report(ev)["result"]["mean"]
    assert mean == {"psnr": "inf", "ssim": pytest.approx(1.0), "iv": 0.0,
                    "objective": pytest.approx(0.0, abs=1e-12)}


def test_augment_oracle_visits_everything(capture, tmp_path):
    out = tmp_path / "ag"
    assert main(["augment", "--input", str(capture / "cap"), "-o", str(out), "--backend", "oracle",
                 "--set", "augment.N=3"]) == 0
    r = report(out)["result"]
    assert r["entries"] == 7 and r["all_visited"] and r["videos_per_iteration"] == 2
    manifest = json.loads((out / "buffer.json").read_text())
    assert len(manifest["entries"]) == 7 and manifest["seed"] == 0


def test_augment_is_deterministic(capture, tmp_path):
    trees = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["augment", "--input", str(capture / "cap"), "-o", str(out), "--set", "augment.H=2",
                     "--set", "augment.N=2", "--seed", "5"]) == 0
        trees.append({p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*"))
                      if p.is_file() and p.name != "report.json"})
    assert trees[0].keys() == trees[1].keys() and trees[0] == trees[1]


def test_usage_and_config_errors(capture, tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main(["augment", "--no-such-flag"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 1
    assert main(["augment", "--input", str(capture / "cap"), "-o", str(tmp_path / "x"),
                 "--set", "augment.N=4"]) == 1
    assert "augment.N" in capsys.readouterr().err
    assert main(["synth", "-o", str(tmp_path / "y"), "--set", "synth.colour=1"]) == 1
    assert "synth.colour: unknown field" in capsys.readouterr().err
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"inpaint": {"window": 4, "overlap": 4}, "curate": {"mode": "odd"}}))
    assert main(["synth", "--config", str(cfg), "-o", str(tmp_path / "z")]) == 1
    err = capsys.readouterr().err
    assert "inpaint.overlap" in err and "curate.mode" in err


def test_data_and_backend_exit_codes(capture, tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["warp", "--input", str(empty), "-o", str(tmp_path / "w")]) == 2
    assert report(tmp_path / "w")["status"] == "error"
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "points3D.txt").write_text("1 0 0 1 1 2 3 0.5\n")
    for name in ("cameras.txt", "images.txt"):
        (bad / name).write_text((capture / "cap" / name).read_text())
    for p in (capture / "cap").glob("rel_*.pfm"):
        (bad / p.name).write_bytes(p.read_bytes())
    assert main(["align", "--input", str(bad), "-o", str(tmp_path / "a")]) == 3
    fail = f"extern:{sys.executable} -c 'import sys; sys.exit(9)'"
    wp = tmp_path / "wp"
    assert main(["warp", "--input", str(capture / "cap"), "-o", str(wp)]) == 0
    assert main(["inpaint", "--input", str(wp), "-o", str(tmp_path / "i"), "--backend", fail]) == 4


def test_defaults_validate_and_sheet():
    assert validate(json.loads(json.dumps(DEFAULT_CONFIG))) == []
    sheet = contact_sheet([np.zeros((4, 5, 3))] * 3 + [np.ones((4, 5))], cols=2)
    assert sheet.shape == (9, 11, 3) and sheet[4, 0, 0] == 1.0 and sheet[5, 6, 0] == 1.0
